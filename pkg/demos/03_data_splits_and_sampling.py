"""
Synthetic shifted corpus, the 10/40/50 target protocol and balanced batches.
"""

import numpy as np

from emoda.data import EMOTIONS, SOURCE, BalancedSampler, SplitSpec, SynthConfig, generate_synthetic, make_splits

cfg = SynthConfig.small(source_counts=(200, 60, 120, 20), target_counts=(100, 100, 100, 100), domain_shift=3.0)
samples = generate_synthetic(cfg)
source = [s for s in samples if s.domain == SOURCE]
target = [s for s in samples if s.domain != SOURCE]

mean_src = np.mean([s.acoustic.mean(axis=0) for s in source], axis=0)
mean_tgt = np.mean([s.acoustic.mean(axis=0) for s in target], axis=0)
print("acoustic mean gap between domains", np.round(np.linalg.norm(mean_tgt - mean_src), 3))
print("source counts", dict(zip(EMOTIONS, np.bincount([s.emotion for s in source], minlength=4))))

for run in range(3):
    tr, dev, ev = make_splits(target, SplitSpec(run_index=run))
    print(f"run {run}: train {len(tr)} dev {len(dev)} eval {len(ev)}; first train ids",
          [s.id for s in tr[:3]])

# Inverse-frequency weights flatten the skewed source classes inside each half.
tr, _, _ = make_splits(target, SplitSpec())
sampler = BalancedSampler(np.array([s.emotion for s in source]), np.array([s.emotion for s in tr]), 32, seed=0)
drawn = np.concatenate([s for s, _ in sampler.batches(2000)])
freq = np.bincount(np.array([s.emotion for s in source])[drawn], minlength=4) / len(drawn)
print("drawn source class frequencies", dict(zip(EMOTIONS, np.round(freq, 3))))
