"""
One adversarial + softlabel training run on the synthetic benchmark.

Prints the per-epoch log (domain loss, confusion entropy, softlabel loss,
dev UAR), the eval UAR and the domain probe accuracy of the final encoder,
next to a source + target baseline trained with the same seed.
"""

import math

from emoda.data import SplitSpec, make_splits
from emoda.harness import load_samples, synthetic_benchmark_spec
from emoda.metrics import evaluate
from emoda.model import ModelBundle
from emoda.trainer import TrainConfig, domain_probe_auc, train

spec = synthetic_benchmark_spec()
source, target = load_samples(spec)
train_t, dev_t, eval_t = make_splits(target, SplitSpec(run_index=0))

for mode in ("source_plus_target", "adversarial_softlabel"):
    cfg = TrainConfig(**{**spec.train.__dict__, "mode": mode})
    model = ModelBundle(spec.model, seed=0)
    _, log = train(model, source, train_t, dev_t, cfg)
    print(f"\n{mode}")
    print(" epoch   l_d    l_conf  l_soft  dev_uar")
    for r in log.records[::5]:
        cells = ["  -  " if math.isnan(v) else f"{v:.3f}" for v in (r.l_d, r.l_conf, r.l_soft)]
        print(f"{r.epoch:6d}  " + "  ".join(cells) + f"   {r.dev_uar:.3f}")
    print("selected epoch", log.selected_epoch)
    print("eval UAR", round(evaluate(model, eval_t).uar, 3),
          "probe accuracy", round(domain_probe_auc(model, source, eval_t, seed=0), 3))
