"""
The four loss terms on toy logits.

Shows where confusion entropy peaks, how a softlabel table is averaged from
source predictions, and why the tempered distribution is flatter than the
raw one.
"""

import math

import numpy as np

from emoda.data import EMOTIONS
from emoda.harness import load_samples, synthetic_benchmark_spec
from emoda.losses import (LossWeights, build_softlabel_table, confusion_entropy, domain_ce_loss, emotion_ce_loss,
                          softlabel_loss, total_loss)
from emoda.model import ModelBundle
from emoda.tensor import Tensor

# Confusion entropy is largest (ln 2) when the domain classifier cannot decide.
for gap in (0.0, 0.5, 2.0, 6.0):
    h = confusion_entropy(Tensor(np.array([[gap, 0.0]]))).item()
    print(f"domain logit gap {gap:3.1f}: entropy {h:.4f}  (ln2 = {math.log(2):.4f})")

logits = Tensor(np.array([[2.0, -1.0], [0.5, 0.3]]))
print("domain CE on two samples", round(domain_ce_loss(logits, [0, 1]).item(), 4))

spec = synthetic_benchmark_spec()
source, target = load_samples(spec)
model = ModelBundle(spec.model, seed=0)

# The per-class table is a mean of softened source predictions, so even an
# untrained model gives each row a full distribution.
for tau in (1.0, 2.0, 5.0):
    table = build_softlabel_table(model, source, tau)
    print(f"tau {tau}: row for {EMOTIONS[0]:7s}", np.round(table.table[0], 3))

table = build_softlabel_table(model, source, 2.0)
z = Tensor(np.random.default_rng(1).standard_normal((4, 4)))
y = np.arange(4)
emo = emotion_ce_loss(z, y)
soft = softlabel_loss(z, y, table)
conf = confusion_entropy(Tensor(np.zeros((4, 2))))
print("L_emo", round(emo.item(), 4), "L_soft", round(soft.item(), 4))
print("total, weights (1, 1):", round(total_loss(emo, conf, soft, LossWeights(1.0, 1.0)).item(), 4))
print("total, weights (0, 0):", round(total_loss(emo, conf, soft, LossWeights(0.0, 0.0)).item(), 4))
