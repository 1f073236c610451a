"""
Reverse-mode autodiff on float64 arrays, checked against central differences.

Builds a tiny conv -> GRU -> linear pipeline by hand, backpropagates a scalar
loss through it, then runs the packaged finite-difference suite.
"""

import numpy as np

from emoda import tensor as T
from emoda.checks import run_suite
from emoda.gradcheck import check_gradients

rng = np.random.default_rng(0)

# A 5-channel, 12-step sequence through a width-3 conv and a 4-unit GRU.
x = T.Tensor(rng.standard_normal((5, 12)))
kernels = T.Tensor(rng.standard_normal((6, 5, 3)) * 0.3, requires_grad=True)
bias = T.Tensor(np.zeros(6), requires_grad=True)
gru_w = [T.Tensor(rng.standard_normal(s) * 0.3, requires_grad=True)
         for s in [(4, 6)] * 3 + [(4, 4)] * 3]
gru_b = [T.Tensor(np.zeros(4), requires_grad=True) for _ in range(3)]


def loss():
    h = T.conv1d(x, kernels, bias)
    out = T.gru(T.transpose(h), T.Tensor(np.zeros(4)), *gru_w, *gru_b)
    return T.sum_(T.mul(out, out))


value = loss()
value.backward()
print("loss", round(value.item(), 6))
print("dL/dkernels norm", np.linalg.norm(kernels.grad))

errors = check_gradients(loss, [kernels, gru_w[0]], max_coords=40, rng=rng)
print("finite-difference relative error per tensor", {k: f"{v:.2e}" for k, v in errors.items()})

print()
for r in run_suite(instances=3):
    print(f"{'PASS' if r.passed else 'FAIL'} {r.name:24s} worst {r.worst_error:.1e} (tol {r.tolerance:.0e})")
