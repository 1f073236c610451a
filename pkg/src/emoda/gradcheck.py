"""
Central finite-difference gradient checking.

The comparison metric is the norm-wise relative error

    ||analytic - numeric|| / max(||analytic||, ||numeric||)

taken over the checked coordinates of one tensor.  It stays meaningful when
individual gradient entries are (near) zero, where an element-wise ratio is
dominated by rounding noise.
"""

from dataclasses import dataclass

import numpy as np


def numerical_gradient(f, tensor, h=1e-5, coords=None):
    """Central differences of scalar ``f()`` w.r.t. ``tensor.data`` at flat ``coords``."""
    flat = tensor.data.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    out = []
    for i in coords:
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f().data)
        flat[i] = orig - h
        fm = float(f().data)
        flat[i] = orig
        out.append((fp - fm) / (2.0 * h))
    return np.array(out)


def relative_error(analytic, numeric, floor=1e-12):
    analytic = np.ravel(analytic)
    numeric = np.ravel(numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < floor:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


@dataclass
class GradcheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self):
        return self.error <= self.tolerance


def check_gradients(f, tensors, h=1e-5, max_coords=None, rng=None):
    """
    Compare autodiff against central differences for each tensor in ``tensors``.

    ``f`` rebuilds the scalar graph from the tensors' current data on every
    call.  With ``max_coords``, a random subset of that many coordinates per
    tensor is checked.  Returns ``{index: relative error}``.
    """
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    f().backward()
    errors = {}
    for i, t in enumerate(tensors):
        analytic = np.zeros(t.size) if t.grad is None else t.grad.reshape(-1)
        if max_coords is not None and t.size > max_coords:
            rng = rng or np.random.default_rng(0)
            coords = np.sort(rng.choice(t.size, size=max_coords, replace=False))
        else:
            coords = np.arange(t.size)
        numeric = numerical_gradient(f, t, h=h, coords=coords)
        errors[i] = relative_error(analytic[coords], numeric)
    return errors
