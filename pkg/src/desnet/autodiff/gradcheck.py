"""Central finite-difference gradient checks."""

import numpy as np


def numeric_grad(fn, arrays, index, h=1e-5):
    """Finite-difference gradient of scalar ``fn(*arrays)`` w.r.t. ``arrays[index]``."""
    x = arrays[index]
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = float(fn(*arrays))
        flat[i] = old - h
        fm = float(fn(*arrays))
        flat[i] = old
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_error(analytic, numeric, floor=1e-6):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_gradients(build, arrays, h=1e-5, floor=1e-6, indices=None):
    """Compare autodiff and finite-difference gradients.

    ``build(*tensors)`` must return a scalar ``Tensor``; ``arrays`` are float64
    inputs, each wrapped as a leaf requiring grad.  Returns the worst
    relative error over the checked inputs.
    """
    from desnet.autodiff.tensor import Tensor

    indices = range(len(arrays)) if indices is None else indices
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    build(*leaves).backward()

    def scalar(*arrs):
        return build(*[Tensor(a) for a in arrs]).item()

    worst = 0.0
    work = [a.copy() for a in arrays]
    for i in indices:
        num = numeric_grad(scalar, work, i, h)
        worst = max(worst, max_rel_error(leaves[i].grad, num, floor))
    return worst
