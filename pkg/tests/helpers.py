"""Shared test utilities: precision switching and finite-difference oracles.

The finite-difference side is always evaluated in float64 (layers and
models expose exact-valued float64 twins), with two step sizes per
component and the better match kept; single-precision analytic gradients
are compared against that double-precision numeric reference.
"""

import contextlib

import numpy as np

from minmt import tensor

FD_STEPS = (1e-3, 1e-5)


@contextlib.contextmanager
def dtype(name):
    old = "float64" if tensor.default_dtype() == np.float64 else "float32"
    tensor.set_default_dtype(name)
    try:
        yield
    finally:
        tensor.set_default_dtype(old)


def rel_err(a, b, floor=1e-12):
    return abs(a - b) / max(abs(a), abs(b), floor)


def directional_rel_err(loss_fn, arr, analytic, direction, hs=FD_STEPS):
    """Best central-difference match for one direction through arr.

    loss_fn re-evaluates the scalar loss after arr is mutated in place.
    """
    d = direction / np.linalg.norm(direction)
    ana = float((np.asarray(analytic, dtype=np.float64) * d).sum())
    orig = arr.copy()
    best = np.inf
    for h in hs:
        arr[:] = orig + h * d
        up = loss_fn()
        arr[:] = orig - h * d
        down = loss_fn()
        num = (up - down) / (2.0 * h)
        best = min(best, rel_err(ana, num))
    arr[:] = orig
    return best


def block_rel_err(loss_fn, arr, analytic, sample=None, rng=None, hs=FD_STEPS):
    """Norm-relative error between analytic and numeric gradients.

    Checks every component, or `sample` random components when given.
    Returns max|analytic - numeric| / max(inf-norms).
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    flat = arr.reshape(-1)
    idxs = np.arange(flat.size)
    if sample is not None and sample < flat.size:
        idxs = rng.choice(flat.size, size=sample, replace=False)
    numeric = np.zeros(flat.size)
    worst_abs = 0.0
    for i in idxs:
        orig = flat[i]
        best_num, best_gap = 0.0, np.inf
        for h in hs:
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            num = (up - down) / (2.0 * h)
            gap = abs(num - analytic.reshape(-1)[i])
            if gap < best_gap:
                best_gap, best_num = gap, num
        flat[i] = orig
        numeric[i] = best_num
        worst_abs = max(worst_abs, best_gap)
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return worst_abs / scale


def weighted_sum_loss(y, weights):
    """Scalar loss sum(weights * y) whose gradient wrt y is `weights`."""
    return float((weights * y).sum())
