"""Shared test oracles, independent of the library's own differentiation."""

import numpy as np


def numeric_gradient(f, x, h=1e-5):
    """Central-difference gradient of scalar-valued f() w.r.t. array x.

    Mutates x entry by entry and calls f afresh each time, so f must read
    the live array.
    """
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        fp = f()
        flat[i] = saved - h
        fm = f()
        flat[i] = saved
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(analytic, numeric, floor=1e-6):
    """Max |a - n| normalized by the largest gradient magnitude.

    Non-finite gradients report as inf so they can never hide inside a
    running max().
    """
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = max(float(np.abs(numeric).max(initial=0.0)), float(np.abs(analytic).max(initial=0.0)), floor)
    err = float(np.abs(analytic - numeric).max(initial=0.0)) / scale
    return err if np.isfinite(err) else float("inf")
