"""SmoothMax-Greenshields fundamental diagram."""

from __future__ import annotations

import numpy as np


def smooth_max(a, b, beta: float):
    """Log-sum-exp smooth maximum ``log(exp(beta*a) + exp(beta*b)) / beta``.

    Evaluated as ``max(a, b) + log1p(exp(-beta*|a - b|)) / beta`` so large
    ``beta`` or large arguments cannot overflow.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.maximum(a, b) + np.log1p(np.exp(-beta * np.abs(a - b))) / beta


def softplus(t):
    t = np.asarray(t, dtype=float)
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def v_max_of_rho(fd, rho):
    """Congestion-limited airspeed; clipping is applied after the smooth max."""
    rho = np.asarray(rho, dtype=float)
    free_flow = fd.v_max0 * (1.0 - rho / fd.rho_jam)
    return np.clip(smooth_max(fd.v_min, free_flow, fd.beta), fd.clip_lo, fd.clip_hi)
