"""Time quadrature helpers shared by the propagator and Bloch modules."""
from __future__ import annotations

import numpy as np
from scipy.special import roots_legendre

_GL_X, _GL_W = roots_legendre(10)


def exp_integrals(rates, t_points, max_phase=2.0):
    """I[j, k] = int_0^{t_k} exp(rates[j] s) ds by composite Gauss-Legendre.

    Each interval between consecutive output times is split so that
    |rate| * h <= max_phase on every panel; ten nodes per panel then give
    close to machine precision.
    """
    lam = np.asarray(rates, dtype=complex)
    t = np.asarray(t_points, dtype=float)
    if np.any(np.diff(t) < 0) or (t.size and t[0] < 0):
        raise ValueError("t_points must be non-negative and non-decreasing")
    lam_max = float(np.max(np.abs(lam))) if lam.size else 0.0
    out = np.zeros((lam.size, t.size), dtype=complex)
    acc = np.zeros(lam.size, dtype=complex)
    prev = 0.0
    for k, tk in enumerate(t):
        span = tk - prev
        if span > 0:
            panels = max(1, int(np.ceil(lam_max * span / max_phase)))
            edges = np.linspace(prev, tk, panels + 1)
            half = 0.5 * np.diff(edges)
            mid = 0.5 * (edges[1:] + edges[:-1])
            s = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
            w = (half[:, None] * _GL_W[None, :]).ravel()
            for lo in range(0, s.size, 4096):
                acc = acc + np.exp(np.outer(lam, s[lo:lo + 4096])) @ w[lo:lo + 4096]
        out[:, k] = acc
        prev = tk
    return out


def cumulative_trapezoid(y, h, axis=0):
    """Running trapezoid integral with a leading zero, along ``axis``."""
    y = np.moveaxis(np.asarray(y), axis, 0)
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * h * (y[1:] + y[:-1]), axis=0)
    return np.moveaxis(out, 0, axis)


def simpson_weights(n, h):
    """Composite Simpson weights on n (odd) equally spaced nodes."""
    if n < 3 or n % 2 == 0:
        raise ValueError("Simpson's rule needs an odd number of nodes >= 3")
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * h / 3.0
