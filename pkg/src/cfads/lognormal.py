"""Mean-parametrized log-normal law used for score randomization.

A multiplier ``m`` is drawn as ``m = scale * exp(-spread**2/2 + spread*eps)``
with ``eps`` standard normal, so that ``log m ~ N(log scale - spread**2/2,
spread**2)`` and ``E[m] = scale`` exactly.  All densities, distribution
functions and parameter derivatives used by the estimators and the gradient
machinery live here.
"""

import numpy as np
from scipy.special import ndtr, ndtri

__all__ = [
    "sample",
    "logpdf",
    "pdf",
    "cdf",
    "interval_mass",
    "dlogpdf_dscale",
    "dlogpdf_dspread",
    "d2logpdf_dscale2",
    "d2logpdf_dspread2",
    "d2logpdf_dscale_dspread",
]


def sample(scale, spread, eps):
    """Transform standard-normal draws ``eps`` into multipliers."""
    return scale * np.exp(-0.5 * spread * spread + spread * np.asarray(eps))


def _z(m, scale, spread):
    # standardized residual of log m
    return (np.log(m) - np.log(scale) + 0.5 * spread * spread) / spread


def logpdf(m, scale, spread):
    m = np.asarray(m, dtype=float)
    z = _z(m, scale, spread)
    return -np.log(m) - np.log(spread) - 0.5 * np.log(2.0 * np.pi) - 0.5 * z * z


def pdf(m, scale, spread):
    return np.exp(logpdf(m, scale, spread))


def cdf(m, scale, spread):
    """P{multiplier <= m}; accepts 0 and +inf endpoints."""
    m, scale, spread = np.broadcast_arrays(
        np.asarray(m, dtype=float), np.asarray(scale, dtype=float),
        np.asarray(spread, dtype=float))
    out = np.empty(m.shape, dtype=float)
    pos = m > 0.0
    fin = pos & np.isfinite(m)
    out[~pos] = 0.0
    out[pos & ~np.isfinite(m)] = 1.0
    if np.any(fin):
        out[fin] = ndtr(_z(m[fin], scale[fin], spread[fin]))
    return out if out.ndim else float(out)


def interval_mass(lo, hi, scale, spread):
    """Probability mass the law places on the interval (lo, hi]."""
    return cdf(hi, scale, spread) - cdf(lo, scale, spread)


def quantile(q, scale, spread):
    return np.exp(np.log(scale) - 0.5 * spread * spread + spread * ndtri(q))


# Parameter derivatives of the log density.  With d = log m - log scale
# + spread**2/2 the log density is
#   -log m - log spread - log(2 pi)/2 - d**2 / (2 spread**2)
# and everything below follows by direct differentiation.

def _d(m, scale, spread):
    return np.log(np.asarray(m, dtype=float)) - np.log(scale) + 0.5 * spread * spread


def dlogpdf_dscale(m, scale, spread):
    return _d(m, scale, spread) / (scale * spread * spread)


def dlogpdf_dspread(m, scale, spread):
    d = _d(m, scale, spread)
    return -1.0 / spread - d / spread + d * d / spread ** 3


def d2logpdf_dscale2(m, scale, spread):
    d = _d(m, scale, spread)
    return -(1.0 + d) / (scale * scale * spread * spread)


def d2logpdf_dspread2(m, scale, spread):
    d = _d(m, scale, spread)
    s = spread
    # derivative of -1/s - d/s + d^2/s^3 with ds/dsigma contribution dd/ds = s
    return 1.0 / s ** 2 - 1.0 + d / s ** 2 + 2.0 * d / s ** 2 - 3.0 * d * d / s ** 4


def d2logpdf_dscale_dspread(m, scale, spread):
    d = _d(m, scale, spread)
    s = spread
    return (s * s - 2.0 * d) / (scale * s ** 3)
