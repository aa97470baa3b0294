"""Concentration bounds for importance-weighted means.

Two interchangeable outer-deviation bounds are provided: a CLT normal
approximation and an empirical Bernstein bound that is valid at finite n
for bounded variables.  Both consume the unbiased sample variance.  The
inner-slack helpers bound how much probability mass weight clipping
discards, either as a scalar or pointwise against envelopes that depend on
invariant record attributes.  Uniform (simultaneous over a parameter grid)
widths support a finite union bound or a covering-number argument with the
caller supplying the covering-number growth.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

__all__ = [
    "erfinv",
    "sample_variance",
    "clt_halfwidth",
    "bernstein_halfwidth",
    "inner_slack",
    "envelope_inner_bounds",
    "uniform_halfwidths",
]

_SQRT_PI = float(np.sqrt(np.pi))


def erfinv(x):
    """Inverse error function.

    Winitzki's approximation refined by Newton steps on erf; accurate to a
    few ulps over (-1, 1).
    """
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) >= 1.0):
        raise ValueError("erfinv argument must lie in (-1, 1)")
    a = 0.147
    ln1 = np.log1p(-x * x)
    t = 2.0 / (np.pi * a) + 0.5 * ln1
    y = np.sign(x) * np.sqrt(np.sqrt(t * t - ln1 / a) - t)
    for _ in range(3):
        err = erf(y) - x
        y = y - err * 0.5 * _SQRT_PI * np.exp(y * y)
    return y if y.ndim else float(y)


def sample_variance(x):
    """Unbiased sample variance via a fixed-order pairwise reduction."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        return 0.0
    mean = np.sum(x) / n
    return float(np.sum((x - mean) ** 2) / (n - 1))


def clt_halfwidth(x, delta, variance_correction=False, range_width=None):
    """Normal-approximation deviation bound for the mean of samples x.

    Half-width erfinv(1-delta) * sqrt(2 V / n).  With
    ``variance_correction`` the sample standard deviation is inflated by
    the finite-sample deviation term range * sqrt(2 log(2/delta)/(n-1)),
    making the width valid without asymptotics on the variance estimate
    (range_width must then bound the sample range).
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("need at least two samples")
    sd = np.sqrt(sample_variance(x))
    if variance_correction:
        if range_width is None:
            raise ValueError("variance_correction requires range_width")
        sd = sd + range_width * np.sqrt(2.0 * np.log(2.0 / delta) / (n - 1))
    return float(erfinv(1.0 - delta) * np.sqrt(2.0) * sd / np.sqrt(n))


def bernstein_halfwidth(x, range_width, delta):
    """Empirical Bernstein deviation bound for the mean of bounded samples.

    sqrt(2 V log(2/delta) / n) + range * 7 log(2/delta) / (3 (n-1)).
    Valid for samples confined to an interval of length ``range_width``.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("need at least two samples")
    L = np.log(2.0 / delta)
    v = sample_variance(x)
    return float(np.sqrt(2.0 * v * L / n) + range_width * 7.0 * L / (3.0 * (n - 1)))


def inner_slack(wbar, clip_level, delta):
    """Deviation bound for the clipped-weight mass estimate.

    The clipped weights live in [0, clip_level]; the returned slack is the
    empirical Bernstein half-width of their mean.
    """
    return bernstein_halfwidth(wbar, clip_level, delta)


def envelope_inner_bounds(wbar, lo_env, hi_env, clip_level, delta):
    """Two-sided bound on the mass lost to clipping, weighted by envelopes.

    For an integrand confined pointwise to [lo_env(u), hi_env(u)] with u
    invariant attributes, the unobserved clipped contribution lies in
    [mean((1-wbar) lo_env) - slack_lo, mean((1-wbar) hi_env) + slack_hi],
    each side holding with probability 1-delta.
    """
    wbar = np.asarray(wbar, dtype=float)
    lo_env = np.broadcast_to(np.asarray(lo_env, dtype=float), wbar.shape)
    hi_env = np.broadcast_to(np.asarray(hi_env, dtype=float), wbar.shape)
    n = wbar.size
    rest = 1.0 - wbar
    lo_samples = rest * lo_env
    hi_samples = rest * hi_env
    slack_lo = bernstein_halfwidth(lo_samples, np.max(np.abs(lo_env)) * clip_level, delta)
    slack_hi = bernstein_halfwidth(hi_samples, np.max(np.abs(hi_env)) * clip_level, delta)
    b_lo = float(np.sum(lo_samples) / n) - slack_lo
    b_hi = float(np.sum(hi_samples) / n) + slack_hi
    return b_lo, b_hi


def uniform_halfwidths(values, weights, clip_levels, range_bound, delta,
                       mode="finite_grid", covering_fn=None):
    """Deviation widths valid simultaneously over a grid of G policies.

    ``values``: (G, n) clipped weighted integrand samples per grid point.
    ``weights``: (G, n) clipped weights.  ``clip_levels``: (G,).
    Returns (eps, xi) arrays of shape (G,).

    finite_grid: union bound, each point evaluated at delta / (2 G).
    covering_number: width sqrt(18 V log(M/delta)/n) + range * 15
    log(M/delta)/(n-1) with M = 10 * covering_fn(2 n) the caller-supplied
    covering-number growth of the weighted function family; needs n >= 16.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    G, n = values.shape
    clip_levels = np.broadcast_to(np.asarray(clip_levels, dtype=float), (G,))
    if mode == "finite_grid":
        d_eff = delta / (2.0 * G)
        eps = np.array([bernstein_halfwidth(values[g], range_bound * clip_levels[g], d_eff)
                        for g in range(G)])
        xi = np.array([inner_slack(weights[g], clip_levels[g], d_eff)
                       for g in range(G)])
        return eps, xi
    if mode == "covering_number":
        if covering_fn is None:
            raise ValueError("covering_number mode needs covering_fn")
        if n < 16:
            raise ValueError("covering_number bound requires n >= 16")
        M = 10.0 * float(covering_fn(2 * n))
        L = np.log(M / delta)

        def width(samples, rng_w):
            v = sample_variance(samples)
            return np.sqrt(18.0 * v * L / n) + rng_w * 15.0 * L / (n - 1)

        eps = np.array([width(values[g], range_bound * clip_levels[g]) for g in range(G)])
        xi = np.array([width(weights[g], clip_levels[g]) for g in range(G)])
        return eps, xi
    raise ValueError(f"unknown mode {mode!r}")
