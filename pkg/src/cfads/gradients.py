"""Derivatives of counterfactual expectations with respect to policy
parameters of the reserve multiplier law (scale rho, spread sigma).

The reweighting formulation makes these expectations differentiable even
though each simulated outcome is piecewise constant: derivatives of the
weight are the weight times the score function of the target density, and
second derivatives add the log-density Hessian term (which vanishes across
parameters of distinct factors, but not here where both parameters belong
to the one multiplier factor).

On-policy gradients (target equals logging policy, weights identically
one) subtract a variance-optimal constant baseline per coordinate.  The
capped variants follow the off-policy convention: weights capped at R stay
differentiable wherever the cap is inactive, giving ascent directions for
the clipped estimate and for the captured mass simultaneously.
"""

from __future__ import annotations

import numpy as np

from . import lognormal

__all__ = [
    "target_scores",
    "target_log_hessian",
    "counterfactual_gradient",
    "counterfactual_hessian",
    "policy_gradient",
    "capped_bound_gradients",
]


def target_scores(m, rho, sigma):
    """(n, 2) array of d log q(m; rho, sigma) / d(rho, sigma)."""
    m = np.asarray(m, dtype=float)
    return np.stack([lognormal.dlogpdf_dscale(m, rho, sigma),
                     lognormal.dlogpdf_dspread(m, rho, sigma)], axis=1)


def target_log_hessian(m, rho, sigma):
    """(n, 2, 2) array of second derivatives of the log density."""
    m = np.asarray(m, dtype=float)
    h = np.empty((m.size, 2, 2))
    h[:, 0, 0] = lognormal.d2logpdf_dscale2(m, rho, sigma)
    h[:, 0, 1] = h[:, 1, 0] = lognormal.d2logpdf_dscale_dspread(m, rho, sigma)
    h[:, 1, 1] = lognormal.d2logpdf_dspread2(m, rho, sigma)
    return h


def counterfactual_gradient(values, weights, m, rho_star, sigma_star,
                            predictions=None):
    """Gradient of the reweighted expectation at the target parameters.

    values, weights, m: per-record outcome, weight q/p, and logged
    multiplier.  Returns (grad (2,), se (2,)): sample means and standard
    errors of the per-record integrand (l - zeta) w s.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    zeta = 0.0 if predictions is None else np.asarray(predictions, float)
    s = target_scores(m, rho_star, sigma_star)
    integrand = (values - zeta)[:, None] * weights[:, None] * s
    n = values.size
    grad = np.sum(integrand, axis=0) / n
    se = np.sqrt(np.maximum(np.sum((integrand - grad) ** 2, axis=0), 0.0)
                 / (n - 1)) / np.sqrt(n)
    return grad, se


def counterfactual_hessian(values, weights, m, rho_star, sigma_star,
                           predictions=None):
    """Hessian of the reweighted expectation at the target parameters.

    Integrand (l - zeta) w (s s^T + d2 log q); returns (hess (2,2),
    se (2,2)).
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    zeta = 0.0 if predictions is None else np.asarray(predictions, float)
    s = target_scores(m, rho_star, sigma_star)
    outer = s[:, :, None] * s[:, None, :] + target_log_hessian(m, rho_star, sigma_star)
    integrand = ((values - zeta) * weights)[:, None, None] * outer
    n = values.size
    hess = np.sum(integrand, axis=0) / n
    se = np.sqrt(np.maximum(np.sum((integrand - hess) ** 2, axis=0), 0.0)
                 / (n - 1)) / np.sqrt(n)
    return hess, se


def policy_gradient(values, m, rho, sigma):
    """On-policy gradient with the variance-optimal constant baseline.

    For each coordinate j the baseline is E[l s_j^2]/E[s_j^2]; returns
    (grad (2,), se (2,), baseline (2,)).
    """
    values = np.asarray(values, dtype=float)
    s = target_scores(m, rho, sigma)
    n = values.size
    s2 = s * s
    denom = np.sum(s2, axis=0)
    baseline = np.where(denom > 0, np.sum(values[:, None] * s2, axis=0)
                        / np.where(denom > 0, denom, 1.0), 0.0)
    integrand = (values[:, None] - baseline[None, :]) * s
    grad = np.sum(integrand, axis=0) / n
    se = np.sqrt(np.maximum(np.sum((integrand - grad) ** 2, axis=0), 0.0)
                 / (n - 1)) / np.sqrt(n)
    return grad, se, baseline


def capped_bound_gradients(values, weights, m, rho_star, sigma_star,
                           clip_level):
    """Value and derivatives of the capped estimate and captured mass.

    Weights are capped at clip_level; the derivative of a capped weight is
    w s where the cap is inactive (w < clip_level) and zero where active.
    Returns a dict with point/mass and their gradients plus standard
    errors, the raw material for lower-bound ascent over (rho*, sigma*).
    """
    values = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    capped = np.minimum(w, clip_level)
    live = (w < clip_level).astype(float)
    s = target_scores(m, rho_star, sigma_star)
    n = values.size
    dw = (w * live)[:, None] * s
    gy = values[:, None] * dw
    point = float(np.sum(values * capped) / n)
    mass = float(np.sum(capped) / n)

    def mean_se(x):
        mu = np.sum(x, axis=0) / n
        se = np.sqrt(np.maximum(np.sum((x - mu) ** 2, axis=0), 0.0)
                     / (n - 1)) / np.sqrt(n)
        return mu, se

    dY, dY_se = mean_se(gy)
    dW, dW_se = mean_se(dw)
    return dict(point=point, mass=mass, dY=dY, dY_se=dY_se,
                dW=dW, dW_se=dW_se)
