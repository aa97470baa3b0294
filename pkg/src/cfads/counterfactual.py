"""Counterfactual estimation from randomized logs.

Importance weights reweight logged records as if a different randomization
law had produced them.  Score-level weights are density ratios of the
reserve multiplier; slate-level weights are ratios of the probability mass
each law puts on the record's slate stability interval, which is never
smaller and usually far less dispersed.  Weights are clipped: a weight at
or above the clip level is zeroed, the default clip level being the fifth
largest observed weight.  Point estimates come with an outer deviation
interval for the clipped quantity and an inner interval accounting for the
clipped-away mass, combined into one final confidence interval.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import bounds, lognormal
from .world import LogBatch, World

__all__ = [
    "score_weights", "slate_weights", "resolve_clip", "clip_weights",
    "CounterfactualEstimate", "estimate", "estimate_difference",
    "doubly_robust", "pointwise_extrapolate", "Predictor",
    "InvalidPredictorError", "QUANTITIES", "quantity_values",
]


class InvalidPredictorError(ValueError):
    """Predictor depends on record fields that the reweighting perturbs."""


# quantity name -> (extractor, default range bound M)
QUANTITIES = {
    "clicks": (lambda b: b.y.astype(float), 4.0),
    "mainline_count": (lambda b: b.nml.astype(float), 2.0),
    "revenue": (lambda b: b.z, None),
    "revenue_bid": (lambda b: b.z_bid, None),
    "ad_value": (lambda b: b.ad_value(), None),
}


def quantity_values(batch: LogBatch, quantity: str):
    """Extract a per-record outcome and its range bound M."""
    extractor, M = QUANTITIES[quantity]
    vals = extractor(batch)
    if M is None:
        if quantity in ("revenue", "revenue_bid"):
            M = 4.0 * batch.world.config.bid_max
        else:
            M = 4.0 * float(np.max(batch.world.values, initial=0.0))
        M = max(M, float(np.max(vals, initial=0.0)))
    return vals, M


def _per_record(value, n):
    return np.broadcast_to(np.asarray(value, dtype=float), (n,))


def score_weights(batch: LogBatch, rho_star, sigma_star=None) -> np.ndarray:
    """Density-ratio weights for a counterfactual multiplier law.

    ``rho_star`` may be a scalar or one value per record (query-dependent
    counterfactual scale).  ``sigma_star`` defaults to the logging spread.
    """
    p = batch.policy
    if p.sigma <= 0:
        raise ValueError("logging policy has a degenerate multiplier law")
    sigma_star = p.sigma if sigma_star is None else sigma_star
    if sigma_star <= 0:
        raise ValueError("counterfactual spread must be positive; use "
                         "pointwise_extrapolate for the deterministic limit")
    rho_star = _per_record(rho_star, batch.n)
    logw = (lognormal.logpdf(batch.m, rho_star, sigma_star)
            - lognormal.logpdf(batch.m, p.rho, p.sigma))
    return np.exp(logw)


def slate_weights(batch: LogBatch, rho_star, sigma_star=None) -> np.ndarray:
    """Stability-interval mass-ratio weights.

    Records whose slate is reproduced by every multiplier (interval
    [0, inf)) get weight exactly one.  Degenerately small denominators fall
    back to the density ratio at the observed multiplier.
    """
    p = batch.policy
    sigma_star = p.sigma if sigma_star is None else sigma_star
    if p.sigma <= 0 or sigma_star <= 0:
        raise ValueError("slate weights need nondegenerate multiplier laws")
    rho_star = _per_record(rho_star, batch.n)
    lo, hi = batch.m_lo, batch.m_hi
    num = lognormal.interval_mass(lo, hi, rho_star, sigma_star)
    den = lognormal.interval_mass(lo, hi, p.rho, p.sigma)
    trivial = (lo <= 0.0) & np.isinf(hi)
    tiny = den < 1e-280
    w = np.where(tiny, score_weights(batch, rho_star, sigma_star),
                 num / np.where(tiny, 1.0, den))
    return np.where(trivial, 1.0, w)


def resolve_clip(weights: np.ndarray, rule="fifth_largest") -> float:
    """Clip level from a rule: 'fifth_largest' or an explicit number."""
    if isinstance(rule, (int, float)) and not isinstance(rule, bool):
        if rule <= 0:
            raise ValueError("explicit clip level must be positive")
        return float(rule)
    if rule == "fifth_largest":
        w = np.asarray(weights, dtype=float)
        if w.size < 5:
            raise ValueError("fifth_largest rule needs at least five weights")
        return float(np.partition(w, -5)[-5])
    raise ValueError(f"unknown clip rule {rule!r}")


def clip_weights(weights: np.ndarray, clip_level: float) -> np.ndarray:
    """Zero every weight at or above the clip level (strict survival w < R)."""
    w = np.asarray(weights, dtype=float)
    return np.where(w < clip_level, w, 0.0)


def cap_weights(weights: np.ndarray, clip_level: float) -> np.ndarray:
    """Cap weights at the clip level (the off-policy gradient convention)."""
    return np.minimum(np.asarray(weights, dtype=float), clip_level)


@dataclass
class CounterfactualEstimate:
    """Point estimate with outer, inner and final confidence intervals.

    outer: deviation interval of the clipped estimate around the point.
    inner: bias interval for the clipped-away mass.
    final: their combination; it covers the counterfactual expectation with
    probability at least ``confidence``.
    """

    point: float
    weight_mass: float
    clip_level: float
    range_bound: float
    n: int
    delta: float
    method: str
    outer: tuple
    inner: tuple
    final: tuple
    confidence: float

    def halfwidth(self):
        return 0.5 * (self.final[1] - self.final[0])


def estimate(values, weights, *, range_bound, delta=0.025, method="bernstein",
             clip="fifth_largest") -> CounterfactualEstimate:
    """Clipped importance-weighted estimate of a bounded outcome mean.

    ``values`` must lie in [0, range_bound].  The final interval is
    [point - eps, point + bias_hi + eps] where bias_hi bounds the clipped
    mass contribution by range_bound * (1 - weight_mass + slack), valid
    with probability 1 - 2 delta (clt) or 1 - 3 delta (bernstein: outer,
    inner mass and variance terms each at delta).
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    n = values.size
    if n != weights.size:
        raise ValueError("values and weights must have equal length")
    R = resolve_clip(weights, clip)
    wbar = clip_weights(weights, R)
    prod = values * wbar
    point = float(np.sum(prod) / n)
    mass = float(np.sum(wbar) / n)
    if method == "bernstein":
        eps = bounds.bernstein_halfwidth(prod, range_bound * R, delta)
        confidence = 1.0 - 3.0 * delta
    elif method == "clt":
        eps = bounds.clt_halfwidth(prod, delta)
        confidence = 1.0 - 2.0 * delta
    else:
        raise ValueError(f"unknown method {method!r}")
    xi = bounds.inner_slack(wbar, R, delta)
    bias_hi = range_bound * max(0.0, 1.0 - mass + xi)
    outer = (point - eps, point + eps)
    inner = (0.0, bias_hi)
    final = (point - eps, point + bias_hi + eps)
    return CounterfactualEstimate(point=point, weight_mass=mass, clip_level=R,
                                  range_bound=range_bound, n=n, delta=delta,
                                  method=method, outer=outer, inner=inner,
                                  final=final, confidence=confidence)


@dataclass
class Predictor:
    """Invariant side information for variance reduction.

    ``fn(batch)`` returns one prediction per record; ``fields`` names the
    record attributes it reads.  ``fn_star(batch)`` optionally returns the
    prediction under the counterfactual law (for the doubly robust
    estimator); it may replay downstream structure but only on invariant
    draws.
    """

    fn: Callable[[LogBatch], np.ndarray]
    fields: Sequence[str] = ()
    fn_star: Optional[Callable[[LogBatch], np.ndarray]] = None

    # record fields mapped to nodes of the per-query causal graph
    FIELD_NODE = {"cluster": "x", "g": "u", "elig": "a", "bids": "b",
                  "m": "q", "eps": "q", "alpha_used": "q", "slate": "s",
                  "prices": "c", "prices_bid": "c", "clicks": "y", "y": "y",
                  "z": "z", "z_bid": "z", "nml": "s", "q_est": "q",
                  "m_lo": "s", "m_hi": "s"}

    def check_invariant(self, world: World, reweighted_node: str = "q"):
        """Reject predictors reading descendants of the reweighted factor."""
        graph = world.causal_graph()
        bad = graph.descendants(reweighted_node) | {reweighted_node}
        for f in self.fields:
            node = self.FIELD_NODE.get(f)
            if node is None:
                raise InvalidPredictorError(f"unknown record field {f!r}")
            if node in bad:
                raise InvalidPredictorError(
                    f"field {f!r} (node {node!r}) is downstream of the "
                    f"reweighted factor {reweighted_node!r}")


def estimate_difference(values, weights_a, weights_b, *, range_bound,
                        lo_env=None, hi_env=None, delta=0.025,
                        predictions=None, clip="fifth_largest"):
    """Estimate the difference of two counterfactual expectations.

    Both weight vectors are capped at a common clip level (the off-policy
    convention for signed integrands).  ``predictions`` optionally centers
    the outcome with an invariant predictor; ``lo_env``/``hi_env`` are
    pointwise envelopes of the centered outcome used for the inner bias
    interval (defaults: constants 0 and range_bound, minus predictions).
    Returns (point, final_interval, detail dict); the final interval holds
    with probability at least 1 - 2 delta.
    """
    values = np.asarray(values, dtype=float)
    n = values.size
    zeta = np.zeros(n) if predictions is None else np.asarray(predictions, float)
    centered = values - zeta
    if lo_env is None:
        lo_env = -zeta
    if hi_env is None:
        hi_env = np.broadcast_to(float(range_bound), (n,)) - zeta
    R = max(resolve_clip(weights_a, clip), resolve_clip(weights_b, clip))
    wa = cap_weights(weights_a, R)
    wb = cap_weights(weights_b, R)
    prod = centered * (wa - wb)
    point = float(np.sum(prod) / n)
    d_eff = delta / 2.0
    eps = bounds.bernstein_halfwidth(prod, 2.0 * range_bound * R, d_eff / 2.0)
    lo_a, hi_a = bounds.envelope_inner_bounds(wa, lo_env, hi_env, R, d_eff / 4.0)
    lo_b, hi_b = bounds.envelope_inner_bounds(wb, lo_env, hi_env, R, d_eff / 4.0)
    final = (point + lo_a - hi_b - eps, point + hi_a - lo_b + eps)
    detail = dict(clip_level=R, eps=eps, inner=(lo_a - hi_b, hi_a - lo_b))
    return point, final, detail


def doubly_robust(values, weights, predictions, predictions_star, *,
                  range_bound, delta=0.025, method="bernstein",
                  clip="fifth_largest"):
    """Predictor-corrected estimate: mean(zeta*) + reweighted residual.

    The residual term reuses the clipped machinery; the final interval is
    shifted by the predictor means and widened by the residual bounds.
    """
    values = np.asarray(values, dtype=float)
    zeta = np.asarray(predictions, dtype=float)
    zeta_star = np.asarray(predictions_star, dtype=float)
    n = values.size
    base = float(np.sum(zeta_star) / n)
    resid = values - zeta
    R = resolve_clip(weights, clip)
    wbar = clip_weights(weights, R)
    prod = resid * wbar
    point = base + float(np.sum(prod) / n)
    env = float(np.max(np.abs(resid), initial=1e-12))
    if method == "bernstein":
        eps = bounds.bernstein_halfwidth(prod, 2.0 * env * R, delta)
    else:
        eps = bounds.clt_halfwidth(prod, delta)
    xi = bounds.inner_slack(wbar, R, delta)
    lost = max(0.0, 1.0 - float(np.sum(wbar) / n) + xi)
    inner = env * lost
    final = (point - inner - eps, point + inner + eps)
    return point, final, dict(clip_level=R, eps=eps, inner=(-inner, inner))


def pointwise_extrapolate(est_small: CounterfactualEstimate,
                          est_double: CounterfactualEstimate):
    """Estimate the deterministic-policy value from two randomized ones.

    With the second estimate's multiplier variance twice the first's, the
    linear extrapolation 2 Y_v - Y_2v cancels the leading smoothing bias.
    Interval half-widths combine as 2 eps_small + eps_double on both the
    outer and the final intervals.
    """
    point = 2.0 * est_small.point - est_double.point
    def widths(field):
        a = getattr(est_small, field)
        b = getattr(est_double, field)
        lo = point - (2.0 * (est_small.point - a[0]) + (est_double.point - b[0]))
        hi = point + (2.0 * (a[1] - est_small.point) + (b[1] - est_double.point))
        return (lo, hi)
    return point, dict(outer=widths("outer"), final=widths("final"))
