"""Advertiser equilibrium response to a policy change.

Each advertiser a has a private click value V_a and utility
V_a Y_a(b) - Z_a(b), where Y_a counts their clicks and Z_a their cost,
both functions of the full bid vector b.  Randomizing every ad score with
its own mean-one log-normal multiplier smooths these functions and makes
their bid derivatives estimable on policy by score-function products:
the multiplier on a bid is equivalent to a multiplier on the click
probability estimate, so advertisers can be charged prices computed from
the bids they actually entered (the "charged" ledger) while the analysis
prices the effective bids (the "bid" ledger).

First-order conditions at an interior equilibrium give
V_a = (dZ_a/db_a) / (dY_a/db_a); differentiating them with respect to a
policy parameter theta yields a linear system for the bid response
Xi = db/dtheta, and the total metric derivative adds the direct and the
response terms.  A grid best-response oracle on the simulator provides
ground truth equilibria.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from . import counterfactual as cf, lognormal
from .world import World, Policy, LogBatch, simulate

__all__ = [
    "bid_scores", "reserve_scores", "bid_derivative_estimates",
    "estimate_values", "ValueEstimate", "solve_response", "total_derivative",
    "nash_oracle", "InsufficientExposureError",
]


class InsufficientExposureError(ValueError):
    """Too few exposures of an advertiser to estimate derivatives."""


def bid_scores(world: World, batch: LogBatch, a_id: int) -> np.ndarray:
    """Score function d log p / d b_a of advertiser a's multiplier factors.

    One multiplier per eligible ad; the effective bid of ad i is
    b_i * mult_i, log-normal with mean b_i, so the score in b_i is
    (log mult + spread^2/2) / (b_i spread^2).  Records where none of the
    advertiser's ads were eligible contribute zero.
    """
    sb = batch.policy.bid_spread
    if sb <= 0:
        raise ValueError("log was collected without per-ad score randomization")
    from .world import base_draws
    n = batch.n
    out = np.zeros(n)
    mine = np.where(world.advertiser == a_id)[0]
    if mine.size == 0:
        raise ValueError(f"unknown advertiser {a_id}")
    i0 = 0
    chunk = 1 << 16
    while i0 < n:
        count = min(chunk, n - i0)
        d = base_draws(world, batch.policy, batch.seed, i0, count)
        part = np.zeros(count)
        for i in mine:
            el = d["elig"][:, i] != 0
            lm = np.log(d["bidmult"][:, i])
            part += np.where(el, (lm + 0.5 * sb * sb)
                             / (world.bids[i] * sb * sb), 0.0)
        out[i0:i0 + count] = part
        i0 += count
    return out


def reserve_scores(batch: LogBatch) -> np.ndarray:
    """Score function d log p / d rho of the reserve multiplier factor."""
    p = batch.policy
    if p.sigma <= 0:
        raise ValueError("log was collected without reserve randomization")
    return lognormal.dlogpdf_dscale(batch.m, p.rho, p.sigma)


def _mean_se(x):
    n = x.size
    mu = float(np.sum(x) / n)
    se = float(np.sqrt(max(np.sum((x - mu) ** 2), 0.0) / (n - 1)) / np.sqrt(n))
    return mu, se


def _baselined(outcome, score):
    """Integrand (outcome - baseline) * score, optimal constant baseline."""
    s2 = score * score
    denom = np.sum(s2)
    base = float(np.sum(outcome * s2) / denom) if denom > 0 else 0.0
    return (outcome - base) * score


def bid_derivative_estimates(world: World, batch: LogBatch, a_id: int,
                             min_exposures: int = 1000,
                             ledger: str = "bid") -> Dict:
    """dY_a/db_a and dZ_a/db_a with standard errors and their covariance."""
    clicks, cost, expo = batch.advertiser_outcomes(a_id, ledger=ledger)
    if float(np.sum(expo)) < min_exposures:
        raise InsufficientExposureError(
            f"advertiser {a_id}: {int(np.sum(expo))} exposures "
            f"< {min_exposures}")
    s = bid_scores(world, batch, a_id)
    iy = _baselined(clicks, s)
    iz = _baselined(cost, s)
    dY, dY_se = _mean_se(iy)
    dZ, dZ_se = _mean_se(iz)
    n = batch.n
    cov = float(np.sum((iy - dY) * (iz - dZ)) / (n - 1) / n)
    return dict(dY=dY, dY_se=dY_se, dZ=dZ, dZ_se=dZ_se, cov=cov,
                exposures=float(np.sum(expo)))


@dataclass
class ValueEstimate:
    advertiser: int
    status: str         # Interior / AtZero / AtCap / Insufficient
    value: float
    se: float
    detail: dict


def estimate_values(world: World, batch: LogBatch, bid_caps=None,
                    min_exposures: int = 1000,
                    zero_z: float = 2.0) -> Dict[int, ValueEstimate]:
    """Recover private values from first-order conditions at the logged bids.

    Interior: V = (dZ/db)/(dY/db), delta-method standard error.  An
    advertiser whose cost derivative is indistinguishable from zero
    (|dZ| < zero_z * se) is flagged AtZero; one bidding at the cap AtCap
    (the condition is an inequality there); too little data Insufficient.
    """
    out = {}
    caps = bid_caps or {}
    for a_id in range(world.config.n_advertisers):
        try:
            d = bid_derivative_estimates(world, batch, a_id,
                                         min_exposures=min_exposures)
        except InsufficientExposureError:
            out[a_id] = ValueEstimate(a_id, "Insufficient", np.nan, np.nan, {})
            continue
        mine = np.where(world.advertiser == a_id)[0]
        bid = float(np.max(world.bids[mine]))
        cap = caps.get(a_id)
        if cap is not None and bid >= cap * (1 - 1e-9):
            out[a_id] = ValueEstimate(a_id, "AtCap", np.nan, np.nan, d)
            continue
        if abs(d["dZ"]) < zero_z * d["dZ_se"] or d["dY"] <= 0:
            out[a_id] = ValueEstimate(a_id, "AtZero", np.nan, np.nan, d)
            continue
        v = d["dZ"] / d["dY"]
        # delta method for the ratio
        se = abs(v) * np.sqrt((d["dZ_se"] / d["dZ"]) ** 2
                              + (d["dY_se"] / d["dY"]) ** 2
                              - 2.0 * d["cov"] / (d["dZ"] * d["dY"]))
        out[a_id] = ValueEstimate(a_id, "Interior", float(v), float(se), d)
    return out


def _second_derivative_matrix(world, batch, values, advertisers,
                              theta_scores):
    """KKT-differentiation system: A[.,a] from score products.

    A[a', a] = V_a' d2Y_a'/db_a' db_a - d2Z_a'/db_a' db_a and
    r[a'] likewise against theta; mixed second derivatives across distinct
    multiplier factors are products of the two score functions.
    """
    A_ids = list(advertisers)
    nA = len(A_ids)
    n = batch.n
    s_own = {a: bid_scores(world, batch, a) for a in A_ids}
    A = np.zeros((nA, nA))
    r = np.zeros(nA)
    for i, ap in enumerate(A_ids):
        clicks, cost, _ = batch.advertiser_outcomes(ap, ledger="bid")
        util = values[ap] * clicks - cost
        sp = s_own[ap]
        for j, a in enumerate(A_ids):
            if a == ap:
                # same factor twice: add the log-density Hessian term
                d2 = _own_second(world, batch, ap)
                integ = util * (sp * sp + d2)
            else:
                integ = util * sp * s_own[a]
            A[i, j] = float(np.sum(integ) / n)
        r[i] = float(np.sum(util * sp * theta_scores) / n)
    return A, r


def _own_second(world, batch, a_id):
    """d2 log p / d b_a^2 summed over the advertiser's eligible ads."""
    from .world import base_draws
    sb = batch.policy.bid_spread
    n = batch.n
    out = np.zeros(n)
    mine = np.where(world.advertiser == a_id)[0]
    i0 = 0
    while i0 < n:
        count = min(1 << 16, n - i0)
        d = base_draws(world, batch.policy, batch.seed, i0, count)
        part = np.zeros(count)
        for i in mine:
            el = d["elig"][:, i] != 0
            lm = np.log(d["bidmult"][:, i])
            b = world.bids[i]
            d_c = lm + 0.5 * sb * sb
            part += np.where(el, -(1.0 + d_c) / (b * b * sb * sb), 0.0)
        out[i0:i0 + count] = part
        i0 += count
    return out


def solve_response(world: World, batch: LogBatch, values: Dict[int, float],
                   advertisers=None, cond_limit: float = 1e8):
    """Bid response Xi = db/dtheta of interior advertisers to the reserve
    scale, from the differentiated first-order conditions A Xi = -r."""
    if advertisers is None:
        advertisers = sorted(values)
    th = reserve_scores(batch)
    A, r = _second_derivative_matrix(world, batch, values, advertisers, th)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > cond_limit:
        raise np.linalg.LinAlgError(f"response system ill conditioned ({cond:.2e})")
    xi = np.linalg.solve(A, -r)
    return dict(zip(advertisers, xi)), dict(A=A, r=r, cond=cond)


def total_derivative(world: World, batch: LogBatch, quantity: str,
                     response: Dict[int, float]):
    """d quantity / d theta accounting for the bid response.

    Direct term: on-policy gradient against the reserve-scale score.
    Response terms: gradient against each advertiser's bid score times the
    advertiser's bid response.
    """
    vals, _ = cf.quantity_values(batch, quantity)
    n = batch.n
    direct = _mean_se(_baselined(vals, reserve_scores(batch)))
    total = direct[0]
    var = direct[1] ** 2
    parts = {"direct": direct[0]}
    for a_id, xi in response.items():
        g = _mean_se(_baselined(vals, bid_scores(world, batch, a_id)))
        parts[f"bid_{a_id}"] = g[0] * xi
        total += g[0] * xi
        var += (g[1] * xi) ** 2
    return total, float(np.sqrt(var)), parts


def _utility(world, policy, bids, a_id, value, n_eval, seed):
    w2 = _rebid_world(world, bids)
    b = simulate(w2, policy, n_eval, seed)
    clicks, cost, _ = b.advertiser_outcomes(a_id, ledger="charged")
    return float(np.mean(value * clicks - cost))


def _rebid_world(world: World, bids):
    w2 = World(world.config)
    w2.bids = np.asarray(bids, dtype=float).copy()
    return w2


def nash_oracle(world: World, policy: Policy, values: Dict[int, float],
                bid_grid, n_eval: int = 200000, seed: int = 1234,
                max_rounds: int = 30, tol: float = 0.0):
    """Grid best-response iteration on the simulator.

    Advertisers take turns moving to their grid best response under common
    random numbers; returns the bid vector (one bid per ad, all ads of an
    advertiser move together) once a full round changes nothing.
    """
    bid_grid = np.asarray(sorted(bid_grid), dtype=float)
    bids = world.bids.copy()
    adv = world.advertiser
    players = sorted(values)
    for rnd in range(max_rounds):
        changed = False
        for a_id in players:
            mine = adv == a_id
            best_b, best_u = None, -np.inf
            for cand in bid_grid:
                trial = bids.copy()
                trial[mine] = cand
                u = _utility(world, policy, trial, a_id, values[a_id],
                             n_eval, seed)
                if u > best_u + tol:
                    best_u, best_b = u, cand
            if not np.allclose(bids[mine], best_b):
                bids[mine] = best_b
                changed = True
        if not changed:
            return bids, rnd + 1
    return bids, max_rounds
