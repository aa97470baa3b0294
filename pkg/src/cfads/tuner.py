"""Policy tuning from one randomized log.

A sweep evaluates counterfactual estimates of the relevant quantities on a
grid of candidate reserve scales (optionally jointly with the squashing
exponent, when the log randomized it).  The tuner then maximizes a lower
confidence bound that is valid uniformly over the whole grid, subject to a
page-real-estate constraint: the conservative upper bound on the expected
mainline ad count must not exceed a cap.  Maximizing a uniform lower bound
protects against picking a parameter whose estimate merely got lucky.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm

from . import bounds, counterfactual as cf

__all__ = ["sweep", "tune", "tune_per_cluster", "level_curves", "TuneResult"]


def _weight_matrix(batch, rho_grid, weight_kind):
    fn = cf.slate_weights if weight_kind == "slate" else cf.score_weights
    return np.stack([fn(batch, r) for r in rho_grid])


def sweep(batch, quantity, rho_grid, delta=0.025, method="bernstein",
          weight_kind="slate"):
    """Per-grid-point interval estimates of one quantity.

    Returns a list of row dicts (one per candidate reserve scale).
    """
    vals, M = cf.quantity_values(batch, quantity)
    rows = []
    for rho_star in rho_grid:
        w = (cf.slate_weights if weight_kind == "slate"
             else cf.score_weights)(batch, rho_star)
        est = cf.estimate(vals, w, range_bound=M, delta=delta, method=method)
        rows.append(dict(rho_star=float(rho_star), quantity=quantity,
                         point=est.point, weight_mass=est.weight_mass,
                         clip_level=est.clip_level,
                         outer_lo=est.outer[0], outer_hi=est.outer[1],
                         final_lo=est.final[0], final_hi=est.final[1],
                         confidence=est.confidence))
    return rows


@dataclass
class TuneResult:
    theta: object               # chosen reserve scale(s)
    lower_bound: float          # guaranteed objective at theta
    constraint_upper: float     # conservative mainline count at theta
    at_boundary: bool           # theta sits on the grid edge
    feasible: bool              # some grid point met the constraint
    rows: list


def _uniform_tables(vals, M, wmat, clips, delta, mode, covering_fn):
    G, n = wmat.shape
    wbar = np.stack([cf.clip_weights(wmat[g], clips[g]) for g in range(G)])
    prods = vals[None, :] * wbar
    eps, xi = bounds.uniform_halfwidths(prods, wbar, clips, M, delta,
                                        mode=mode, covering_fn=covering_fn)
    points = np.sum(prods, axis=1) / n
    masses = np.sum(wbar, axis=1) / n
    bias = M * np.maximum(0.0, 1.0 - masses + xi)
    lower = points - eps
    upper = points + bias + eps
    return points, lower, upper, masses


def tune(batch, objective, rho_grid, cap, delta=0.025, weight_kind="slate",
         mode="finite_grid", covering_fn=None) -> TuneResult:
    """Pick the reserve scale maximizing the uniform lower bound.

    Feasibility: the uniform upper bound of the expected mainline ad count
    must stay at or below ``cap``.  Ties resolve toward the smaller scale.
    """
    rho_grid = np.asarray(sorted(rho_grid), dtype=float)
    obj_vals, M_obj = cf.quantity_values(batch, objective)
    cnt_vals, M_cnt = cf.quantity_values(batch, "mainline_count")
    wmat = _weight_matrix(batch, rho_grid, weight_kind)
    clips = np.array([cf.resolve_clip(wmat[g]) for g in range(len(rho_grid))])
    # one uniform family covering both quantities: split delta between them
    o_pts, o_lo, o_hi, _ = _uniform_tables(obj_vals, M_obj, wmat, clips,
                                           delta / 2.0, mode, covering_fn)
    c_pts, c_lo, c_hi, _ = _uniform_tables(cnt_vals, M_cnt, wmat, clips,
                                           delta / 2.0, mode, covering_fn)
    rows = []
    best = None
    for gidx, rho_star in enumerate(rho_grid):
        feasible = c_hi[gidx] <= cap
        rows.append(dict(rho_star=float(rho_star), objective_point=o_pts[gidx],
                         objective_lower=o_lo[gidx], objective_upper=o_hi[gidx],
                         count_point=c_pts[gidx], count_upper=c_hi[gidx],
                         feasible=bool(feasible)))
        if feasible and (best is None or o_lo[gidx] > o_lo[best]):
            best = gidx
    if best is None:
        return TuneResult(theta=None, lower_bound=-np.inf,
                          constraint_upper=np.inf, at_boundary=False,
                          feasible=False, rows=rows)
    return TuneResult(theta=float(rho_grid[best]), lower_bound=float(o_lo[best]),
                      constraint_upper=float(c_hi[best]),
                      at_boundary=best in (0, len(rho_grid) - 1),
                      feasible=True, rows=rows)


def tune_per_cluster(batch, objective, grids: Sequence[Sequence[float]],
                     cap, delta=0.025, weight_kind="slate") -> TuneResult:
    """Tune one reserve scale per query cluster under a global cap.

    Estimates are additively separable across clusters (each record's
    weight depends only on its own cluster's candidate scale), so per
    (cluster, grid point) sufficient statistics are combined exactly over
    the full assignment cross-product with a finite-grid union bound.
    """
    from itertools import product as iproduct

    K = batch.world.config.n_clusters
    if len(grids) != K:
        raise ValueError("need one grid per cluster")
    obj_vals, M_obj = cf.quantity_values(batch, objective)
    cnt_vals, M_cnt = cf.quantity_values(batch, "mainline_count")
    n = batch.n
    cluster = batch.cluster
    # sufficient statistics per (cluster, grid index)
    stats = []
    for k in range(K):
        sel = cluster == k
        sub = _ClusterView(batch, sel)
        per = []
        for rho_star in grids[k]:
            w = (cf.slate_weights if weight_kind == "slate"
                 else cf.score_weights)(sub, rho_star)
            R = cf.resolve_clip(w) if np.sum(sel) >= 5 else np.inf
            wbar = cf.clip_weights(w, R)
            po = obj_vals[sel] * wbar
            pc = cnt_vals[sel] * wbar
            per.append(dict(R=R, w1=np.sum(wbar), w2=np.sum(wbar ** 2),
                            o1=np.sum(po), o2=np.sum(po ** 2),
                            c1=np.sum(pc), c2=np.sum(pc ** 2)))
        stats.append(per)
    G_total = int(np.prod([len(g) for g in grids]))
    d_eff = (delta / 2.0) / (2.0 * G_total)
    L = np.log(2.0 / d_eff)

    def width(s1, s2, rng_w):
        mean = s1 / n
        var = max(s2 - n * mean * mean, 0.0) / (n - 1)
        return mean, np.sqrt(2.0 * var * L / n) + rng_w * 7.0 * L / (3.0 * (n - 1))

    rows = []
    best = None
    for assign in iproduct(*[range(len(g)) for g in grids]):
        agg = {k2: sum(stats[k][j][k2] for k, j in enumerate(assign))
               for k2 in ("w1", "w2", "o1", "o2", "c1", "c2")}
        R = max(stats[k][j]["R"] for k, j in enumerate(assign))
        o_mean, o_eps = width(agg["o1"], agg["o2"], M_obj * R)
        c_mean, c_eps = width(agg["c1"], agg["c2"], M_cnt * R)
        w_mean, w_xi = width(agg["w1"], agg["w2"], R)
        o_lo = o_mean - o_eps
        c_hi = c_mean + M_cnt * max(0.0, 1.0 - w_mean + w_xi) + c_eps
        theta = tuple(float(grids[k][j]) for k, j in enumerate(assign))
        feasible = c_hi <= cap
        rows.append(dict(theta=theta, objective_lower=o_lo, count_upper=c_hi,
                         feasible=bool(feasible)))
        if feasible and (best is None or o_lo > best[1]):
            boundary = any(j in (0, len(grids[k]) - 1)
                           for k, j in enumerate(assign))
            best = (theta, o_lo, c_hi, boundary)
    if best is None:
        return TuneResult(theta=None, lower_bound=-np.inf,
                          constraint_upper=np.inf, at_boundary=False,
                          feasible=False, rows=rows)
    return TuneResult(theta=best[0], lower_bound=float(best[1]),
                      constraint_upper=float(best[2]), at_boundary=best[3],
                      feasible=True, rows=rows)


class _ClusterView:
    """Restriction of a batch to one cluster, for the weight functions."""

    def __init__(self, batch, sel):
        self.world = batch.world
        self.policy = batch.policy
        self.n = int(np.sum(sel))
        self._batch = batch
        self._sel = sel

    def __getattr__(self, name):
        arr = getattr(self._batch, name)
        return arr[self._sel]


def level_curves(batch, quantity, rho_grid, alpha_grid, delta=0.05):
    """2-D point estimates over (reserve scale, exponent) candidates.

    Requires a log whose policy randomized the exponent too
    (alpha_spread > 0); weights multiply the two density ratios.
    Returns dict with the grids and tables: point, lower, upper (final
    interval ends, per cell at confidence 1 - 3 delta).
    """
    p = batch.policy
    if p.alpha_spread <= 0:
        raise ValueError("level curves need a log with exponent randomization")
    vals, M = cf.quantity_values(batch, quantity)
    rho_grid = np.asarray(rho_grid, dtype=float)
    alpha_grid = np.asarray(alpha_grid, dtype=float)
    shape = (len(rho_grid), len(alpha_grid))
    point = np.zeros(shape)
    lower = np.zeros(shape)
    upper = np.zeros(shape)
    base_a = norm.logpdf(batch.alpha_used, p.alpha, p.alpha_spread)
    for i, rho_star in enumerate(rho_grid):
        w_m = cf.score_weights(batch, rho_star)
        for j, a_star in enumerate(alpha_grid):
            w = w_m * np.exp(norm.logpdf(batch.alpha_used, a_star,
                                         p.alpha_spread) - base_a)
            est = cf.estimate(vals, w, range_bound=M, delta=delta)
            point[i, j] = est.point
            lower[i, j] = est.final[0]
            upper[i, j] = est.final[1]
    return dict(rho_grid=rho_grid, alpha_grid=alpha_grid, point=point,
                lower=lower, upper=upper, quantity=quantity)
