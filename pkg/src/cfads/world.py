"""Synthetic ad placement world.

Queries arrive from a small number of query clusters.  Each cluster has a
traffic share and a commercialness level that shifts ad quality estimates
and user click-through propensity.  A roster of ads (bid, per-cluster
quality, advertiser) is derived deterministically from the world seed.
Per query the engine scores eligible ads, runs a rank-score auction with a
mainline reserve, prices clicks by generalized second price, and simulates
user clicks.  The reserve is randomized through a mean-parametrized
log-normal multiplier; optional extra randomizations perturb the squashing
exponent and attach one multiplier per ad score.

The page has up to two mainline slots (reserve applies) and up to two
sidebar slots (no reserve).  Reserves are expressed directly as a floor on
the ad score b * beta**alpha, identical for both mainline slots, which
keeps the greedy slate construction exactly optimal over the whole layout
family (any mainline prefix combined with any sidebar prefix).

All randomness is counter-based: node draws are Philox substreams keyed by
(seed, node id) and indexed by record number, so any record can be replayed
or extended without storing the draws, and results do not depend on chunk
sizes or worker counts.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict, fields as dataclass_fields
from typing import Dict, Optional

import numpy as np
from numpy.random import Generator, Philox
from scipy.special import ndtri, betaincinv

from . import lognormal, scm
from ._backend import kernel

__all__ = [
    "WorldConfig", "Policy", "World", "LogBatch",
    "simulate", "greedy_placement", "brute_force_placement", "gsp_prices",
    "slate_interval", "slate_probability_mc", "InconsistentSlateError",
    "N_SLOTS", "N_MAINLINE",
]

# slot layout: 0,1 mainline; 2,3 sidebar
N_SLOTS = 4
N_MAINLINE = 2

# node ids for the counter-based substreams
NODE_ROSTER = 0
NODE_CLUSTER = 1
NODE_INTENT = 2
NODE_ELIG = 3
NODE_MULT = 4
NODE_ALPHA = 5
NODE_CLICKS = 6
NODE_BIDMULT = 7
NODE_QUALITY = 8


class InconsistentSlateError(ValueError):
    """The slate handed to gsp_prices is not the auction outcome."""


@dataclass
class WorldConfig:
    """Static description of the world; hashable to a stable digest."""

    n_clusters: int = 2
    cluster_probs: tuple = (0.6, 0.4)
    commercial: tuple = (0.2, 0.8)
    n_ads: int = 6
    n_advertisers: int = 4
    world_seed: int = 20240
    bid_shape: float = 1.8          # truncated Pareto shape for bids
    bid_min: float = 0.1
    bid_max: float = 4.0
    beta_min: float = 0.005
    beta_max: float = 0.3
    beta_commercial_lift: float = 1.5   # quality scale grows with commercialness
    elig_prob: float = 0.35
    intent_a: float = 2.0
    intent_b: float = 5.0
    intent_base: float = 0.5
    intent_commercial_slope: float = 0.5  # may be negative (overestimated quality)
    quality_spread: float = 0.25    # per-query log-normal jitter on ad quality
    gamma: tuple = (1.0, 0.62, 0.12, 0.07)
    reserve_levels: tuple = (0.04, 0.04)  # score floor per cluster, per unit multiplier
    values: tuple = ()              # advertiser click values, optional
    explicit_bids: tuple = ()       # override the generated roster bids
    explicit_beta: tuple = ()       # override quality, flat across clusters
    explicit_advertisers: tuple = ()  # override the ad -> advertiser map

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "WorldConfig":
        raw = json.loads(text)
        coerced = {}
        for f in dataclass_fields(cls):
            if f.name not in raw:
                continue
            v = raw[f.name]
            if f.type == "float":
                v = float(v)
            elif f.type == "int":
                v = int(v)
            elif isinstance(v, list):
                if f.name == "explicit_advertisers":
                    v = tuple(int(x) for x in v)
                else:
                    v = tuple(float(x) for x in v)
            coerced[f.name] = v
        unknown = set(raw) - set(coerced)
        if unknown:
            raise ValueError(f"unknown config fields {sorted(unknown)}")
        return cls(**coerced)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


@dataclass
class Policy:
    """Scoring-engine parameters, including the randomization laws."""

    alpha: float = 1.0
    rho: float = 1.0          # reserve multiplier scale (its mean)
    sigma: float = 0.3        # reserve multiplier spread
    alpha_spread: float = 0.0  # optional normal jitter on the exponent
    bid_spread: float = 0.0    # optional per-ad log-normal score multiplier

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class World:
    """Config plus the deterministic ad roster derived from it."""

    def __init__(self, config: WorldConfig):
        if abs(sum(config.cluster_probs) - 1.0) > 1e-9:
            raise ValueError("cluster_probs must sum to one")
        if len(config.cluster_probs) != config.n_clusters:
            raise ValueError("cluster_probs length mismatch")
        if len(config.reserve_levels) != config.n_clusters:
            raise ValueError("reserve_levels length mismatch")
        g = np.asarray(config.gamma)
        if np.any(np.diff(g) > 0):
            raise ValueError("gamma must be nonincreasing across slots")
        self.config = config
        rng = Generator(Philox(key=[config.world_seed, NODE_ROSTER]))
        A, K = config.n_ads, config.n_clusters
        self.advertiser = rng.permutation(np.arange(A) % config.n_advertisers)
        # truncated Pareto bids on [bid_min, bid_max]
        u = rng.random(A)
        s = config.bid_shape
        lo, hi = config.bid_min, config.bid_max
        self.bids = lo * (1.0 - u * (1.0 - (lo / hi) ** s)) ** (-1.0 / s)
        # per (ad, cluster) quality, log-uniform with a commercialness lift
        lb, ub = np.log(config.beta_min), np.log(config.beta_max)
        base = np.exp(lb + (ub - lb) * rng.random((A, K)))
        lift = 1.0 + config.beta_commercial_lift * np.asarray(config.commercial)
        self.beta = np.minimum(base * lift[None, :], 0.95)
        if config.explicit_bids:
            self.bids = np.asarray(config.explicit_bids, dtype=float)
            if self.bids.shape != (A,):
                raise ValueError("explicit_bids length mismatch")
        if config.explicit_beta:
            eb = np.asarray(config.explicit_beta, dtype=float)
            if eb.shape != (A,):
                raise ValueError("explicit_beta length mismatch")
            self.beta = np.repeat(eb[:, None], K, axis=1)
        if config.explicit_advertisers:
            self.advertiser = np.asarray(config.explicit_advertisers)
            if self.advertiser.shape != (A,):
                raise ValueError("explicit_advertisers length mismatch")
        self.cum_probs = np.cumsum(config.cluster_probs)
        self.reserve = np.asarray(config.reserve_levels, dtype=float)
        self.gamma = np.asarray(config.gamma, dtype=float)
        if config.values:
            if len(config.values) != config.n_advertisers:
                raise ValueError("values length mismatch")
            self.values = np.asarray(config.values, dtype=float)
        else:
            self.values = np.zeros(config.n_advertisers)

    def config_hash(self) -> str:
        return self.config.digest()

    def causal_graph(self) -> scm.ScmGraph:
        """Qualitative structure of one query, for invariance checking.

        Nodes: user intent ``u``, unobserved context ``v``, query ``x``,
        eligible candidates ``a``, bids ``b``, scores ``q``, slate ``s``,
        click prices ``c``, clicks ``y``, revenue ``z``.
        """
        g = scm.ScmGraph()
        opaque = lambda name: scm.Deterministic(fn=lambda **kw: np.zeros(1))
        g.add("v", (), scm.DensityFactor(
            sampler=lambda p, rng, n: rng.random(n),
            logpdf=lambda v, p: np.zeros(len(v)), label="context"))
        g.add("u", ("v",), opaque("u"))
        g.add("x", ("v",), opaque("x"))
        g.add("a", ("x",), opaque("a"))
        g.add("b", ("x", "a"), opaque("b"))
        g.add("q", ("x", "a"), scm.DensityFactor(
            sampler=lambda p, rng, n: rng.random(n),
            logpdf=lambda v, p: np.zeros(len(v)), label="scores"))
        g.add("s", ("a", "q", "b"), opaque("s"))
        g.add("c", ("s", "q", "b"), opaque("c"))
        g.add("y", ("s", "u"), opaque("y"))
        g.add("z", ("y", "c"), opaque("z"))
        g.validate()
        return g


def _node_uniforms(seed: int, node: int, i0: int, n: int, k: int) -> np.ndarray:
    """Uniform draws for records [i0, i0+n) of a node consuming k doubles each.

    i0*k must be divisible by 4 (Philox advances in blocks of four doubles);
    internal chunking guarantees this.
    """
    total = i0 * k
    if total % 4:
        raise ValueError("chunk boundary not aligned to the Philox block size")
    gen = Generator(Philox(key=[seed, node]))
    gen.bit_generator.advance(total // 4)
    u = gen.random(n * k)
    return u.reshape(n, k) if k > 1 else u


def base_draws(world: World, policy: Policy, seed: int, i0: int, n: int) -> Dict[str, np.ndarray]:
    """All exogenous draws for records [i0, i0+n), regenerated on demand."""
    cfg = world.config
    A = cfg.n_ads
    cluster = np.searchsorted(world.cum_probs, _node_uniforms(seed, NODE_CLUSTER, i0, n, 1),
                              side="right").astype(np.int64)
    cluster = np.minimum(cluster, cfg.n_clusters - 1)
    u_int = _node_uniforms(seed, NODE_INTENT, i0, n, 1)
    raw = betaincinv(cfg.intent_a, cfg.intent_b, u_int)
    comm = np.asarray(cfg.commercial)[cluster]
    g = np.clip(raw * (cfg.intent_base + cfg.intent_commercial_slope * comm), 0.0, 1.0)
    eps = ndtri(np.clip(_node_uniforms(seed, NODE_MULT, i0, n, 1), 1e-16, 1 - 1e-16))
    m = lognormal.sample(policy.rho, policy.sigma, eps) if policy.sigma > 0 \
        else np.full(n, policy.rho)
    if policy.alpha_spread > 0:
        ua = _node_uniforms(seed, NODE_ALPHA, i0, n, 1)
        alpha_used = policy.alpha + policy.alpha_spread * ndtri(np.clip(ua, 1e-16, 1 - 1e-16))
        alpha_used = np.maximum(alpha_used, 0.05)
    else:
        alpha_used = np.full(n, policy.alpha)
    elig = (_node_uniforms(seed, NODE_ELIG, i0, n, A) < cfg.elig_prob).astype(np.uint8)
    if cfg.quality_spread > 0:
        uq = np.clip(_node_uniforms(seed, NODE_QUALITY, i0, n, A), 1e-16, 1 - 1e-16)
        qjit = lognormal.sample(1.0, cfg.quality_spread, ndtri(uq))
    else:
        qjit = np.ones((n, A))
    if policy.bid_spread > 0:
        ub = np.clip(_node_uniforms(seed, NODE_BIDMULT, i0, n, A), 1e-16, 1 - 1e-16)
        bidmult = lognormal.sample(1.0, policy.bid_spread, ndtri(ub))
    else:
        bidmult = np.ones((n, A))
    uclick = _node_uniforms(seed, NODE_CLICKS, i0, n, N_SLOTS)
    return dict(cluster=cluster, g=g, eps=eps, m=m, alpha_used=alpha_used,
                elig=elig, bidmult=bidmult, qjit=qjit, uclick=uclick)


def _auction_batch(bids, beta, adv, n_adv, gamma, reserve,
                   cluster, g, m, alpha_used, elig, bidmult, qjit, uclick,
                   slate, nml, prices, prices_bid, clicks, q_est,
                   y, z, z_bid, m_lo, m_hi):
    """Per-record auction, pricing, clicks and slate stability interval.

    Candidate scores are u_i = b_i * mult_i * beta_i**alpha.  The best ad
    per advertiser enters; candidates sorted by score fill mainline slots
    while they clear the reserve floor, remaining candidates fill the
    sidebar.  A GSP price is the smallest entered bid keeping the whole
    slate identical; its score-space boundary is the largest of the next
    candidate score, the slot floor, and the advertiser's runner-up ad.
    """
    n, A = elig.shape
    INF = np.inf
    for r in range(n):
        k = cluster[r]
        a_exp = alpha_used[r]
        res = reserve[k]
        floor = res * m[r]
        best_u = np.zeros(n_adv)
        best_i = np.full(n_adv, -1, dtype=np.int64)
        second_u = np.zeros(n_adv)
        for i in range(A):
            if elig[r, i] == 0:
                continue
            u_i = bids[i] * bidmult[r, i] * (beta[i, k] * qjit[r, i]) ** a_exp
            a_id = adv[i]
            if u_i > best_u[a_id] or best_i[a_id] < 0:
                second_u[a_id] = best_u[a_id]
                best_u[a_id] = u_i
                best_i[a_id] = i
            elif u_i > second_u[a_id]:
                second_u[a_id] = u_i
        # gather and insertion-sort candidates by score desc, ties to low id
        cu = np.empty(n_adv)
        ci = np.empty(n_adv, dtype=np.int64)
        nc = 0
        for a_id in range(n_adv):
            if best_i[a_id] >= 0:
                u_i = best_u[a_id]
                i = best_i[a_id]
                j = nc
                while j > 0 and (cu[j - 1] < u_i or
                                 (cu[j - 1] == u_i and ci[j - 1] > i)):
                    cu[j] = cu[j - 1]
                    ci[j] = ci[j - 1]
                    j -= 1
                cu[j] = u_i
                ci[j] = i
                nc += 1
        j_ml = 0
        while j_ml < min(N_MAINLINE, nc) and cu[j_ml] >= floor:
            j_ml += 1
        n_sb = min(N_SLOTS - N_MAINLINE, nc - j_ml)
        nml[r] = j_ml
        yy = 0
        zz = 0.0
        zzb = 0.0
        for c in range(j_ml + n_sb):
            s = c if c < j_ml else N_MAINLINE + (c - j_ml)
            i = ci[c]
            slate[r, s] = i
            nxt = cu[c + 1] if c + 1 < nc else 0.0
            slot_floor = floor if s < N_MAINLINE else 0.0
            own2 = second_u[adv[i]]
            boundary = max(max(nxt, slot_floor), own2)
            b_eff = beta[i, k] * qjit[r, i]
            qual = b_eff ** a_exp
            prices_bid[r, s] = boundary / qual
            prices[r, s] = boundary / (qual * bidmult[r, i])
            q_est[r, s] = gamma[s] * b_eff
            p_click = gamma[s] * b_eff * g[r]
            if p_click > 1.0:
                p_click = 1.0
            if uclick[r, s] < p_click:
                clicks[r, s] = 1
                yy += 1
                zz += prices[r, s]
                zzb += prices_bid[r, s]
        y[r] = yy
        z[r] = zz
        z_bid[r] = zzb
        # reserve-multiplier interval reproducing this exact slate
        if res <= 0.0 or nc == 0:
            m_lo[r] = 0.0
            m_hi[r] = INF
        else:
            m_hi[r] = cu[j_ml - 1] / res if j_ml >= 1 else INF
            m_lo[r] = cu[j_ml] / res if j_ml < min(N_MAINLINE, nc) else 0.0


_auction_batch_fast = kernel(_auction_batch)


class LogBatch:
    """Columnar in-memory log of simulated query records."""

    FIELDS = ("cluster", "g", "eps", "m", "alpha_used", "slate", "nml",
              "prices", "prices_bid", "clicks", "q_est", "y", "z", "z_bid",
              "m_lo", "m_hi")

    def __init__(self, world: World, policy: Policy, seed: int, columns: Dict[str, np.ndarray]):
        self.world = world
        self.policy = policy
        self.seed = seed
        self.columns = columns
        self.n = len(columns["y"])

    def __getattr__(self, name):
        cols = self.__dict__.get("columns")
        if cols is not None and name in cols:
            return cols[name]
        raise AttributeError(name)

    def __len__(self):
        return self.n

    def clicked_prices(self):
        return self.prices * self.clicks

    def ad_value(self):
        """Sum of advertiser click values collected on each page."""
        v = self.world.values[self.world.advertiser]
        placed = np.where(self.slate >= 0, self.slate, 0)
        return np.sum(v[placed] * self.clicks * (self.slate >= 0), axis=1)

    def advertiser_outcomes(self, a_id: int, ledger: str = "bid"):
        """Per-record clicks and cost attributed to one advertiser."""
        mine = (self.slate >= 0) & (self.world.advertiser[
            np.where(self.slate >= 0, self.slate, 0)] == a_id)
        clicks = np.sum(self.clicks * mine, axis=1).astype(float)
        base = self.prices_bid if ledger == "bid" else self.prices
        cost = np.sum(base * self.clicks * mine, axis=1)
        expo = np.sum(mine, axis=1).astype(float)
        return clicks, cost, expo


def _run_chunk(world, policy, seed, i0, count, out, fast=True):
    d = base_draws(world, policy, seed, i0, count)
    sl = slice(i0 - out["_base"], i0 - out["_base"] + count)
    fn = _auction_batch_fast if fast else _auction_batch
    fn(world.bids, world.beta, world.advertiser, world.config.n_advertisers,
       world.gamma, world.reserve,
       d["cluster"], d["g"], d["m"], d["alpha_used"], d["elig"], d["bidmult"],
       d["qjit"], d["uclick"],
       out["slate"][sl], out["nml"][sl], out["prices"][sl],
       out["prices_bid"][sl], out["clicks"][sl], out["q_est"][sl],
       out["y"][sl], out["z"][sl], out["z_bid"][sl],
       out["m_lo"][sl], out["m_hi"][sl])
    for name in ("cluster", "g", "eps", "m", "alpha_used"):
        out[name][sl] = d[name]


def simulate(world: World, policy: Policy, n: int, seed: int,
             threads: int = 1, chunk: int = 1 << 16) -> LogBatch:
    """Simulate n query records under the given policy.

    Byte-identical output for any chunk size or thread count: every record's
    randomness is addressed by (seed, node, record index) alone.
    """
    chunk = max(4, (chunk // 4) * 4)
    out = {
        "_base": 0,
        "cluster": np.zeros(n, dtype=np.int64),
        "g": np.zeros(n), "eps": np.zeros(n), "m": np.zeros(n),
        "alpha_used": np.zeros(n),
        "slate": np.full((n, N_SLOTS), -1, dtype=np.int64),
        "nml": np.zeros(n, dtype=np.int64),
        "prices": np.zeros((n, N_SLOTS)), "prices_bid": np.zeros((n, N_SLOTS)),
        "clicks": np.zeros((n, N_SLOTS), dtype=np.uint8),
        "q_est": np.zeros((n, N_SLOTS)),
        "y": np.zeros(n, dtype=np.int64), "z": np.zeros(n), "z_bid": np.zeros(n),
        "m_lo": np.zeros(n), "m_hi": np.zeros(n),
    }
    starts = list(range(0, n, chunk))
    if threads > 1 and len(starts) > 1:
        import concurrent.futures as cf
        with cf.ThreadPoolExecutor(max_workers=threads) as ex:
            futs = [ex.submit(_run_chunk, world, policy, seed, i0,
                              min(chunk, n - i0), out) for i0 in starts]
            for f in futs:
                f.result()
    else:
        for i0 in starts:
            _run_chunk(world, policy, seed, i0, min(chunk, n - i0), out)
    del out["_base"]
    return LogBatch(world, policy, seed, out)


def replay_slates(world: World, batch: LogBatch, multiplier: np.ndarray,
                  policy: Optional[Policy] = None) -> np.ndarray:
    """Re-run placement for every record with overridden reserve multipliers.

    Returns the (n, N_SLOTS) slate array the auction would have produced,
    holding every other exogenous draw fixed.  Used by stability-interval
    checks and the replayable predictors.
    """
    policy = policy or batch.policy
    n = batch.n
    multiplier = np.broadcast_to(np.asarray(multiplier, dtype=float), (n,))
    out = {
        "_base": 0,
        "slate": np.full((n, N_SLOTS), -1, dtype=np.int64),
        "nml": np.zeros(n, dtype=np.int64),
        "prices": np.zeros((n, N_SLOTS)), "prices_bid": np.zeros((n, N_SLOTS)),
        "clicks": np.zeros((n, N_SLOTS), dtype=np.uint8),
        "q_est": np.zeros((n, N_SLOTS)),
        "y": np.zeros(n, dtype=np.int64), "z": np.zeros(n), "z_bid": np.zeros(n),
        "m_lo": np.zeros(n), "m_hi": np.zeros(n),
    }
    i0 = 0
    chunk = 1 << 16
    while i0 < n:
        count = min(chunk, n - i0)
        d = base_draws(world, policy, batch.seed, i0, count)
        sl = slice(i0, i0 + count)
        _auction_batch_fast(
            world.bids, world.beta, world.advertiser, world.config.n_advertisers,
            world.gamma, world.reserve,
            d["cluster"], d["g"], multiplier[sl], d["alpha_used"], d["elig"],
            d["bidmult"], d["qjit"], d["uclick"],
            out["slate"][sl], out["nml"][sl], out["prices"][sl],
            out["prices_bid"][sl], out["clicks"][sl], out["q_est"][sl],
            out["y"][sl], out["z"][sl], out["z_bid"][sl],
            out["m_lo"][sl], out["m_hi"][sl])
        i0 += count
    return out["slate"], out


# ---------------------------------------------------------------------------
# Reference (instance-level) auction functions.  These operate on explicit
# small instances, support arbitrary layouts, and serve as the oracle the
# batch kernel is validated against.

@dataclass
class AuctionInstance:
    """One explicit auction: ads with bids/quality/advertiser, layouts of
    positions with exposure gamma and reserve floors (in score space)."""

    bids: np.ndarray
    quality: np.ndarray
    advertiser: np.ndarray
    layouts: tuple      # each layout: tuple of (gamma, floor) pairs, gamma desc
    alpha: float = 1.0

    def scores(self):
        return np.asarray(self.bids) * np.asarray(self.quality) ** self.alpha


def _layout_slate(inst: AuctionInstance, layout, scores):
    """Greedy fill of one layout; None if infeasible.

    Positions are ordered by exposure; each takes the best remaining
    candidate clearing its floor.  Exact when the floors are nonincreasing
    along that order (the paper's regime); instances here must satisfy it.
    """
    best = {}
    for i in sorted(range(len(scores)), key=lambda i: (-scores[i], i)):
        a = inst.advertiser[i]
        if a not in best:
            best[a] = i
    cand = sorted(best.values(), key=lambda i: (-scores[i], i))
    used = set()
    picks = []
    for gamma, floor in layout:
        pick = None
        for i in cand:
            if i in used:
                continue
            if scores[i] >= floor:
                pick = i
                break
            break  # candidates sorted desc: nobody later clears the floor
        if pick is None:
            return None, -np.inf
        used.add(pick)
        picks.append(pick)
    total = sum(g * scores[i] for (g, _), i in zip(layout, picks))
    return tuple(picks), total


def greedy_placement(inst: AuctionInstance):
    """Slate maximizing total rank-score over all layouts.

    Returns (layout index, ad tuple, total).  The empty layout (index -1)
    wins only when no layout is feasible.
    """
    best = (-1, (), 0.0)
    scores = inst.scores()
    for li, layout in enumerate(inst.layouts):
        picks, total = _layout_slate(inst, layout, scores)
        if picks is not None and total > best[2]:
            best = (li, picks, total)
    return best


def brute_force_placement(inst: AuctionInstance):
    """Exhaustive maximum over layouts and ad-to-position injections."""
    from itertools import permutations
    scores = inst.scores()
    A = len(scores)
    best = (-1, (), 0.0)
    for li, layout in enumerate(inst.layouts):
        P = len(layout)
        if P > A:
            continue
        for picks in permutations(range(A), P):
            advs = [inst.advertiser[i] for i in picks]
            if len(set(advs)) < P:
                continue
            if any(scores[i] < floor for i, (_, floor) in zip(picks, layout)):
                continue
            total = sum(g * scores[i] for i, (g, _) in zip(picks, layout))
            if total > best[2]:
                best = (li, tuple(picks), total)
    return best


def gsp_prices(inst: AuctionInstance, slate=None, tol_bits: int = 80):
    """GSP price per placed ad: smallest own bid keeping the slate identical.

    Computed by bisection on the bid, replaying the full placement; exact to
    floating-point resolution.  Raises InconsistentSlateError if the given
    slate is not the auction outcome of the instance.
    """
    li, picks, _ = greedy_placement(inst)
    if slate is not None and tuple(slate) != tuple(picks):
        raise InconsistentSlateError(f"expected slate {picks}, got {tuple(slate)}")
    prices = []
    for i in picks:
        b0 = inst.bids[i]
        lo, hi = 0.0, b0
        bids = np.array(inst.bids, dtype=float)

        def same(b):
            bids[i] = b
            test = AuctionInstance(bids, inst.quality, inst.advertiser,
                                   inst.layouts, inst.alpha)
            li2, picks2, _ = greedy_placement(test)
            return li2 == li and picks2 == picks

        if same(0.0):
            prices.append(0.0)
            continue
        for _ in range(tol_bits):
            mid = 0.5 * (lo + hi)
            if mid == lo or mid == hi:
                break
            if same(mid):
                hi = mid
            else:
                lo = mid
        prices.append(hi)
    return tuple(picks), tuple(prices)


def slate_interval(world: World, batch: LogBatch, r: int):
    """Reserve-multiplier stability interval (m_lo, m_hi] of record r."""
    return float(batch.m_lo[r]), float(batch.m_hi[r])


def slate_probability_mc(world: World, batch: LogBatch, r: int,
                         policy: Policy, n_mc: int, seed: int = 0,
                         match_clicked_prices: bool = False,
                         price_tol: float = 1e-6):
    """Monte-Carlo probability that the given policy's score randomization
    reproduces record r's slate (optionally also its clicked prices).

    Supports multi-dimensional score randomization (one multiplier per ad
    score) where no closed-form stability interval exists.  Returns
    (estimate, binomial standard error).
    """
    rng = Generator(Philox(key=[seed, (1 << 20) + r]))
    cfg = world.config
    d = base_draws(world, batch.policy, batch.seed, (r // 4) * 4, 4)
    off = r % 4
    k = int(d["cluster"][off])
    elig = d["elig"][off]
    g_int = float(d["g"][off])
    target = batch.slate[r]
    target_cp = batch.prices[r] * batch.clicks[r]
    hits = 0
    A = cfg.n_ads
    one = np.ones((1, A))
    for _ in range(n_mc):
        mult = lognormal.sample(policy.rho, policy.sigma, rng.standard_normal(1)) \
            if policy.sigma > 0 else np.array([policy.rho])
        if policy.bid_spread > 0:
            bm = lognormal.sample(1.0, policy.bid_spread,
                                  rng.standard_normal((1, A)))
        else:
            bm = one
        o = _empty_out(1)
        _auction_batch_fast(
            world.bids, world.beta, world.advertiser, cfg.n_advertisers,
            world.gamma, world.reserve,
            np.array([k], dtype=np.int64), np.array([g_int]), mult,
            np.array([policy.alpha]), elig[None, :].copy(), bm,
            d["qjit"][off:off + 1].copy(),
            np.zeros((1, N_SLOTS)) + 2.0,  # uniform > 1: clicks off
            o["slate"], o["nml"], o["prices"], o["prices_bid"], o["clicks"],
            o["q_est"], o["y"], o["z"], o["z_bid"], o["m_lo"], o["m_hi"])
        if np.array_equal(o["slate"][0], target):
            if match_clicked_prices:
                cp = o["prices"][0] * batch.clicks[r]
                if np.all(np.abs(cp - target_cp) <=
                          price_tol * (1.0 + np.abs(target_cp))):
                    hits += 1
            else:
                hits += 1
    p = hits / n_mc
    se = np.sqrt(max(p * (1 - p), 1.0 / n_mc) / n_mc)
    return p, se


def _empty_out(n):
    return {
        "slate": np.full((n, N_SLOTS), -1, dtype=np.int64),
        "nml": np.zeros(n, dtype=np.int64),
        "prices": np.zeros((n, N_SLOTS)), "prices_bid": np.zeros((n, N_SLOTS)),
        "clicks": np.zeros((n, N_SLOTS), dtype=np.uint8),
        "q_est": np.zeros((n, N_SLOTS)),
        "y": np.zeros(n, dtype=np.int64), "z": np.zeros(n), "z_bid": np.zeros(n),
        "m_lo": np.zeros(n), "m_hi": np.zeros(n),
    }
