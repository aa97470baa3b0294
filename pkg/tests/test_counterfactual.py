"""Tests for the clipped importance-weighted estimators."""

import numpy as np
import pytest

from cfads import counterfactual as cf
from cfads import lognormal as ln
from cfads.world import Policy, World, WorldConfig, simulate


def make_batch(n=40000, rho=1.0, sigma=0.3, seed=101, **world_kw):
    kw = dict(n_clusters=2, commercial=(0.2, 0.8), n_ads=8, n_advertisers=5,
              world_seed=11)
    kw.update(world_kw)
    w = World(WorldConfig(**kw))
    p = Policy(alpha=1.0, rho=rho, sigma=sigma)
    return w, p, simulate(w, p, n, seed=seed)


# --- weights --------------------------------------------------------------

def test_score_weights_are_density_ratios():
    w, p, b = make_batch(n=2000)
    wt = cf.score_weights(b, 1.3)
    want = ln.pdf(b.m, 1.3, p.sigma) / ln.pdf(b.m, p.rho, p.sigma)
    assert np.allclose(wt, want, rtol=1e-12)


def test_score_weights_identity_policy():
    w, p, b = make_batch(n=1000)
    assert np.allclose(cf.score_weights(b, p.rho, p.sigma), 1.0, atol=1e-12)


def test_score_weights_mean_one():
    w, p, b = make_batch(n=200000)
    wt = cf.score_weights(b, 1.2)
    assert np.mean(wt) == pytest.approx(1.0, abs=0.02)


def test_score_weights_per_record_rho():
    w, p, b = make_batch(n=1000)
    rho_star = np.where(b.cluster == 0, 0.9, 1.4)
    wt = cf.score_weights(b, rho_star)
    want = ln.pdf(b.m, rho_star, p.sigma) / ln.pdf(b.m, p.rho, p.sigma)
    assert np.allclose(wt, want, rtol=1e-12)


def test_slate_weights_dominate_score_weights_in_spread():
    # interval-mass ratios are less dispersed than density ratios
    w, p, b = make_batch(n=50000)
    ws = cf.score_weights(b, 1.25)
    wl = cf.slate_weights(b, 1.25)
    assert np.var(wl) < np.var(ws)
    assert np.mean(wl) == pytest.approx(1.0, abs=0.02)


def test_slate_weights_trivial_interval_forced_one():
    w, p, b = make_batch(n=20000)
    trivial = (b.m_lo <= 0) & np.isinf(b.m_hi)
    assert np.any(trivial)
    wl = cf.slate_weights(b, 1.5)
    assert np.all(wl[trivial] == 1.0)


def test_slate_weights_match_mc_probability_ratio():
    from cfads.world import slate_probability_mc
    w, p, b = make_batch(n=64, seed=5)
    r = int(np.argmax(np.isfinite(b.m_hi) & (b.m_lo > 0)))
    wl = cf.slate_weights(b, 1.3)
    p_star = Policy(alpha=p.alpha, rho=1.3, sigma=p.sigma)
    p_num, se_num = slate_probability_mc(w, b, r, p_star, n_mc=6000, seed=3)
    p_den, se_den = slate_probability_mc(w, b, r, p, n_mc=6000, seed=4)
    if p_den > 0.05:
        ratio = p_num / p_den
        tol = 5 * (se_num / p_den + se_den * p_num / p_den ** 2 + 0.02)
        assert abs(wl[r] - ratio) < tol


# --- clipping -------------------------------------------------------------

def test_resolve_clip_fifth_largest():
    w = np.array([5.0, 1.0, 9.0, 3.0, 7.0, 2.0, 8.0])
    assert cf.resolve_clip(w) == 3.0
    assert cf.resolve_clip(w, 2.5) == 2.5
    with pytest.raises(ValueError):
        cf.resolve_clip(np.ones(4))
    with pytest.raises(ValueError):
        cf.resolve_clip(w, -1.0)
    with pytest.raises(ValueError):
        cf.resolve_clip(w, "sixth_largest")


def test_clip_is_strict_and_cap_is_not():
    w = np.array([0.5, 2.0, 3.0])
    assert np.array_equal(cf.clip_weights(w, 2.0), [0.5, 0.0, 0.0])
    assert np.array_equal(cf.cap_weights(w, 2.0), [0.5, 2.0, 2.0])


# --- point estimates and intervals ----------------------------------------

def test_estimate_identity_weights_recovers_mean():
    rng = np.random.default_rng(0)
    vals = rng.random(5000) * 2.0
    est = cf.estimate(vals, np.ones(5000), range_bound=2.0, clip=1.5)
    assert est.point == pytest.approx(np.mean(vals), rel=1e-12)
    assert est.weight_mass == pytest.approx(1.0)
    assert est.final[0] <= np.mean(vals) <= est.final[1]


def test_estimate_interval_structure():
    rng = np.random.default_rng(1)
    vals = rng.random(8000)
    wts = np.clip(rng.lognormal(0, 0.4, 8000), 0, None)
    est = cf.estimate(vals, wts, range_bound=1.0, delta=0.025)
    assert est.outer[0] <= est.point <= est.outer[1]
    assert est.final[0] == est.outer[0]
    assert est.final[1] == pytest.approx(est.outer[1] + est.inner[1])
    assert est.confidence == pytest.approx(1 - 3 * 0.025)
    est_clt = cf.estimate(vals, wts, range_bound=1.0, method="clt")
    assert est_clt.confidence == pytest.approx(1 - 2 * 0.025)
    assert est.halfwidth() == pytest.approx(
        0.5 * (est.final[1] - est.final[0]))


def test_estimate_covers_brute_force_truth():
    """Coverage oracle: reweighted estimate vs direct simulation at the
    target policy over repeated log draws."""
    w, p, _ = make_batch(n=4)
    target = Policy(alpha=1.0, rho=1.25, sigma=0.3)
    truth = float(np.mean(simulate(w, target, 400000, seed=999).y))
    misses = 0
    for rep in range(20):
        b = simulate(w, p, 20000, seed=3000 + rep)
        vals, M = cf.quantity_values(b, "clicks")
        wt = cf.slate_weights(b, 1.25)
        est = cf.estimate(vals, wt, range_bound=M, delta=0.025)
        if not (est.final[0] <= truth <= est.final[1]):
            misses += 1
        assert abs(est.point - truth) < 0.15 * max(truth, 0.05)
    assert misses <= 2


def test_quantity_values_ranges():
    w, p, b = make_batch(n=1000, values=(1.0, 2.0, 3.0, 4.0, 5.0))
    for q in cf.QUANTITIES:
        vals, M = cf.quantity_values(b, q)
        assert vals.shape == (1000,)
        assert np.all(vals >= 0) and np.all(vals <= M)
    with pytest.raises(KeyError):
        cf.quantity_values(b, "nonsense")


# --- predictors and differences -------------------------------------------

def test_predictor_invariance_check():
    w, _, _ = make_batch(n=4)
    ok = cf.Predictor(fn=lambda b: b.g, fields=("g", "cluster"))
    ok.check_invariant(w)
    bad = cf.Predictor(fn=lambda b: b.y, fields=("y",))
    with pytest.raises(cf.InvalidPredictorError):
        bad.check_invariant(w)
    unknown = cf.Predictor(fn=lambda b: b.g, fields=("mystery",))
    with pytest.raises(cf.InvalidPredictorError):
        unknown.check_invariant(w)


def test_estimate_difference_zero_for_equal_policies():
    w, p, b = make_batch(n=20000)
    vals, M = cf.quantity_values(b, "clicks")
    wt = cf.score_weights(b, 1.2)
    point, final, detail = cf.estimate_difference(vals, wt, wt, range_bound=M)
    assert point == 0.0
    assert final[0] <= 0.0 <= final[1]


def test_estimate_difference_sign_and_coverage():
    w, p, _ = make_batch(n=4)
    truth_hi = float(np.mean(simulate(w, Policy(rho=1.3, sigma=0.3),
                                      300000, seed=901).nml))
    truth_lo = float(np.mean(simulate(w, Policy(rho=0.85, sigma=0.3),
                                      300000, seed=902).nml))
    truth = truth_hi - truth_lo
    b = simulate(w, p, 50000, seed=77)
    vals, M = cf.quantity_values(b, "mainline_count")
    wa = cf.slate_weights(b, 1.3)
    wb = cf.slate_weights(b, 0.85)
    point, final, detail = cf.estimate_difference(vals, wa, wb, range_bound=M)
    assert point == pytest.approx(truth, abs=0.08)
    assert final[0] <= truth <= final[1]
    # centering with an invariant predictor narrows the outer deviation
    zeta = np.full(b.n, float(np.mean(vals)))
    _, final_c, detail_c = cf.estimate_difference(
        vals, wa, wb, range_bound=M, predictions=zeta,
        lo_env=-zeta, hi_env=M - zeta)
    assert detail_c["eps"] < detail["eps"]


def test_doubly_robust_matches_plain_when_predictor_zero():
    w, p, b = make_batch(n=20000)
    vals, M = cf.quantity_values(b, "clicks")
    wt = cf.slate_weights(b, 1.2)
    zero = np.zeros(b.n)
    point, final, detail = cf.doubly_robust(vals, wt, zero, zero,
                                            range_bound=M)
    est = cf.estimate(vals, wt, range_bound=M)
    assert point == pytest.approx(est.point, rel=1e-12)


def test_doubly_robust_perfect_predictor_collapses_residual():
    w, p, b = make_batch(n=20000)
    vals, M = cf.quantity_values(b, "clicks")
    wt = cf.slate_weights(b, 1.2)
    point, final, _ = cf.doubly_robust(vals, wt, vals, vals, range_bound=M)
    assert point == pytest.approx(float(np.mean(vals)), rel=1e-12)
    assert final[1] - final[0] < 1e-9


def test_pointwise_extrapolation_identity():
    # when both estimates agree the extrapolation returns the same point
    # with widths 2 eps_small + eps_double
    rng = np.random.default_rng(4)
    vals = rng.random(5000)
    wts = np.ones(5000)
    e1 = cf.estimate(vals, wts, range_bound=1.0, clip=2.0)
    point, ivals = cf.pointwise_extrapolate(e1, e1)
    assert point == pytest.approx(e1.point)
    w1 = e1.outer[1] - e1.outer[0]
    got = ivals["outer"][1] - ivals["outer"][0]
    assert got == pytest.approx(3 * w1, rel=1e-9)


def test_pointwise_extrapolation_toward_deterministic():
    """2 Y_v - Y_2v with sigma pair (0.15, 0.212) approximates the
    deterministic policy value better than either randomized estimate."""
    w, _, _ = make_batch(n=4)
    s1, s2 = 0.15, 0.15 * np.sqrt(2)
    truth = float(np.mean(simulate(w, Policy(rho=1.0, sigma=1e-4),
                                   300000, seed=911).y))
    b1 = simulate(w, Policy(rho=1.0, sigma=s1), 200000, seed=912)
    b2 = simulate(w, Policy(rho=1.0, sigma=s2), 200000, seed=913)
    y1 = float(np.mean(b1.y))
    y2 = float(np.mean(b2.y))
    extrap = 2 * y1 - y2
    assert abs(extrap - truth) <= abs(y2 - truth) + 0.003
