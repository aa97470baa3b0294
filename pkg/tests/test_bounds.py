"""Oracle and property tests for the concentration bounds."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cfads import bounds

# frozen oracle values for the inverse error function
ERFINV_TABLE = [
    (0.1, 0.08885599049425769),
    (0.5, 0.4769362762044699),
    (0.9, 1.1630871536766743),
    (0.95, 1.3859038243496777),
    (0.975, 1.5849110680594843),
    (-0.5, -0.4769362762044699),
    (0.999, 2.3267537655135246),
]


def test_erfinv_against_frozen_table():
    for x, want in ERFINV_TABLE:
        assert bounds.erfinv(x) == pytest.approx(want, abs=5e-14)


def test_erfinv_roundtrip():
    from scipy.special import erf
    xs = np.linspace(-0.9995, 0.9995, 401)
    assert np.max(np.abs(erf(bounds.erfinv(xs)) - xs)) < 1e-14


def test_erfinv_rejects_out_of_range():
    with pytest.raises(ValueError):
        bounds.erfinv(1.0)


def test_sample_variance_matches_numpy():
    rng = np.random.default_rng(3)
    x = rng.random(1001)
    assert bounds.sample_variance(x) == pytest.approx(np.var(x, ddof=1), rel=1e-12)


def test_clt_halfwidth_closed_form():
    # oracle: erfinv(0.975) * sqrt(2 * V / n) computed by hand
    x = np.array([0.0, 1.0, 2.0, 3.0] * 25)
    v = np.var(x, ddof=1)
    want = 1.5849110680594843 * np.sqrt(2.0 * v / 100)
    assert bounds.clt_halfwidth(x, 0.025) == pytest.approx(want, rel=1e-12)


def test_bernstein_zero_variance_closed_form():
    # all samples equal: width must be exactly range * 7 log(2/delta) / (3(n-1))
    for n, delta, rng_w in [(100, 0.025, 1.0), (5000, 0.01, 3.5), (37, 0.2, 0.25)]:
        x = np.full(n, 0.7)
        want = rng_w * 7.0 * np.log(2.0 / delta) / (3.0 * (n - 1))
        got = bounds.bernstein_halfwidth(x, rng_w, delta)
        assert abs(got - want) <= 1e-12 * max(1.0, abs(want))


def test_bernstein_closed_form_general():
    x = np.array([0.1, 0.9, 0.4, 0.6, 0.2, 0.8])
    delta = 0.05
    L = np.log(2 / delta)
    v = np.var(x, ddof=1)
    want = np.sqrt(2 * v * L / 6) + 1.0 * 7 * L / (3 * 5)
    assert bounds.bernstein_halfwidth(x, 1.0, delta) == pytest.approx(want, rel=1e-12)


def test_bernstein_coverage_uniform():
    # mean of n uniform(0,1) draws within the bound with prob >= 1 - delta
    rng = np.random.default_rng(7)
    delta, n, reps = 0.05, 200, 2000
    miss = 0
    for _ in range(reps):
        x = rng.random(n)
        w = bounds.bernstein_halfwidth(x, 1.0, delta)
        if abs(np.mean(x) - 0.5) > w:
            miss += 1
    assert miss / reps <= delta


@given(st.integers(10, 400), st.floats(0.01, 0.2), st.floats(0.1, 5.0))
@settings(max_examples=60, deadline=None)
def test_bernstein_monotone_in_range(n, delta, rng_w):
    rng = np.random.default_rng(n)
    x = rng.random(n) * rng_w
    w1 = bounds.bernstein_halfwidth(x, rng_w, delta)
    w2 = bounds.bernstein_halfwidth(x, 2 * rng_w, delta)
    assert w2 >= w1


@given(st.floats(0.01, 0.2))
@settings(max_examples=30, deadline=None)
def test_widths_shrink_with_n(delta):
    rng = np.random.default_rng(11)
    x = rng.random(4000)
    small = bounds.bernstein_halfwidth(x[:400], 1.0, delta)
    large = bounds.bernstein_halfwidth(x, 1.0, delta)
    assert large < small


def test_inner_slack_is_bernstein_on_weights():
    rng = np.random.default_rng(1)
    w = np.minimum(rng.lognormal(0, 0.4, 500), 3.0)
    assert bounds.inner_slack(w, 3.0, 0.025) == pytest.approx(
        bounds.bernstein_halfwidth(w, 3.0, 0.025), rel=1e-12)


def test_envelope_inner_bounds_ordering_and_scaling():
    rng = np.random.default_rng(5)
    w = np.clip(rng.lognormal(0, 0.3, 1000), 0, 2.0)
    lo, hi = bounds.envelope_inner_bounds(w, 0.0, 4.0, 2.0, 0.025)
    assert lo <= hi
    # zero envelopes collapse the interval to the slack only
    lo0, hi0 = bounds.envelope_inner_bounds(w, 0.0, 0.0, 2.0, 0.025)
    assert lo0 == 0.0 and hi0 == 0.0


def test_uniform_finite_grid_wider_than_pointwise():
    rng = np.random.default_rng(9)
    G, n = 8, 500
    vals = rng.random((G, n))
    wts = np.clip(rng.lognormal(0, 0.3, (G, n)), 0, 4.0)
    eps_u, xi_u = bounds.uniform_halfwidths(vals, wts, np.full(G, 4.0), 1.0,
                                            0.05, mode="finite_grid")
    for g in range(G):
        assert eps_u[g] >= bounds.bernstein_halfwidth(vals[g], 4.0, 0.05)
        assert xi_u[g] >= bounds.inner_slack(wts[g], 4.0, 0.05)


def test_uniform_covering_number_mode():
    rng = np.random.default_rng(13)
    vals = rng.random((3, 64))
    wts = np.ones((3, 64))
    eps, xi = bounds.uniform_halfwidths(vals, wts, np.ones(3), 1.0, 0.05,
                                        mode="covering_number",
                                        covering_fn=lambda n: n ** 2)
    # oracle: recompute the closed form directly
    M = 10.0 * (128 ** 2)
    L = np.log(M / 0.05)
    v = np.var(vals[0], ddof=1)
    want = np.sqrt(18 * v * L / 64) + 1.0 * 15 * L / 63
    assert eps[0] == pytest.approx(want, rel=1e-12)
    with pytest.raises(ValueError):
        bounds.uniform_halfwidths(vals[:, :8], wts[:, :8], np.ones(3), 1.0,
                                  0.05, mode="covering_number",
                                  covering_fn=lambda n: n)


def test_clt_variance_correction_widens():
    rng = np.random.default_rng(21)
    x = rng.random(300)
    plain = bounds.clt_halfwidth(x, 0.025)
    corrected = bounds.clt_halfwidth(x, 0.025, variance_correction=True,
                                     range_width=1.0)
    assert corrected > plain
