"""Tests for the confounding demonstration tables."""

import pytest

from cfads import demos


def test_kidney_table_frozen_cells():
    t = demos.KIDNEY_TABLE
    assert t["treatment_a"]["overall"] == (273, 350)
    assert t["treatment_a"]["small_stones"] == (81, 87)
    assert t["treatment_a"]["large_stones"] == (192, 263)
    assert t["treatment_b"]["overall"] == (289, 350)
    assert t["treatment_b"]["small_stones"] == (234, 270)
    assert t["treatment_b"]["large_stones"] == (55, 80)


def test_simpson_table_rates_and_reversal():
    out = demos.simpson_table()
    assert out["treatment_a"]["overall"]["rate"] == 78.0
    assert out["treatment_b"]["overall"]["rate"] == 82.6
    assert out["treatment_a"]["small_stones"]["rate"] == 93.1
    assert out["treatment_b"]["small_stones"]["rate"] == 86.7
    assert out["treatment_a"]["large_stones"]["rate"] == 73.0
    assert out["treatment_b"]["large_stones"]["rate"] == 68.8
    assert out["reversal"] is True


def test_second_ad_table_frozen_cells():
    t = demos.SECOND_AD_TABLE
    assert t["q1_low"]["overall"] == (124, 2000)
    assert t["q1_low"]["q2_low"] == (92, 1823)
    assert t["q1_low"]["q2_high"] == (32, 176)
    assert t["q1_high"]["overall"] == (149, 2000)
    assert t["q1_high"]["q2_low"] == (71, 1500)
    assert t["q1_high"]["q2_high"] == (78, 500)


def test_second_ad_table_reversal():
    out = demos.second_ad_table()
    assert out["q1_low"]["overall"]["rate"] == 6.2
    assert out["q1_high"]["overall"]["rate"] == 7.5
    assert out["reversal"] is True


def test_synthetic_study_structure_and_reversal():
    out = demos.synthetic_second_ad_study(n=400000, seed=710)
    for g in ("q1_low", "q1_high"):
        assert out[g]["overall"]["denominator"] == 2000
        n_lo = out[g]["q2_low"]["denominator"]
        n_hi = out[g]["q2_high"]["denominator"]
        assert n_lo + n_hi == 2000
    # higher scores go with more q2_high pages, as in the published table
    assert (out["q1_high"]["q2_high"]["denominator"]
            > out["q1_low"]["q2_high"]["denominator"])
    assert out["reversal"] is True
