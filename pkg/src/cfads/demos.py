"""Confounding demonstrations.

Two embedded data tables reproduce classic published numbers: the kidney
stone treatment comparison and the click-through rates of the second
mainline ad split by click probability estimates.  A companion synthetic
study rebuilds the second situation inside the simulator: query
commercialness raises the click probability estimates of every ad while
actual click propensity does not rise along (the estimates overshoot on
commercial traffic), so the overall comparison and the stratified
comparison disagree, exactly the reversal pattern of the published table.
"""

from __future__ import annotations

import numpy as np

from .world import World, WorldConfig, Policy, simulate

__all__ = ["KIDNEY_TABLE", "SECOND_AD_TABLE", "simpson_table",
           "second_ad_table", "synthetic_second_ad_study",
           "table2_demo_config"]

# success rate cells: (successes, trials) per (treatment, stratum)
KIDNEY_TABLE = {
    "treatment_a": {"overall": (273, 350), "small_stones": (81, 87),
                    "large_stones": (192, 263)},
    "treatment_b": {"overall": (289, 350), "small_stones": (234, 270),
                    "large_stones": (55, 80)},
}

# clicks on the second mainline ad: (clicks, pages) per (q1 group, stratum)
SECOND_AD_TABLE = {
    "q1_low": {"overall": (124, 2000), "q2_low": (92, 1823),
               "q2_high": (32, 176)},
    "q1_high": {"overall": (149, 2000), "q2_low": (71, 1500),
                "q2_high": (78, 500)},
}


def _rates(table):
    return {group: {stratum: dict(numerator=c, denominator=n,
                                  rate=round(100.0 * c / n, 1))
                    for stratum, (c, n) in cells.items()}
            for group, cells in table.items()}


def simpson_table():
    """Kidney stone cells with percentages, plus the reversal verdict."""
    out = _rates(KIDNEY_TABLE)
    a, b = out["treatment_a"], out["treatment_b"]
    out["reversal"] = (b["overall"]["rate"] > a["overall"]["rate"]
                       and a["small_stones"]["rate"] > b["small_stones"]["rate"]
                       and a["large_stones"]["rate"] > b["large_stones"]["rate"])
    return out


def second_ad_table():
    """Second-mainline-ad cells with percentages, plus the reversal verdict."""
    out = _rates(SECOND_AD_TABLE)
    lo, hi = out["q1_low"], out["q1_high"]
    out["reversal"] = (hi["overall"]["rate"] > lo["overall"]["rate"]
                       and lo["q2_low"]["rate"] > hi["q2_low"]["rate"]
                       and lo["q2_high"]["rate"] > hi["q2_high"]["rate"])
    return out


def table2_demo_config() -> WorldConfig:
    """World where commercial queries have inflated quality estimates.

    Commercialness lifts every ad's quality estimate (hence the scores q1,
    q2 and the chance of filling both mainline slots) but lowers actual
    click propensity; the user intention is the common cause of q1 and the
    clicks of the second ad."""
    return WorldConfig(
        n_clusters=2, cluster_probs=(0.5, 0.5), commercial=(0.05, 0.95),
        n_ads=8, n_advertisers=6, world_seed=4242,
        bid_shape=1.2, bid_min=0.3, bid_max=3.0,
        beta_min=0.03, beta_max=0.22, beta_commercial_lift=2.2,
        elig_prob=0.55, intent_a=2.0, intent_b=4.0,
        intent_base=0.95, intent_commercial_slope=-0.55,
        quality_spread=0.25,
        reserve_levels=(0.015, 0.015),
    )


def synthetic_second_ad_study(n: int = 400000, seed: int = 710,
                              config: WorldConfig = None,
                              group_size: int = 2000):
    """Re-create the second-ad confounding table from simulated pages.

    Keeps pages with two mainline ads, splits them at the median q1 into
    two groups of ``group_size`` randomly chosen pages, then stratifies
    each group at the pooled median q2.  Returns the same nested structure
    as ``second_ad_table`` computed on the synthetic log.
    """
    w = World(config or table2_demo_config())
    b = simulate(w, Policy(rho=1.0, sigma=0.3), n, seed)
    full = b.nml == 2
    q1 = b.q_est[full, 0]
    q2 = b.q_est[full, 1]
    click2 = b.clicks[full, 1].astype(int)
    t1 = np.median(q1)
    t2 = np.median(q2)
    rng = np.random.default_rng(seed + 1)
    table = {}
    for gname, sel in (("q1_low", q1 < t1), ("q1_high", q1 >= t1)):
        idx = np.where(sel)[0]
        if idx.size > group_size:
            idx = rng.choice(idx, size=group_size, replace=False)
        cells = {}
        cells["overall"] = (int(np.sum(click2[idx])), idx.size)
        for sname, ssel in (("q2_low", q2[idx] < t2), ("q2_high", q2[idx] >= t2)):
            sub = idx[ssel]
            cells[sname] = (int(np.sum(click2[sub])), max(sub.size, 1))
        table[gname] = cells
    out = _rates(table)
    lo, hi = out["q1_low"], out["q1_high"]
    out["reversal"] = (hi["overall"]["rate"] > lo["overall"]["rate"]
                       and lo["q2_low"]["rate"] > hi["q2_low"]["rate"]
                       and lo["q2_high"]["rate"] > hi["q2_high"]["rate"])
    out["thresholds"] = dict(q1=float(t1), q2=float(t2))
    return out
