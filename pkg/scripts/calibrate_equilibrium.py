"""Calibration run for the equilibrium acceptance fixture.

Finds equilibrium bids for the controlled three-advertiser world, checks
value recovery and the response-adjusted reserve derivative against
re-equilibrated simulations at shifted reserve scales, and prints the
frozen fixture JSON.

The equilibrium oracle is grid best response (coarse) followed by a damped
parabola-vertex iteration: each advertiser's utility is evaluated on a
local bid grid under common random numbers, a quadratic is fitted, and the
bid moves halfway to the vertex.  The fitted vertex varies smoothly with
the reserve scale, which a plain grid argmax does not (GSP utilities are
nearly flat in the own bid), so the two shifted equilibria resolve bid
responses well below the grid step.
"""
import json

import numpy as np

from cfads import equilibrium as eq
from cfads.world import Policy, World, WorldConfig, simulate

RESERVE = 0.3
cfg = WorldConfig(
    n_clusters=1, cluster_probs=(1.0,), commercial=(0.5,),
    n_ads=3, n_advertisers=3, world_seed=7, elig_prob=1.0,
    explicit_beta=(0.35, 0.30, 0.25), explicit_advertisers=(0, 1, 2),
    explicit_bids=(0.5, 0.9, 1.6), reserve_levels=(RESERVE,),
    quality_spread=0.15, intent_a=2.0, intent_b=3.0,
    intent_base=0.9, intent_commercial_slope=0.4,
)
policy = Policy(rho=1.0, sigma=0.3, bid_spread=0.25)
values = {0: 1.5, 1: 3.0, 2: 5.0}
world = World(cfg)
COARSE = np.round(np.arange(0.1, 5.01, 0.1), 10)


def coarse_nash(w0, n_eval=60000, seed=5150, rounds=12, tol=1e-4):
    bids = w0.bids.copy()
    for rnd in range(rounds):
        changed = False
        for a_id in sorted(values):
            mine = w0.advertiser == a_id
            best_b, best_u = float(bids[mine][0]), -np.inf
            for cand in COARSE:
                trial = bids.copy()
                trial[mine] = cand
                u = eq._utility(w0, policy, trial, a_id, values[a_id],
                                n_eval, seed)
                if u > best_u + tol:
                    best_u, best_b = u, float(cand)
            if not np.allclose(bids[mine], best_b):
                bids[mine] = best_b
                changed = True
        print(f"coarse round {rnd}: bids {bids.tolist()}", flush=True)
        if not changed:
            return bids
    return bids


def refine(w0, start, seed=6200, n_eval=250000, rounds=5, window=0.06):
    offs = np.linspace(-window, window, 13)
    bids = start.astype(float).copy()
    for rnd in range(rounds):
        prev = bids.copy()
        for a_id in sorted(values):
            mine = w0.advertiser == a_id
            b0 = float(bids[mine][0])
            us = []
            for off in offs:
                trial = bids.copy()
                trial[mine] = b0 + off
                us.append(eq._utility(w0, policy, trial, a_id, values[a_id],
                                      n_eval, seed))
            c2, c1, _ = np.polyfit(offs, us, 2)
            vertex = np.clip(-c1 / (2 * c2), -window, window) if c2 < 0 \
                else offs[int(np.argmax(us))]
            bids[mine] = b0 + 0.5 * vertex
        move = float(np.max(np.abs(bids - prev)))
        print(f"refine round {rnd}: bids {bids.tolist()} move {move:.4f}",
              flush=True)
        if move < 0.002:
            break
    return bids


bids = refine(world, coarse_nash(world))
print("nash bids:", bids.tolist(), flush=True)

w_eq = eq._rebid_world(world, bids)
batch = simulate(w_eq, policy, 1_000_000, seed=909, threads=2)
est = eq.estimate_values(w_eq, batch, min_exposures=2000)
for a, ve in sorted(est.items()):
    true = values[a]
    rel = abs(ve.value - true) / true if ve.status == "Interior" else None
    print(f"adv {a}: status={ve.status} value={ve.value} se={ve.se} "
          f"true={true} rel_err={rel}", flush=True)

interior = {a: values[a] for a, ve in est.items() if ve.status == "Interior"}
resp, info = eq.solve_response(w_eq, batch, interior)
print("bid response:", resp, "cond:", info["cond"], flush=True)
tds = {}
for qty in ("revenue", "clicks"):
    tds[qty] = eq.total_derivative(w_eq, batch, qty, resp)
    print(qty, "total derivative:", tds[qty], flush=True)

dth = 0.02
shifted = {}
for sgn in (+1, -1):
    d = json.loads(cfg.to_json())
    d["reserve_levels"] = [RESERVE * (1 + sgn * dth)]
    w2 = World(WorldConfig.from_json(json.dumps(d)))
    b2 = refine(w2, bids)
    batch2 = simulate(eq._rebid_world(w2, b2), policy, 1_000_000, seed=909,
                      threads=2)
    shifted[sgn] = {
        "bids": b2.tolist(),
        "revenue": float(np.mean(batch2.clicked_prices())),
        "clicks": float(np.mean(batch2.y)),
    }
    print("theta shift", sgn, shifted[sgn], flush=True)

for qty in ("revenue", "clicks"):
    fd = (shifted[1][qty] - shifted[-1][qty]) / (2 * dth)
    pred = tds[qty][0]
    rel = abs(pred - fd) / abs(fd) if fd else float("inf")
    print(f"{qty}: fd {fd:.6f} predicted {pred:.6f} rel_err {rel:.3f}",
          flush=True)

fixture = {
    "config": json.loads(cfg.to_json()),
    "policy": {"alpha": policy.alpha, "rho": policy.rho,
               "sigma": policy.sigma, "alpha_spread": policy.alpha_spread,
               "bid_spread": policy.bid_spread},
    "values": {str(a): v for a, v in values.items()},
    "nash_bids": bids.tolist(),
    "bids_up": shifted[1]["bids"],
    "bids_down": shifted[-1]["bids"],
    "dtheta": dth,
}
print("FIXTURE", json.dumps(fixture), flush=True)
