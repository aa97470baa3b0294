"""Throughput comparison of the compiled and pure-numpy auction kernels.

Runs the simulator in two subprocesses, one with CFADS_NO_NUMBA=1, and
reports records per second for each backend (compilation time excluded by
a warmup pass).

Usage: python3 benchmarks/bench_backends.py [n]
"""

import json
import os
import subprocess
import sys

WORKER = r"""
import json, os, sys, time
from cfads._backend import backend_name
from cfads.world import World, WorldConfig, Policy, simulate

n = int(sys.argv[1])
w = World(WorldConfig())
p = Policy(alpha=1.0, rho=1.0, sigma=0.3)
simulate(w, p, 4096, seed=0)       # warmup / jit compile
t0 = time.perf_counter()
b = simulate(w, p, n, seed=1, threads=4)
dt = time.perf_counter() - t0
print(json.dumps({"backend": backend_name(), "n": n, "seconds": dt,
                  "records_per_second": n / dt,
                  "mean_clicks": float(b.y.mean())}))
"""


def run(n, no_numba):
    env = dict(os.environ)
    if no_numba:
        env["CFADS_NO_NUMBA"] = "1"
    else:
        env.pop("CFADS_NO_NUMBA", None)
    out = subprocess.run([sys.executable, "-c", WORKER, str(n)],
                         capture_output=True, text=True, env=env, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 400000
    fast = run(n, no_numba=False)
    slow = run(max(n // 10, 4096), no_numba=True)
    for r in (fast, slow):
        print(f"{r['backend']:>6}: {r['records_per_second']:>12.0f} records/s "
              f"({r['n']} records in {r['seconds']:.2f} s)")
    if fast["mean_clicks"] != slow["mean_clicks"] and slow["n"] == fast["n"]:
        print("warning: backends disagree on mean clicks")
    speedup = fast["records_per_second"] / slow["records_per_second"]
    print(f"speedup: {speedup:.1f}x")


if __name__ == "__main__":
    main()
