"""Command line interface.

Subcommands: simulate, estimate, sweep, levelcurves, grad, tune,
equilibrium, simpson-demo, table2-demo.  Exit codes: 0 success, 2 usage
error, 3 malformed or inconsistent data.  Grids are written
start:stop:step (stop inclusive up to rounding).  Runs that write an
output file also write <out>.manifest.json describing the run.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys

import numpy as np

from . import __version__, bounds, counterfactual as cf, demos, equilibrium as eq
from . import gradients as gr, logstore, tuner
from ._backend import backend_name
from .world import World, WorldConfig, Policy, simulate

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3


class CliError(Exception):
    def __init__(self, message, code=EXIT_DATA):
        super().__init__(message)
        self.code = code


def parse_grid(text):
    """Parse start:stop:step into an inclusive grid."""
    try:
        start, stop, step = (float(t) for t in text.split(":"))
    except ValueError:
        raise CliError(f"bad grid {text!r}, expected start:stop:step",
                       EXIT_USAGE)
    if step <= 0 or stop < start:
        raise CliError(f"bad grid {text!r}: need step > 0 and stop >= start",
                       EXIT_USAGE)
    count = int(round((stop - start) / step)) + 1
    return [start + i * step for i in range(count)]


def _load_world(path):
    try:
        with open(path) as f:
            return World(WorldConfig.from_json(f.read()))
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}")
    except (json.JSONDecodeError, TypeError, ValueError) as e:
        raise CliError(f"bad config {path}: {e}")


def _load_batch(path):
    try:
        return logstore.load_batch(path)
    except FileNotFoundError:
        raise CliError(f"log file not found: {path}")
    except logstore.LogFormatError as e:
        raise CliError(f"bad log {path}: {e}")


def _write_manifest(out_path, args, extra=None):
    manifest = {
        "tool": "cfads",
        "version": __version__,
        "backend": backend_name(),
        "command": args._command,
        "arguments": {k: v for k, v in sorted(vars(args).items())
                      if not k.startswith("_") and k != "func"},
    }
    if extra:
        manifest.update(extra)
    with open(str(out_path) + ".manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=str)
        f.write("\n")


def _emit(payload, args, fieldnames=None):
    """Write rows/objects as json (default) or csv to --out or stdout."""
    fmt = getattr(args, "format", "json") or "json"
    if fmt == "csv":
        if not isinstance(payload, list):
            raise CliError("csv format needs tabular output", EXIT_USAGE)
        buf = io.StringIO()
        names = fieldnames or list(payload[0].keys())
        wr = csv.DictWriter(buf, fieldnames=names)
        wr.writeheader()
        for row in payload:
            wr.writerow(row)
        text = buf.getvalue()
    else:
        text = json.dumps(payload, indent=2, sort_keys=True, default=float) + "\n"
    out = getattr(args, "out", None)
    if out:
        with open(out, "w") as f:
            f.write(text)
        _write_manifest(out, args)
    else:
        sys.stdout.write(text)


def cmd_simulate(args):
    world = _load_world(args.config)
    policy = Policy(alpha=args.alpha, rho=args.rho, sigma=args.sigma,
                    alpha_spread=args.alpha_spread, bid_spread=args.bid_spread)
    batch = simulate(world, policy, args.n, args.seed, threads=args.threads)
    if not args.out:
        raise CliError("simulate needs --out", EXIT_USAGE)
    logstore.write_log(args.out, batch)
    _write_manifest(args.out, args, extra={
        "config_hash": world.config_hash(),
        "n": args.n, "seed": args.seed,
        "mean_clicks": float(np.mean(batch.y)),
        "mean_mainline": float(np.mean(batch.nml)),
    })
    return EXIT_OK


def _weights_for(batch, args):
    kind = args.weights
    if kind == "slate":
        return cf.slate_weights(batch, args.rho_star, args.sigma_star)
    return cf.score_weights(batch, args.rho_star, args.sigma_star)


def cmd_estimate(args):
    batch = _load_batch(args.log)
    vals, M = cf.quantity_values(batch, args.quantity)
    w = _weights_for(batch, args)
    est = cf.estimate(vals, w, range_bound=M, delta=args.delta,
                      method=args.method)
    _emit({
        "quantity": args.quantity, "rho_star": args.rho_star,
        "sigma_star": args.sigma_star or batch.policy.sigma,
        "weights": args.weights, "method": args.method,
        "point": est.point, "weight_mass": est.weight_mass,
        "clip_level": est.clip_level, "n": est.n, "delta": est.delta,
        "outer": list(est.outer), "inner": list(est.inner),
        "final": list(est.final), "confidence": est.confidence,
    }, args)
    return EXIT_OK


def cmd_sweep(args):
    batch = _load_batch(args.log)
    grid = parse_grid(args.grid)
    rows = tuner.sweep(batch, args.quantity, grid, delta=args.delta,
                       method=args.method, weight_kind=args.weights)
    _emit(rows, args)
    return EXIT_OK


def cmd_levelcurves(args):
    batch = _load_batch(args.log)
    try:
        out = tuner.level_curves(batch, args.quantity, parse_grid(args.rho_grid),
                                 parse_grid(args.alpha_grid), delta=args.delta)
    except ValueError as e:
        raise CliError(str(e))
    rows = []
    for i, r in enumerate(out["rho_grid"]):
        for j, a in enumerate(out["alpha_grid"]):
            rows.append(dict(rho_star=float(r), alpha_star=float(a),
                             point=float(out["point"][i, j]),
                             lower=float(out["lower"][i, j]),
                             upper=float(out["upper"][i, j])))
    _emit(rows, args)
    return EXIT_OK


def cmd_grad(args):
    batch = _load_batch(args.log)
    vals, M = cf.quantity_values(batch, args.quantity)
    sigma_star = args.sigma_star or batch.policy.sigma
    w = cf.score_weights(batch, args.rho_star, sigma_star)
    grad, gse = gr.counterfactual_gradient(vals, w, batch.m, args.rho_star,
                                           sigma_star)
    hess, hse = gr.counterfactual_hessian(vals, w, batch.m, args.rho_star,
                                          sigma_star)
    _emit({
        "quantity": args.quantity, "rho_star": args.rho_star,
        "sigma_star": sigma_star,
        "gradient": {"rho": grad[0], "sigma": grad[1]},
        "gradient_se": {"rho": gse[0], "sigma": gse[1]},
        "hessian": [[hess[0, 0], hess[0, 1]], [hess[1, 0], hess[1, 1]]],
        "hessian_se": [[hse[0, 0], hse[0, 1]], [hse[1, 0], hse[1, 1]]],
    }, args)
    return EXIT_OK


def cmd_tune(args):
    batch = _load_batch(args.log)
    res = tuner.tune(batch, args.objective, parse_grid(args.grid), args.cap,
                     delta=args.delta, weight_kind=args.weights,
                     mode=args.mode)
    _emit({
        "theta": res.theta, "lower_bound": res.lower_bound,
        "constraint_upper": res.constraint_upper,
        "at_boundary": res.at_boundary, "feasible": res.feasible,
        "rows": res.rows,
    }, args)
    return EXIT_OK


def cmd_equilibrium(args):
    batch = _load_batch(args.log)
    world = batch.world
    try:
        estimates = eq.estimate_values(world, batch,
                                       min_exposures=args.min_exposures)
    except ValueError as e:
        raise CliError(str(e))
    payload = {"values": {
        str(a): {"status": v.status, "value": v.value, "se": v.se}
        for a, v in estimates.items()}}
    interior = {a: v.value for a, v in estimates.items()
                if v.status == "Interior"}
    if args.respond and interior:
        try:
            response, info = eq.solve_response(world, batch, interior)
        except np.linalg.LinAlgError as e:
            raise CliError(str(e))
        total, se, parts = eq.total_derivative(world, batch, args.quantity,
                                               response)
        payload["response"] = {str(a): x for a, x in response.items()}
        payload["condition_number"] = info["cond"]
        payload["total_derivative"] = {"quantity": args.quantity,
                                       "value": total, "se": se,
                                       "parts": parts}
    _emit(payload, args)
    return EXIT_OK


def cmd_simpson_demo(args):
    _emit(demos.simpson_table(), args)
    return EXIT_OK


def cmd_table2_demo(args):
    payload = {"published": demos.second_ad_table()}
    if args.synthetic:
        config = None
        if args.config:
            config = _load_world(args.config).config
        payload["synthetic"] = demos.synthetic_second_ad_study(
            n=args.n, seed=args.seed, config=config)
    _emit(payload, args)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="cfads", description=__doc__)
    sub = p.add_subparsers(dest="_command", required=True)

    def common(sp, log=True):
        if log:
            sp.add_argument("--log", required=True, help="JSONL log file")
        sp.add_argument("--delta", type=float, default=0.025,
                        help="per-bound failure probability")
        sp.add_argument("--out", help="output file (default stdout)")
        sp.add_argument("--format", choices=("json", "csv"), default="json")
        sp.add_argument("--threads", type=int, default=1)

    sp = sub.add_parser("simulate", help="collect a randomized log")
    sp.add_argument("--config", required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.add_argument("--rho", type=float, default=1.0)
    sp.add_argument("--sigma", type=float, default=0.3)
    sp.add_argument("--alpha-spread", type=float, default=0.0)
    sp.add_argument("--bid-spread", type=float, default=0.0)
    sp.add_argument("--out", required=False)
    sp.add_argument("--threads", type=int, default=1)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("estimate", help="counterfactual interval estimate")
    common(sp)
    sp.add_argument("--rho-star", type=float, required=True)
    sp.add_argument("--sigma-star", type=float)
    sp.add_argument("--quantity", default="clicks",
                    choices=sorted(cf.QUANTITIES))
    sp.add_argument("--weights", choices=("score", "slate"), default="slate")
    sp.add_argument("--method", choices=("bernstein", "clt"),
                    default="bernstein")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("sweep", help="estimates over a reserve-scale grid")
    common(sp)
    sp.add_argument("--grid", required=True, help="start:stop:step")
    sp.add_argument("--quantity", default="clicks",
                    choices=sorted(cf.QUANTITIES))
    sp.add_argument("--weights", choices=("score", "slate"), default="slate")
    sp.add_argument("--method", choices=("bernstein", "clt"),
                    default="bernstein")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("levelcurves", help="2-D (rho*, alpha*) estimates")
    common(sp)
    sp.add_argument("--rho-grid", required=True)
    sp.add_argument("--alpha-grid", required=True)
    sp.add_argument("--quantity", default="ad_value",
                    choices=sorted(cf.QUANTITIES))
    sp.set_defaults(func=cmd_levelcurves)

    sp = sub.add_parser("grad", help="gradient and Hessian at a target")
    common(sp)
    sp.add_argument("--rho-star", type=float, required=True)
    sp.add_argument("--sigma-star", type=float)
    sp.add_argument("--quantity", default="clicks",
                    choices=sorted(cf.QUANTITIES))
    sp.set_defaults(func=cmd_grad)

    sp = sub.add_parser("tune", help="constrained lower-bound maximization")
    common(sp)
    sp.add_argument("--grid", required=True)
    sp.add_argument("--objective", default="ad_value",
                    choices=sorted(cf.QUANTITIES))
    sp.add_argument("--cap", type=float, required=True,
                    help="mainline ad count cap")
    sp.add_argument("--weights", choices=("score", "slate"), default="slate")
    sp.add_argument("--mode", choices=("finite_grid", "covering_number"),
                    default="finite_grid")
    sp.set_defaults(func=cmd_tune)

    sp = sub.add_parser("equilibrium", help="advertiser value recovery and "
                        "bid response")
    common(sp)
    sp.add_argument("--min-exposures", type=int, default=1000)
    sp.add_argument("--respond", action="store_true",
                    help="also solve the bid response to the reserve scale")
    sp.add_argument("--quantity", default="revenue",
                    choices=sorted(cf.QUANTITIES))
    sp.set_defaults(func=cmd_equilibrium)

    sp = sub.add_parser("simpson-demo", help="published confounding table")
    common(sp, log=False)
    sp.set_defaults(func=cmd_simpson_demo)

    sp = sub.add_parser("table2-demo", help="second-ad confounding, "
                        "published and synthetic")
    common(sp, log=False)
    sp.add_argument("--synthetic", action="store_true")
    sp.add_argument("--config")
    sp.add_argument("--n", type=int, default=400000)
    sp.add_argument("--seed", type=int, default=710)
    sp.set_defaults(func=cmd_table2_demo)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if e.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except CliError as e:
        print(f"cfads: {e}", file=sys.stderr)
        return e.code
    except BrokenPipeError:
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
