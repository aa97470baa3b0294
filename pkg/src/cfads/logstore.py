"""JSONL persistence for randomized logs.

Line 1 is a header object (schema version, config hash and the full
config, policy parameters, record count, seed); every further line is one
record.  Floats are serialized with 17 significant digits so values
round-trip exactly; an unbounded stability interval stores the literal
string "inf"; NaN anywhere is an error on both ends.  Reading streams
records one line at a time and supports column projection, so memory use
is independent of file size.  Files ending in .gz are gzip-compressed.
"""

from __future__ import annotations

import gzip
import json
import math
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .world import LogBatch, Policy, World, WorldConfig, N_SLOTS, base_draws

__all__ = ["write_log", "read_header", "read_records", "read_columns",
           "load_batch", "LogFormatError", "SCHEMA_VERSION"]

SCHEMA_VERSION = 1


class LogFormatError(ValueError):
    """Malformed or inconsistent log file."""


def _fmt(x):
    """Serialize one value; floats get 17 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            raise LogFormatError("NaN is not serializable in a log")
        if math.isinf(x):
            return '"inf"' if x > 0 else '"-inf"'
        return format(x, ".17g")
    if isinstance(x, str):
        return json.dumps(x)
    if isinstance(x, (list, tuple, np.ndarray)):
        return "[" + ",".join(_fmt(v) for v in x) + "]"
    if isinstance(x, dict):
        return "{" + ",".join(json.dumps(str(k)) + ":" + _fmt(v)
                              for k, v in x.items()) + "}"
    raise LogFormatError(f"unsupported value {type(x)}")


def _open(path, mode):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def write_log(path, batch: LogBatch, chunk: int = 1 << 14) -> None:
    """Write a simulated batch as a JSONL log file."""
    world = batch.world
    header = {
        "schema_version": SCHEMA_VERSION,
        "kind": "cfads-log",
        "config_hash": world.config_hash(),
        "config": json.loads(world.config.to_json()),
        "policy": batch.policy.to_dict(),
        "n": batch.n,
        "seed": batch.seed,
    }
    with _open(path, "w") as f:
        f.write(_fmt(header) + "\n")
        i0 = 0
        while i0 < batch.n:
            count = min(chunk, batch.n - i0)
            d = base_draws(world, batch.policy, batch.seed, i0, count)
            for j in range(count):
                r = i0 + j
                cand = [[int(i), world.bids[i],
                         world.beta[i, batch.cluster[r]] * d["qjit"][j, i]]
                        for i in range(world.config.n_ads)
                        if d["elig"][j, i]]
                slots = []
                for s in range(N_SLOTS):
                    ad = int(batch.slate[r, s])
                    if ad >= 0:
                        slots.append([s, ad, batch.q_est[r, s],
                                      batch.prices[r, s],
                                      batch.prices_bid[r, s],
                                      int(batch.clicks[r, s])])
                row = {
                    "i": r, "cluster": int(batch.cluster[r]),
                    "g": batch.g[r], "m": batch.m[r], "eps": batch.eps[r],
                    "alpha": batch.alpha_used[r], "cand": cand,
                    "slate": slots, "y": int(batch.y[r]), "z": batch.z[r],
                    "z_bid": batch.z_bid[r], "m_lo": batch.m_lo[r],
                    "m_hi": batch.m_hi[r],
                }
                f.write(_fmt(row) + "\n")
            i0 += count


def _parse_float(x, where):
    if isinstance(x, str):
        if x == "inf":
            return math.inf
        if x == "-inf":
            return -math.inf
        raise LogFormatError(f"bad float literal {x!r} in {where}")
    v = float(x)
    if math.isnan(v):
        raise LogFormatError(f"NaN in {where}")
    return v


def read_header(path) -> dict:
    with _open(path, "r") as f:
        line = f.readline()
    try:
        header = json.loads(line)
    except json.JSONDecodeError as e:
        raise LogFormatError(f"bad header line: {e}") from e
    if header.get("kind") != "cfads-log":
        raise LogFormatError("not a cfads log file")
    if header.get("schema_version") != SCHEMA_VERSION:
        raise LogFormatError(f"unsupported schema {header.get('schema_version')}")
    return header


def read_records(path, projection: Optional[Sequence[str]] = None
                 ) -> Iterator[dict]:
    """Stream records; with a projection, keep only the named fields."""
    proj = set(projection) if projection is not None else None
    with _open(path, "r") as f:
        first = f.readline()
        header = json.loads(first)
        if header.get("kind") != "cfads-log":
            raise LogFormatError("not a cfads log file")
        for lineno, line in enumerate(f, start=2):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise LogFormatError(f"line {lineno}: {e}") from e
            for key in ("g", "m", "eps", "alpha", "z", "z_bid", "m_lo", "m_hi"):
                if key in row:
                    row[key] = _parse_float(row[key], f"line {lineno}:{key}")
            if proj is not None:
                row = {k: v for k, v in row.items() if k in proj}
            yield row


def read_columns(path, fields: Sequence[str]) -> dict:
    """Materialize selected scalar fields as numpy arrays, streaming."""
    cols = {f: [] for f in fields}
    for row in read_records(path, projection=fields):
        for f in fields:
            cols[f].append(row[f])
    return {f: np.asarray(v) for f, v in cols.items()}


def load_batch(path) -> LogBatch:
    """Rebuild an in-memory batch (world, policy and columns) from a log."""
    header = read_header(path)
    config = WorldConfig.from_json(json.dumps(header["config"]))
    if config.digest() != header["config_hash"]:
        raise LogFormatError("config hash mismatch")
    world = World(config)
    policy = Policy.from_dict(header["policy"])
    n = header["n"]
    cols = {
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
    count = 0
    for row in read_records(path):
        r = row["i"]
        cols["cluster"][r] = row["cluster"]
        for k_src, k_dst in (("g", "g"), ("m", "m"), ("eps", "eps"),
                             ("alpha", "alpha_used"), ("z", "z"),
                             ("z_bid", "z_bid"), ("m_lo", "m_lo"),
                             ("m_hi", "m_hi")):
            cols[k_dst][r] = row[k_src]
        cols["y"][r] = row["y"]
        nml = 0
        for s, ad, q, price, price_bid, click in row["slate"]:
            cols["slate"][r, s] = ad
            cols["q_est"][r, s] = q
            cols["prices"][r, s] = price
            cols["prices_bid"][r, s] = price_bid
            cols["clicks"][r, s] = click
            if s < 2:
                nml += 1
        cols["nml"][r] = nml
        count += 1
    if count != n:
        raise LogFormatError(f"expected {n} records, found {count}")
    return LogBatch(world, policy, header["seed"], cols)
