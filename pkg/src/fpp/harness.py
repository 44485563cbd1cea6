"""Replicated experiments on ``G(n, lam/n)`` and their comparison with the limits."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import cox
from .graph import (
    DEFAULT_BUDGET,
    EnumerationBudgetError,
    _Enumerator,
    enumerate_paths,
    generate,
    min_paths,
    point_coords,
    uncrossed_filter,
)
from .params import LimitParams, build_params, k_n, schedule, subsequence_offset
from .weights import WeightModel, model_from_dict, parse_weights
from .wprocess import moments_W, sample_w_bank

__all__ = [
    "TAGS",
    "make_rng",
    "ExperimentConfig",
    "ReplicationRecord",
    "ExperimentReport",
    "run_experiment",
    "estimate_factorial_moment",
    "ks_distance",
    "ecdf_rows",
    "write_report",
]

log = logging.getLogger("fpp")

# stream tags keep the random streams of different components disjoint
TAGS = {"replication": 1, "bank": 2, "renewal": 3, "wsampler": 4, "cox": 5, "oracle": 6}

CHECKS = ("connect", "min_law", "window_counts", "factorial", "arithmetic", "uncrossed")


def make_rng(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    """Generator keyed on ``(seed, tag, index)``, independent of scheduling."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(TAGS[tag], int(index))))


@dataclass
class ExperimentConfig:
    """Serializable experiment description (JSON round-trips through ``to_dict``)."""

    weights: object = "exp:1"
    lam: float = 2.0
    n: int = 10_000
    replications: int = 100
    seed: int = 1
    workers: int = 1
    budget: int = DEFAULT_BUDGET
    # enumeration window: standardized hopcount <= a, weight <= log(n)/alpha + w
    window_a: float = math.inf
    window_w: Optional[float] = None
    # query rectangles {"z": z_max, "u": u_max}
    rectangles: list = field(default_factory=list)
    factorial_r: list = field(default_factory=lambda: [1, 2])
    checks: list = field(default_factory=lambda: ["connect", "min_law"])
    bank_pairs: int = 100_000
    bank_depth: int = 40
    arithmetic_u: list = field(default_factory=lambda: [-1.0, 0.0, 1.0, 2.0])
    arithmetic_k: list = field(default_factory=lambda: [1, 2, 3])
    batch: int = 50

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.lam <= 1:
            raise ValueError("lambda must exceed 1")
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        unknown = set(self.checks) - set(CHECKS)
        if unknown:
            raise ValueError(f"unknown checks {sorted(unknown)}")
        for r in self.rectangles:
            if set(r) != {"z", "u"}:
                raise ValueError(f"rectangle needs exactly keys z and u, got {r}")
            if self.window_w is None:
                raise ValueError("query rectangles need an enumeration window (window_w)")
            if r["z"] > self.window_a or r["u"] > self.window_w:
                raise ValueError(f"rectangle {r} lies outside the (a, w) window")
        self.model()  # fail early on a bad weight spec

    def model(self) -> WeightModel:
        if isinstance(self.weights, str):
            return parse_weights(self.weights)
        return model_from_dict(self.weights)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = self.model().to_dict()
        d["window_a"] = _json_float(self.window_a)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        if "window_a" in d:
            d["window_a"] = float(d["window_a"])
        if "rectangles" in d:
            d["rectangles"] = [{"z": float(r["z"]), "u": float(r["u"])} for r in d["rectangles"]]
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _json_float(x):
    if x is None:
        return None
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return x


@dataclass
class ReplicationRecord:
    index: int
    status: str  # connected | disconnected | truncated
    L_min: float = math.inf
    P_min: int = 0
    hopcounts: tuple = ()
    counts: tuple = ()
    points: tuple = ()
    uncrossed: Optional[int] = None

    @property
    def connected(self) -> bool:
        return self.status == "connected"

    @property
    def H_min(self) -> float:
        return self.hopcounts[0] if self.hopcounts else math.inf


@dataclass
class ExperimentReport:
    config: dict
    params: dict
    body: dict
    metadata: dict
    records: list = field(default_factory=list, repr=False)
    tables: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {"metadata": self.metadata, "config": self.config, "params": self.params, **self.body}


# ---------------------------------------------------------------------------
# replications


def _replicate(cfg: ExperimentConfig, model, params, index: int) -> ReplicationRecord:
    rng = make_rng(cfg.seed, "replication", index)
    g = generate(cfg.n, cfg.lam, model, rng)
    sched = schedule(params, cfg.n)
    try:
        enum = _Enumerator(g, cfg.budget)
        mr = min_paths(g, cfg.budget, _enum=enum)
        rec = ReplicationRecord(index=index, status=mr.status, L_min=mr.L_min, P_min=mr.P_min or 0, hopcounts=mr.hopcounts)
        if cfg.window_w is not None and mr.connected:
            w_cap = math.log(cfg.n) / params.alpha + cfg.window_w
            paths = enumerate_paths(g, w_cap, k_n(params, cfg.n, cfg.window_a), cfg.budget, _enum=_Enumerator(g, cfg.budget))
            if paths:
                z, u = point_coords([p.H for p in paths], [p.L for p in paths], sched, params)
            else:
                z = u = np.empty(0)
            counts = []
            for r in cfg.rectangles:
                kmax = k_n(params, cfg.n, r["z"])
                h = np.array([p.H for p in paths], dtype=np.int64)
                counts.append(int(np.count_nonzero((h <= kmax) & (u <= r["u"] + 1e-9))))
            rec.counts = tuple(counts)
            rec.points = tuple(zip(z.tolist(), u.tolist()))
            if "uncrossed" in cfg.checks:
                rec.uncrossed = len(uncrossed_filter(paths, cfg.window_a, cfg.window_w, sched, params))
        elif cfg.window_w is not None:
            rec.counts = tuple(0 for _ in cfg.rectangles)
            if "uncrossed" in cfg.checks:
                rec.uncrossed = 0
        return rec
    except EnumerationBudgetError:
        return ReplicationRecord(index=index, status="truncated")


def _run_batch(cfg_dict: dict, start: int, stop: int) -> list[ReplicationRecord]:
    cfg = ExperimentConfig.from_dict(cfg_dict)
    model = cfg.model()
    params = build_params(model, cfg.lam, cfg.n)
    return [_replicate(cfg, model, params, i) for i in range(start, stop)]


def _collect(cfg: ExperimentConfig) -> list[ReplicationRecord]:
    bounds = [(s, min(s + cfg.batch, cfg.replications)) for s in range(0, cfg.replications, cfg.batch)]
    payload = cfg.to_dict()
    payload["window_a"] = cfg.window_a
    records: list = []
    if cfg.workers == 1:
        for s, e in bounds:
            records.extend(_run_batch(payload, s, e))
            log.info("replications %d/%d", e, cfg.replications)
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            for (s, e), batch in zip(bounds, ex.map(_run_batch, [payload] * len(bounds), *zip(*bounds))):
                records.extend(batch)
                log.info("replications %d/%d", e, cfg.replications)
    return records


# ---------------------------------------------------------------------------
# statistics


def estimate_factorial_moment(counts: Sequence[int], r: int, tau: float = 1.0, batches: int = 20) -> tuple[float, float]:
    """Mean of ``tau^r (count)_r`` with a batch-means standard error."""
    if r < 1:
        raise ValueError("r must be >= 1")
    c = np.asarray(counts, dtype=float)
    if len(c) == 0:
        raise ValueError("no counts")
    ff = np.ones_like(c)
    for i in range(r):
        ff *= np.maximum(c - i, 0.0)
    vals = tau**r * ff
    est = float(vals.mean())
    b = min(batches, len(vals))
    if b < 2:
        return est, math.nan
    means = np.array([chunk.mean() for chunk in np.array_split(vals, b)])
    return est, float(means.std(ddof=1) / math.sqrt(b))


def ks_distance(sample: Sequence[float], cdf: Callable) -> float:
    """Two-sided Kolmogorov-Smirnov distance ``sup |F_hat(x+-) - F(x)|`` over the sample points."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = len(x)
    if n == 0:
        raise ValueError("KS distance of an empty sample")
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))


def ecdf_rows(sample: Sequence[float], cdf: Optional[Callable] = None) -> list[dict]:
    x, cnt = np.unique(np.asarray(sample, dtype=float), return_counts=True)
    ec = np.cumsum(cnt) / cnt.sum()
    theory = np.asarray(cdf(x), dtype=float) if cdf is not None else [None] * len(x)
    return [{"value": float(a), "ecdf": float(b), "theory": None if t is None else float(t)} for a, b, t in zip(x, ec, theory)]


def _bank_cdf(spec, bank, conditional=True):
    def f(us):
        return np.array([cox.cdf_joint_min(spec, math.inf, float(u), bank, conditional)[0] for u in np.atleast_1d(us)])

    return f


def _hmin_z(records, params, n):
    h = np.array([r.H_min for r in records], dtype=float)
    ln = math.log(n)
    return (h - params.gamma * ln) / math.sqrt(params.beta * ln)


def _summaries(cfg, params, records, bank):
    body: dict = {}
    tables: dict = {}
    done = [r for r in records if r.status != "truncated"]
    conn = [r for r in done if r.connected]
    n_done = len(done)
    body["summary"] = {
        "replications": len(records),
        "truncated": len(records) - n_done,
        "connected": len(conn),
        "disconnected": n_done - len(conn),
        "p_connected": len(conn) / n_done if n_done else None,
        "p_connected_limit": cox.connect_prob_limit(params),
        "p_min_one_fraction": (sum(r.P_min == 1 for r in conn) / len(conn)) if conn else None,
    }
    sched = schedule(params, cfg.n)
    body["schedule"] = {"n": cfg.n, "rho_n": sched.rho_n, "tau_n": sched.tau_n}
    spec = cox.intensity_spec(params, subsequence_offset(params, cfg.n) if params.arithmetic else None)

    if "min_law" in cfg.checks and conn:
        hz = _hmin_z(conn, params, cfg.n)
        lu = np.array([r.L_min for r in conn]) - math.log(cfg.n) / params.alpha
        ks_h = ks_distance(hz, cox.Phi)
        entry = {"n_connected": len(conn), "ks_hmin": ks_h, "hmin_z_mean": float(hz.mean()), "hmin_z_sd": float(hz.std(ddof=1)) if len(hz) > 1 else None}
        tables["ecdf_hmin.csv"] = ecdf_rows(hz, cox.Phi)
        if not params.arithmetic and bank is not None:
            lcdf = _bank_cdf(spec, bank)
            entry["ks_lmin"] = ks_distance(lu, lcdf)
            tables["ecdf_lmin.csv"] = ecdf_rows(lu, lcdf)
        else:
            tables["ecdf_lmin.csv"] = ecdf_rows(lu)
        body["min_law"] = entry

    if cfg.rectangles and ("window_counts" in cfg.checks or "factorial" in cfg.checks):
        ew = moments_W(params, cfg.model(), max(cfg.factorial_r + [1]))
        rows = []
        fm_rows = []
        for j, r in enumerate(cfg.rectangles):
            c = [rec.counts[j] for rec in done]
            win = cox.Window(u_hi=r["u"], z_hi=r["z"])
            lam_a = cox.lambda_window(spec, win)
            mean, se = estimate_factorial_moment(c, 1, sched.tau_n)
            row = {"z": _json_float(r["z"]), "u": r["u"], "Lambda": lam_a, "tau_mean_count": mean, "stderr": se}
            facts = []
            for rr in cfg.factorial_r:
                est, fse = estimate_factorial_moment(c, rr, sched.tau_n)
                lim = lam_a**rr * ew[rr - 1] ** 2
                facts.append({"r": rr, "estimate": est, "stderr": fse, "limit": lim})
                fm_rows.append({"z": _json_float(r["z"]), "u": r["u"], "r": rr, "estimate": est, "stderr": fse, "limit": lim})
            row["factorial_moments"] = facts
            rows.append(row)
        body["rectangles"] = rows
        tables["factorial_moments.csv"] = fm_rows
        tables["points.csv"] = [{"replication": rec.index, "z": z, "u": u} for rec in done for z, u in rec.points]

    if "arithmetic" in cfg.checks and params.arithmetic and bank is not None:
        m = params.span
        finite = [r.L_min for r in done if r.connected]
        on_lattice = all(abs(x / m - round(x / m)) <= 1e-9 for x in finite)
        shifted = [x - sched.rho_n for x in finite]
        cells = []
        for u in cfg.arithmetic_u:
            for k in cfg.arithmetic_k:
                hits = sum(1 for r in done if r.connected and abs(r.L_min - sched.rho_n - u) < 1e-9 * m and r.P_min == k)
                lim, se = cox.pmf_arithmetic_min(spec, float(u), int(k), None, bank)
                cells.append({"u": u, "k": k, "empirical": hits / n_done, "limit": lim, "limit_stderr": se})
        body["arithmetic"] = {
            "theta": spec.theta,
            "all_on_lattice": on_lattice,
            "shift_on_lattice": all(abs(s / m - round(s / m)) <= 1e-9 for s in shifted),
            "cells": cells,
        }

    if "uncrossed" in cfg.checks:
        vals = [r.uncrossed for r in done if r.uncrossed is not None]
        body["uncrossed"] = {"mean_count": float(np.mean(vals)) if vals else None}
    return body, tables


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Run the replications of ``cfg`` and compare them with the limit objects."""
    t0 = time.time()
    model = cfg.model()
    params = build_params(model, cfg.lam, cfg.n)
    records = _collect(cfg)
    bank = None
    if ("min_law" in cfg.checks and not params.arithmetic) or ("arithmetic" in cfg.checks and params.arithmetic):
        bank = sample_w_bank(params, model, cfg.bank_pairs, make_rng(cfg.seed, "bank"), depth=cfg.bank_depth)
    body, tables = _summaries(cfg, params, records, bank)
    metadata = {
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "runtime_s": time.time() - t0,
        "workers": cfg.workers,
    }
    cfg_d = cfg.to_dict()
    cfg_d.pop("workers")
    return ExperimentReport(cfg_d, params.to_dict(), body, metadata, records, tables)


def _csv_value(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v


def write_report(report: ExperimentReport, out_dir, force: bool = False, name: str = "report.json") -> Path:
    """Write the JSON report and its CSV sidecars; refuses to overwrite unless ``force``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = out / name
    if target.exists() and not force:
        raise FileExistsError(f"{target} exists; pass --force to overwrite")
    with open(target, "w") as fh:
        json.dump(_jsonable(report.to_dict()), fh, indent=2, sort_keys=True)
        fh.write("\n")
    for fname, rows in report.tables.items():
        _write_rows(out / fname, rows)
    return target


def _write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if not rows:
            return
        cols = list(rows[0].keys())
        w.writerow(cols)
        for r in rows:
            w.writerow([_csv_value(r[c]) for c in cols])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return _json_float(float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def default_workers() -> int:
    env = os.environ.get("FPP_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1
