"""The acceptance suite: exact oracles plus finite-n statistical checks.

Each criterion returns a ``CriterionResult``; ``run_suite`` evaluates a
selection of them and shares the expensive simulation runs between them.
All randomness derives from one master seed, so results depend only on
``(sizes, seed)`` and not on the worker count.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.stats import ks_2samp

from . import cox
from .graph import PathRecord, crosses, enumerate_paths, generate, min_paths, uncrossed_filter
from .harness import ExperimentConfig, ks_distance, make_rng, run_experiment, estimate_factorial_moment
from .params import build_params, schedule
from .renewal import V, finite_n_first_moment, renewal_limit
from .weights import Exponential, FiniteSupport, ZeroMix
from .wprocess import (
    M_r_recursive,
    M_r_tree_sum,
    moments_W,
    sample_W_branching,
    sample_W_fixed_point,
    sample_w_bank,
    tail_quantile_growth,
)

__all__ = ["Sizes", "CriterionResult", "Suite", "run_suite", "CRITERIA", "crossing_fixtures", "brute_force_paths"]


@dataclass(frozen=True)
class Sizes:
    """Sample sizes of the statistical criteria."""

    w_draws: int = 10**6
    w_depth: int = 40
    branch_draws: int = 10**5
    branch_t: float = 7.0
    branch_pilot: int = 20_000
    renewal_walks: int = 2 * 10**6
    n: int = 10_000
    reps_first_moment: int = 5000
    reps_connected_min: int = 2000
    reps_factorial: int = 10_000
    reps_arithmetic: int = 5000
    bank_pairs: int = 10**5
    oracle_graphs: int = 500
    determinism_threads: tuple = (1, 4, 8)

    @classmethod
    def quick(cls) -> "Sizes":
        return cls(
            w_draws=20_000,
            branch_draws=2000,
            branch_t=4.0,
            branch_pilot=2000,
            renewal_walks=20_000,
            n=1000,
            reps_first_moment=100,
            reps_connected_min=50,
            reps_factorial=100,
            reps_arithmetic=100,
            bank_pairs=5000,
            oracle_graphs=50,
            determinism_threads=(1, 2),
        )

    @classmethod
    def from_dict(cls, d: dict) -> "Sizes":
        d = dict(d)
        if "determinism_threads" in d:
            d["determinism_threads"] = tuple(d["determinism_threads"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown size keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class CriterionResult:
    id: int
    name: str
    passed: bool
    tolerance: str
    metrics: dict = field(default_factory=dict)

    def line(self) -> str:
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in self.metrics.items() if not isinstance(v, (list, dict)))
        return f"criterion {self.id} {self.name}: {'PASS' if self.passed else 'FAIL'} [{self.tolerance}] {shown}"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


EXP = Exponential(1.0)
TWO_POINT = FiniteSupport(((1.0, 0.5), (2.0, 0.5)))
ZERO_MIX = ZeroMix(0.2, Exponential(1.0))
LAM = 2.0


class Suite:
    """Holds sizes, seed and the simulation runs shared between criteria."""

    def __init__(self, sizes: Sizes = Sizes(), seed: int = 1, workers: int = 1):
        self.sizes = sizes
        self.seed = seed
        self.workers = workers
        self._cache: dict = {}

    def _once(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def main_run(self):
        """Exponential(1), lam=2 replications shared by the first-moment, min-law and factorial criteria."""
        s = self.sizes

        def go():
            reps = max(s.reps_first_moment, s.reps_factorial, _reps_for_connected(s.reps_connected_min))
            cfg = ExperimentConfig(
                weights="exp:1",
                lam=LAM,
                n=s.n,
                replications=reps,
                seed=self.seed,
                workers=self.workers,
                window_w=-2.0,
                rectangles=[{"z": 1.0, "u": -2.0}, {"z": math.inf, "u": math.log(1 / 8)}],
                factorial_r=[1, 2],
                checks=["connect", "window_counts", "factorial"],
            )
            return run_experiment(cfg)

        return self._once("main", go)

    def arithmetic_run(self):
        s = self.sizes

        def go():
            cfg = ExperimentConfig(
                weights=TWO_POINT.to_dict(),
                lam=LAM,
                n=s.n,
                replications=s.reps_arithmetic,
                seed=self.seed,
                workers=self.workers,
                checks=["connect", "arithmetic"],
                bank_pairs=s.bank_pairs,
            )
            return run_experiment(cfg)

        return self._once("arith", go)


def _reps_for_connected(k: int) -> int:
    # enough replications that k connected ones are all but certain (P(conn) ~ 0.63)
    return int(math.ceil(k / 0.55)) + 50


# ---------------------------------------------------------------------------
# criteria


def c1_constants(suite: Suite) -> CriterionResult:
    p = build_params(EXP, LAM)
    conn = cox.connect_prob_limit(p)
    m = {
        "alpha": p.alpha,
        "beta": p.beta,
        "gamma": p.gamma,
        "eta": p.eta,
        "connect_limit": conn,
        "connect_target": (1 - 0.203188) ** 2,
    }
    ok = (
        abs(p.alpha - 1) <= 1e-10
        and abs(p.beta - 2) <= 1e-10
        and abs(p.gamma - 2) <= 1e-10
        and abs(p.eta - 0.203188) <= 1e-6
        and abs(conn - (1 - 0.203188) ** 2) <= 1e-5
    )
    return CriterionResult(1, "exact_constants", ok, "alpha,beta,gamma 1e-10; eta 1e-6; connect 1e-5", m)


def c2_moments(suite: Suite) -> CriterionResult:
    worst = 0.0
    for model in (EXP, TWO_POINT, ZERO_MIX):
        p = build_params(model, LAM)
        a = moments_W(p, model, 5)
        b = M_r_recursive(p, model, 5)
        worst = max(worst, max(abs(x - y) / max(1.0, abs(x)) for x, y in zip(a, b)))
    p = build_params(EXP, LAM)
    ew = moments_W(p, EXP, 3)
    exact_err = max(abs(ew[1] - 3), abs(ew[2] - 14))
    q = LAM * EXP.transform(2 * p.alpha, 0)
    geo_err = 0.0
    for cap in range(1, 13):
        hand = sum(q**k for k in range(cap))
        geo_err = max(geo_err, abs(M_r_tree_sum(p, EXP, 2, cap) - hand))
    ok = worst <= 1e-10 and exact_err <= 1e-12 and geo_err <= 1e-12
    m = {"max_rel_diff_EW_vs_Mr": worst, "E[W^2]": ew[1], "E[W^3]": ew[2], "tree_sum_geometric_err": geo_err}
    return CriterionResult(2, "moment_identity", ok, "partition vs tree recursion 1e-10; tree sum vs geometric 1e-12", m)


def c3_w_sampler(suite: Suite) -> CriterionResult:
    s = suite.sizes
    p = build_params(EXP, LAM)
    w = sample_W_fixed_point(p, EXP, s.w_depth, make_rng(suite.seed, "wsampler", 0), size=s.w_draws, method="pool")
    target = moments_W(p, EXP, 3)
    m: dict = {}
    ok = True
    for r in (1, 2, 3):
        x = w**r
        se = float(x.std(ddof=1) / math.sqrt(len(x)))
        z = (float(x.mean()) - target[r - 1]) / se
        m[f"m{r}"] = float(x.mean())
        m[f"m{r}_z"] = z
        ok &= abs(z) <= 4
    p0 = float(np.mean(w == 0))
    z0 = (p0 - p.eta) / math.sqrt(p.eta * (1 - p.eta) / len(w))
    m["p_zero"] = p0
    m["p_zero_z"] = z0
    ok &= abs(z0) <= 3
    fp = sample_W_fixed_point(p, EXP, s.w_depth, make_rng(suite.seed, "wsampler", 1), size=s.branch_draws, method="pool")
    br = sample_W_branching(p, EXP, s.branch_t, s.branch_pilot, make_rng(suite.seed, "wsampler", 2), size=s.branch_draws)
    ks = float(ks_2samp(fp, br).statistic)
    m["ks_branching_vs_fixed_point"] = ks
    ok &= ks <= 0.02
    if len(w) >= 10**6:
        m["tail_quantile_sublinear"] = tail_quantile_growth(w)["sublinear"]
    return CriterionResult(3, "w_sampler_calibration", bool(ok), "moments 4 SE; P(W=0) 3 SE; KS 0.02", m)


def c4_renewal(suite: Suite) -> CriterionResult:
    s = suite.sizes
    p = build_params(EXP, LAM)
    m: dict = {}
    ok = True
    for i, x in enumerate((0.5, 1.0, 2.0, 5.0)):
        mc = V(EXP, LAM, p.alpha, x, method="monte_carlo", n_walks=s.renewal_walks, rng=make_rng(suite.seed, "renewal", i))
        exact = V(EXP, LAM, p.alpha, x).value
        z = (mc.value - exact) / mc.stderr
        m[f"z_x{x:g}"] = z
        ok &= abs(z) <= 3
    dev = abs(V(EXP, LAM, p.alpha, 20.0).value / math.exp(20.0) - 2.0)
    m["ratio_dev_x20"] = dev
    ok &= dev <= 1e-6
    q = build_params(TWO_POINT, LAM)
    ratio = V(TWO_POINT, LAM, q.alpha, 60.0).value / math.exp(q.alpha * 60.0)
    lim = renewal_limit(q)
    m["lattice_ratio_k60"] = ratio
    m["lattice_limit"] = lim
    ok &= abs(ratio / lim - 1) <= 0.02
    return CriterionResult(4, "renewal_asymptotics", bool(ok), "MC 3 SE; |V(20)e^-20 - 2| 1e-6; lattice 2%", m)


def c5_first_moment(suite: Suite) -> CriterionResult:
    s = suite.sizes
    rep = suite.main_run()
    p = build_params(EXP, LAM, s.n)
    recs = [r for r in rep.records if r.status != "truncated"][: s.reps_first_moment]
    sched = schedule(p, s.n)
    est, se = estimate_factorial_moment([r.counts[0] for r in recs], 1, sched.tau_n)
    lam_a = cox.lambda_mass(cox.intensity_spec(p), 1.0, -2.0)
    exact_n = finite_n_first_moment(EXP, p, s.n, 1.0, -2.0)
    m = {
        "estimate": est,
        "stderr": se,
        "limit": lam_a,
        "rel_err": est / lam_a - 1,
        "exact_finite_n_mean": exact_n,
        "replications": len(recs),
    }
    return CriterionResult(5, "first_moment_law", abs(est / lam_a - 1) <= 0.10, "relative 10%", m)


def c6_min_law(suite: Suite) -> CriterionResult:
    s = suite.sizes
    rep = suite.main_run()
    p = build_params(EXP, LAM, s.n)
    conn = [r for r in rep.records if r.connected][: s.reps_connected_min]
    ln = math.log(s.n)
    hz = (np.array([r.H_min for r in conn], dtype=float) - p.gamma * ln) / math.sqrt(p.beta * ln)
    lu = np.array([r.L_min for r in conn]) - ln / p.alpha
    bank = sample_w_bank(p, EXP, s.bank_pairs, make_rng(suite.seed, "bank"))
    spec = cox.intensity_spec(p)
    ks_h = ks_distance(hz, cox.Phi)

    def lcdf(us):
        return np.array([cox.cdf_joint_min(spec, math.inf, float(u), bank, conditional=True)[0] for u in us])

    ks_l = ks_distance(lu, lcdf)
    p1 = sum(r.P_min == 1 for r in conn) / len(conn)
    m = {
        "connected_used": len(conn),
        "ks_hmin": ks_h,
        "hmin_z_mean": float(hz.mean()),
        "ks_lmin": ks_l,
        "p_min_one": p1,
    }
    ok = ks_h <= 0.1 and ks_l <= 0.1 and p1 >= 0.99
    return CriterionResult(6, "min_path_law", ok, "KS 0.1 (H_min, L_min); P_min=1 >= 99%", m)


def c7_arithmetic(suite: Suite) -> CriterionResult:
    rep = suite.arithmetic_run()
    a = rep.body["arithmetic"]
    worst = max(abs(c["empirical"] - c["limit"]) for c in a["cells"])
    ok = a["all_on_lattice"] and a["shift_on_lattice"] and worst <= 0.05
    m = {
        "theta": a["theta"],
        "all_on_lattice": a["all_on_lattice"],
        "shift_on_lattice": a["shift_on_lattice"],
        "max_abs_diff": worst,
        "cells": a["cells"],
    }
    return CriterionResult(7, "arithmetic_min_law", bool(ok), "lattice exact; cells 0.05 absolute", m)


def c8_factorial(suite: Suite) -> CriterionResult:
    s = suite.sizes
    rep = suite.main_run()
    p = build_params(EXP, LAM, s.n)
    recs = [r for r in rep.records if r.status != "truncated"][: s.reps_factorial]
    sched = schedule(p, s.n)
    est, se = estimate_factorial_moment([r.counts[1] for r in recs], 2, sched.tau_n)
    spec = cox.intensity_spec(p)
    win = cox.Window(u_hi=math.log(1 / 8))
    lim = cox.factorial_moment_limit(spec, win, 2, moments_W(p, EXP, 2))
    m = {"estimate": est, "stderr": se, "limit": lim, "Lambda": cox.lambda_window(spec, win), "rel_err": est / lim - 1}
    return CriterionResult(8, "factorial_moment", abs(est / lim - 1) <= 0.25, "relative 25%", m)


def brute_force_paths(n: int, edges: list) -> list[tuple]:
    """Every simple path from 1 to n as ``(vertices, weight sum)``; no pruning at all."""
    adj: dict = {v: [] for v in range(1, n + 1)}
    for u, v, w in edges:
        adj[u].append((v, w))
        adj[v].append((u, w))
    out = []

    def walk(v, path, total, seen):
        if v == n:
            out.append((tuple(path), total))
            return
        for x, w in adj[v]:
            if x not in seen:
                seen.add(x)
                path.append(x)
                walk(x, path, total + w, seen)
                path.pop()
                seen.discard(x)

    walk(1, [1], 0, {1})
    return out


def _oracle_trial(rng) -> Optional[str]:
    n = int(rng.integers(2, 13))
    lam = float(rng.uniform(1.2, min(4.0, n)))
    kind = int(rng.integers(0, 3))
    model = (EXP, TWO_POINT, ZeroMix(0.3, Exponential(1.0)))[kind]
    g = generate(n, lam, model, rng)
    if g.lattice:
        edges = [(int(a) + 1, int(b) + 1, int(u)) for a, b, u in zip(g.src, g.dst, g.units)]
    else:
        edges = [(int(a) + 1, int(b) + 1, float(w)) for a, b, w in zip(g.src, g.dst, g.weight)]
    brute = brute_force_paths(n, edges)
    mr = min_paths(g)
    if not brute:
        return None if not mr.connected else "connected mismatch"
    best = min(t for _, t in brute)
    tied = [(p, t) for p, t in brute if t == best]
    span = g.span or 1.0
    if not mr.connected or mr.P_min != len(tied) or mr.hopcounts != tuple(sorted(len(p) - 1 for p, _ in tied)):
        return f"min mismatch n={n}"
    if abs(mr.L_min - best * span) > 1e-12 * max(1.0, best * span):
        return f"L_min mismatch n={n}"
    weights = sorted({t for _, t in brute})
    for _ in range(3):
        thr = weights[int(rng.integers(0, len(weights)))]
        hop = int(rng.integers(1, n))
        expect = {p for p, t in brute if t <= thr and len(p) - 1 <= hop}
        got = {p.vertices for p in enumerate_paths(g, thr * span, hop)}
        if got != expect:
            return f"enumeration mismatch n={n}"
    return None


def crossing_fixtures() -> dict:
    """The two crossing pictures: four pairwise non-crossing paths, and three paths of which one pair crosses."""
    left = {
        "green": (1, 2, 5, 10, 13, 15, 16),
        "blue": (1, 2, 4, 9, 13, 15, 16),
        "cyan": (1, 3, 6, 7, 11, 15, 16),
        "red": (1, 3, 6, 8, 12, 14, 16),
    }
    right = {
        "green": (1, 2, 5, 7, 8, 10, 12, 13, 14),
        "blue": (1, 2, 4, 9, 12, 13, 14),
        "red": (1, 3, 6, 7, 8, 11, 13, 14),
    }
    return {"left": left, "right": right}


def _crossing_checks() -> bool:
    fx = crossing_fixtures()
    left = list(fx["left"].values())
    no_cross = all(not crosses(a, b) for i, a in enumerate(left) for b in left[i + 1 :])
    r = fx["right"]
    pairs_ok = crosses(r["green"], r["red"]) and not crosses(r["green"], r["blue"]) and not crosses(r["blue"], r["red"])
    # uncrossed filter on the right panel keeps only the blue path
    p = build_params(EXP, LAM)
    n = 14
    sched = schedule(p, n)
    recs = [PathRecord(v, len(v) - 1, 0.01 * (len(v) - 1)) for v in r.values()]
    kept = uncrossed_filter(recs, math.inf, 10.0, sched, p)
    return no_cross and pairs_ok and [k.vertices for k in kept] == [r["blue"]]


def c9_oracle(suite: Suite) -> CriterionResult:
    rng = make_rng(suite.seed, "oracle")
    failures = []
    for _ in range(suite.sizes.oracle_graphs):
        err = _oracle_trial(rng)
        if err:
            failures.append(err)
    fig = _crossing_checks()
    m = {"graphs": suite.sizes.oracle_graphs, "failures": len(failures), "crossing_fixtures": fig}
    if failures:
        m["first_failure"] = failures[0]
    return CriterionResult(9, "oracle_equivalence", not failures and fig, "exact", m)


def c10_determinism(suite: Suite) -> CriterionResult:
    # the statistical checks at reduced sizes, repeated per worker count
    small = replace(
        Sizes.quick(),
        determinism_threads=(),
    )
    blobs = {}
    for t in suite.sizes.determinism_threads:
        for rep in range(2):
            res = run_suite(small, seed=suite.seed, workers=t, only=[5, 6, 7, 8])
            blobs[(t, rep)] = canonical_json(res)
    first = next(iter(blobs.values()))
    same = all(b == first for b in blobs.values())
    m = {"threads": list(suite.sizes.determinism_threads), "runs": len(blobs), "identical": same}
    return CriterionResult(10, "determinism", same, "byte-identical modulo metadata", m)


CRITERIA: dict[int, Callable[[Suite], CriterionResult]] = {
    1: c1_constants,
    2: c2_moments,
    3: c3_w_sampler,
    4: c4_renewal,
    5: c5_first_moment,
    6: c6_min_law,
    7: c7_arithmetic,
    8: c8_factorial,
    9: c9_oracle,
    10: c10_determinism,
}


def run_suite(sizes: Sizes = Sizes(), seed: int = 1, workers: int = 1, only=None, progress=None) -> list[CriterionResult]:
    suite = Suite(sizes, seed, workers)
    out = []
    for cid in sorted(only or CRITERIA):
        res = CRITERIA[cid](suite)
        out.append(res)
        if progress:
            progress(res)
    return out


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def results_dict(results: list[CriterionResult]) -> list[dict]:
    return [_clean(asdict(r)) for r in results]


def canonical_json(results: list[CriterionResult]) -> str:
    return json.dumps(results_dict(results), sort_keys=True, indent=2)
