"""Command-line entry point ``fpp``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or budget
error (including failed acceptance criteria).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import cox
from .acceptance import Sizes, results_dict, run_suite
from .graph import EnumerationBudgetError
from .harness import ExperimentConfig, default_workers, make_rng, run_experiment, write_report
from .params import build_params, schedule
from .renewal import ratio_table, write_ratio_table
from .weights import parse_weights
from .wprocess import BudgetError, M_r_tree_sum, moment_table, sample_w_bank, save_bank

log = logging.getLogger("fpp")


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _model_args(p):
    p.add_argument("--lambda", dest="lam", type=float, default=2.0, help="mean degree (> 1)")
    p.add_argument("--weights", default="exp:1", help="exp:RATE | unif:LO:HI | fs:V@P,... | zmix:Q:<tail>")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    common.add_argument("--threads", type=int, default=None, help="worker processes (default: $FPP_THREADS or CPU count)")
    common.add_argument("--out", default=None, help="output directory or file")
    common.add_argument("--force", action="store_true", help="overwrite existing reports")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = _Parser(prog="fpp", description="First passage percolation on sparse random graphs.")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("params", parents=[common], help="print the limit constants as JSON")
    _model_args(p)
    p.add_argument("--n", type=float, default=None, help="graph size for the finite-n offsets")

    p = sub.add_parser("wbank", parents=[common], help="sample and save (W1, W2) pairs")
    _model_args(p)
    p.add_argument("--pairs", type=int, default=100_000)
    p.add_argument("--depth", type=int, default=40)
    p.add_argument("--method", choices=["auto", "tree", "pool"], default="auto")

    p = sub.add_parser("moments", parents=[common], help="E[W^r] and M^(r) tables")
    _model_args(p)
    p.add_argument("--r-max", type=int, default=5)
    p.add_argument("--tree-cap", type=int, default=0, help="also report truncated tree sums (r <= 4)")

    p = sub.add_parser("renewal", parents=[common], help="V(x) ratio table as CSV")
    _model_args(p)
    p.add_argument("--x", type=float, nargs="+", default=[0.5, 1, 2, 5, 10, 20])
    p.add_argument("--method", choices=["auto", "closed_form", "lattice_dp", "monte_carlo"], default="auto")
    p.add_argument("--walks", type=int, default=10**6)

    p = sub.add_parser("simulate", parents=[common], help="run a replicated experiment from a JSON config")
    p.add_argument("--config", required=True)

    p = sub.add_parser("limits", parents=[common], help="theoretical CDF/PMF tables as CSV")
    _model_args(p)
    p.add_argument("--n", type=float, default=10_000)
    p.add_argument("--pairs", type=int, default=100_000)
    p.add_argument("--z", type=float, nargs="+", default=[-1, 0, 1, math.inf])
    p.add_argument("--u", type=float, nargs="+", default=[-3, -2, -1, 0, 1, 2, 3])
    p.add_argument("--k", type=int, nargs="+", default=[1, 2, 3])

    p = sub.add_parser("verify-all", parents=[common], help="run the acceptance suite")
    p.add_argument("--config", default=None, help='JSON: {"seed": 1, "preset": "full"|"quick", "sizes": {...}, "only": [ids]}')
    return ap


def _workers(args) -> int:
    return args.threads if args.threads is not None else default_workers()


def _emit(obj, args, default_name):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if args.out:
        target = Path(args.out)
        if target.suffix == "":
            target.mkdir(parents=True, exist_ok=True)
            target = target / default_name
        _guard(target, args.force)
        target.write_text(text + "\n")
    else:
        print(text)


def _guard(path: Path, force: bool):
    if path.exists() and not force:
        raise ConfigError(f"{path} exists; pass --force to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)


def cmd_params(args):
    model = parse_weights(args.weights)
    p = build_params(model, args.lam, args.n)
    out = p.to_dict()
    if args.n is not None:
        s = schedule(p, args.n)
        out["schedule"] = {"n": s.n, "rho_n": s.rho_n, "tau_n": s.tau_n}
    out["connect_limit"] = cox.connect_prob_limit(p)
    _emit(out, args, "params.json")


def cmd_wbank(args):
    model = parse_weights(args.weights)
    p = build_params(model, args.lam)
    seed = 1 if args.seed is None else args.seed
    bank = sample_w_bank(p, model, args.pairs, make_rng(seed, "bank"), depth=args.depth, method=args.method)
    target = Path(args.out or "wbank.npy")
    _guard(target, args.force)
    save_bank(bank, target)
    prod = bank[:, 0] * bank[:, 1]
    print(json.dumps({"pairs": args.pairs, "mean_W": float(bank.mean()), "p_W1W2_positive": float((prod > 0).mean()), "path": str(target)}))


def cmd_moments(args):
    model = parse_weights(args.weights)
    p = build_params(model, args.lam)
    out = moment_table(p, model, args.r_max).to_dict()
    if args.tree_cap:
        out["tree_sums"] = {r: M_r_tree_sum(p, model, r, args.tree_cap) for r in range(2, min(4, args.r_max) + 1)}
    _emit(out, args, "moments.json")


def cmd_renewal(args):
    model = parse_weights(args.weights)
    p = build_params(model, args.lam)
    seed = 1 if args.seed is None else args.seed
    rows = ratio_table(model, args.lam, p.alpha, args.x, method=args.method, n_walks=args.walks, rng=make_rng(seed, "renewal"))
    if args.out:
        target = Path(args.out)
        _guard(target, args.force)
        write_ratio_table(rows, target)
    else:
        for r in rows:
            print(f"{r['x']},{r['V']!r},{r['ratio']!r},{r['method']},{'' if r['stderr'] is None else repr(r['stderr'])}")


def cmd_simulate(args):
    try:
        cfg = ExperimentConfig.from_json(args.config)
    except (OSError, ValueError, TypeError, KeyError) as e:
        raise ConfigError(f"bad config {args.config}: {e}") from e
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.workers = _workers(args)
    out = Path(args.out or "report")
    if (out / "report.json").exists() and not args.force:
        raise ConfigError(f"{out / 'report.json'} exists; pass --force to overwrite")
    report = run_experiment(cfg)
    path = write_report(report, out, force=True)
    print(json.dumps({"report": str(path), "summary": report.body.get("summary")}, sort_keys=True))


def cmd_limits(args):
    model = parse_weights(args.weights)
    p = build_params(model, args.lam, args.n)
    seed = 1 if args.seed is None else args.seed
    bank = sample_w_bank(p, model, args.pairs, make_rng(seed, "bank"))
    spec = cox.intensity_spec(p)
    out = Path(args.out or "limits")
    out.mkdir(parents=True, exist_ok=True)
    if p.arithmetic:
        us = [p.span * round(u / p.span) for u in args.u]
        target = out / "pmf_min.csv"
        _guard(target, args.force)
        cox.write_table(cox.pmf_table(spec, us, args.k, bank), target)
    else:
        target = out / "cdf_min.csv"
        _guard(target, args.force)
        cox.write_table(cox.cdf_table(spec, args.z, args.u, bank), target)
    print(str(target))


def _suite_config(args):
    data = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, ValueError) as e:
            raise ConfigError(f"bad config {args.config}: {e}") from e
    unknown = set(data) - {"seed", "preset", "sizes", "only"}
    if unknown:
        raise ConfigError(f"unknown verify-all keys {sorted(unknown)}")
    preset = data.get("preset", "full")
    if preset not in ("full", "quick"):
        raise ConfigError(f"preset must be full or quick, got {preset!r}")
    base = Sizes() if preset == "full" else Sizes.quick()
    try:
        sizes = Sizes.from_dict({**{k: getattr(base, k) for k in base.__dataclass_fields__}, **data.get("sizes", {})})
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    seed = args.seed if args.seed is not None else int(data.get("seed", 1))
    return sizes, seed, data.get("only")


def cmd_verify_all(args):
    sizes, seed, only = _suite_config(args)
    out = Path(args.out or "acceptance")
    target = out / "acceptance.json"
    _guard(target, args.force)
    t0 = time.time()

    def progress(res):
        print(res.line(), flush=True)

    results = run_suite(sizes, seed=seed, workers=_workers(args), only=only, progress=progress)
    doc = {
        "metadata": {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "runtime_s": time.time() - t0,
            "threads": _workers(args),
        },
        "seed": seed,
        "sizes": {k: list(v) if isinstance(v, tuple) else v for k, v in sizes.__dict__.items()},
        "all_passed": all(r.passed for r in results),
        "criteria": results_dict(results),
    }
    target.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"{sum(r.passed for r in results)}/{len(results)} criteria passed; report {target}", flush=True)
    return 0 if doc["all_passed"] else 2


COMMANDS = {
    "params": cmd_params,
    "wbank": cmd_wbank,
    "moments": cmd_moments,
    "renewal": cmd_renewal,
    "simulate": cmd_simulate,
    "limits": cmd_limits,
    "verify-all": cmd_verify_all,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr, format="%(message)s")
    if args.threads is not None and args.threads < 1:
        print("fpp: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        rc = COMMANDS[args.cmd](args)
        return 0 if rc is None else rc
    except ConfigError as e:
        print(f"fpp: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        # bad parameters (weights, lambda, ...) are configuration errors
        print(f"fpp: {e}", file=sys.stderr)
        return 1
    except (EnumerationBudgetError, BudgetError, RuntimeError, MemoryError) as e:
        print(f"fpp: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
