"""Command-line harness.

Subcommands:
  oco-bench     piecewise-stationary regression benchmark (ogd / ader / scream)
  control-bench tracking benchmark for the DAC controller
  sysid-bench   Monte-Carlo identification error across exploration budgets
  verify        randomized structural check suite

Configuration files are flat ``key = value`` text; command-line flags override
file values.  Exit code 0 on full success, 2 when some cells failed, 1 when a
verification check failed.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields, replace

from .bench import (ControlScenario, ExperimentConfig, SysidScenario, run_benchmark,
                    run_control_benchmark, run_sysid_benchmark)
from .verify import run_verification


def parse_config_file(path: str) -> dict:
    """Flat key = value format; blank lines and #-comments ignored."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key] = value
    return out


def _coerce(value: str, like):
    if isinstance(like, bool):
        return value.lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, tuple):
        items = [v.strip() for v in value.split(",") if v.strip()]
        if like and isinstance(like[0], int):
            return tuple(int(v) for v in items)
        if like and isinstance(like[0], float):
            return tuple(float(v) for v in items)
        return tuple(items)
    return value


def apply_updates(config, updates: dict):
    """Overlay string key/values onto a dataclass config, coercing by field type."""
    known = {f.name: getattr(config, f.name) for f in fields(config)}
    coerced = {}
    for key, value in updates.items():
        if key not in known:
            raise ValueError(f"unknown configuration key {key!r}; valid keys: {sorted(known)}")
        coerced[key] = _coerce(value, known[key]) if isinstance(value, str) else value
    return replace(config, **coerced)


def _common_flags(sub):
    sub.add_argument("--config", help="flat key = value configuration file")
    sub.add_argument("--seed", type=int, action="append", dest="seeds",
                     help="seed to run (repeatable; overrides the config seeds)")
    sub.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scream", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    subs = parser.add_subparsers(dest="command", required=True)

    oco = subs.add_parser("oco-bench", help="piecewise-stationary regression benchmark")
    _common_flags(oco)
    oco.add_argument("--algorithms", help="comma list from ogd,ader,scream")
    oco.add_argument("--alpha", help="comma list of regularizer coefficients")
    oco.add_argument("--T", type=int, help="horizon")
    oco.add_argument("--per-round", action="store_true", help="also dump per-round CSVs")
    oco.add_argument("--serial", action="store_true", help="disable the worker pool")

    ctrl = subs.add_parser("control-bench", help="DAC tracking benchmark")
    _common_flags(ctrl)
    ctrl.add_argument("--T", type=int, help="horizon")
    ctrl.add_argument("--H", type=int, help="truncation length")
    ctrl.add_argument("--lam-multiplier", type=float, help="movement-penalty override multiplier")
    ctrl.add_argument("--per-round", action="store_true", help="also dump per-round CSVs")

    sysid = subs.add_parser("sysid-bench", help="identification error vs exploration budget")
    _common_flags(sysid)
    sysid.add_argument("--budgets", help="comma list of exploration budgets")

    ver = subs.add_parser("verify", help="run the structural check suite")
    ver.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "verify":
        return 0 if run_verification(seed=args.seed) else 1

    updates = parse_config_file(args.config) if args.config else {}
    if args.seeds:
        updates["seeds"] = tuple(args.seeds)
    if args.out:
        updates["outdir"] = args.out

    if args.command == "oco-bench":
        if args.algorithms:
            updates["algorithms"] = args.algorithms
        if args.alpha:
            updates["alphas"] = args.alpha
        if args.T:
            updates["T"] = args.T
        if args.per_round:
            updates["per_round"] = True
        config = apply_updates(ExperimentConfig(), updates)
        result = run_benchmark(config, parallel=not args.serial)
    elif args.command == "control-bench":
        if args.T:
            updates["T"] = args.T
        if args.H:
            updates["H"] = args.H
        if args.lam_multiplier is not None:
            updates["lam_multiplier"] = args.lam_multiplier
        if args.per_round:
            updates["per_round"] = True
        result = run_control_benchmark(apply_updates(ControlScenario(), updates))
    elif args.command == "sysid-bench":
        if args.budgets:
            updates["budgets"] = args.budgets
        report = run_sysid_benchmark(apply_updates(SysidScenario(), updates))
        print(f"identification log-log slope: {report['loglog_slope']:.3f}")
        return 0
    else:  # pragma: no cover - argparse enforces the choices
        return 2

    for key, message in result.failures:
        print(f"cell failed {key}: {message}", file=sys.stderr)
    print(f"wrote {result.outdir}/ ({len(result.rows)} rows, {len(result.failures)} failures)")
    return 0 if result.ok else 2


if __name__ == "__main__":
    raise SystemExit(main())
