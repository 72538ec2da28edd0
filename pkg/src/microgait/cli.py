"""Command-line front door.

    microgait run CONFIG [--out DIR] [--timestep S] [--seed N] [--emit-plan]
    microgait compare CONFIG... [--out DIR] [--timestep S] [--seed N]

`run` executes one scenario and writes timeseries.csv, summary.yaml,
plan.json and config_echo.yaml into the output directory.  The exit
status encodes the termination cause:

    0  goal reached (or plan completed when no goal displacement is set)
    1  config or planning error
    2  detached_floating
    3  singularity
    4  time_out
    5  numerical blowup

`compare` runs several configs that differ only in mode/alpha and writes
comparison.yaml plus a small table with BL-relative ratios; its exit
status is 0 when the comparison itself succeeds, regardless of member
outcomes (a failing BL member is often the expected result).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from microgait import results as results_io
from microgait import scenario as sc
from microgait.errors import MicrogaitError


def _apply_overrides(cfg, args):
    if args.timestep is not None:
        cfg.sim["timestep"] = float(args.timestep)
    if args.seed is not None:
        cfg.seed = int(args.seed)
    return cfg


def _out_dir(args, cfg):
    root = Path(args.out) if args.out else Path("results")
    return root / cfg.name


def _write_outputs(out, cfg, result):
    out.mkdir(parents=True, exist_ok=True)
    results_io.write_summary(out / "summary.yaml", result.summary)
    results_io.write_config_echo(out / "config_echo.yaml", cfg.to_dict())
    if result.plan is not None:
        results_io.write_plan(out / "plan.json", result.plan)
    if result.log is not None:
        model = sc.build_model(cfg)
        results_io.write_timeseries(out / "timeseries.csv", model, result.log)


def cmd_run(args) -> int:
    try:
        cfg = _apply_overrides(sc.load_scenario(args.config), args)
        result = sc.execute(cfg, emit_plan_only=args.emit_plan)
    except MicrogaitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return sc.EXIT_ERROR
    out = _out_dir(args, cfg)
    _write_outputs(out, cfg, result)
    print(f"{cfg.name}: {result.summary['termination']}"
          f" (distance {result.summary.get('distance_traveled', 0.0):.3f} m)"
          f" -> {out}")
    return result.exit_code


def _format_table(comparison: dict) -> str:
    keys = ["max_force", "mean_force", "max_moment", "mean_moment"]
    lines = [f"{'mode':<6} {'termination':<18} {'distance':>9} "
             + " ".join(f"{k:>12}" for k in keys)
             + "  ratios(max_f, mean_f, max_m, mean_m)"]
    for mode in ("BL", "LRST", "PMD", "FMD"):
        if mode not in comparison["modes"]:
            continue
        m = comparison["modes"][mode]
        ratios = m.get("ratios_to_baseline") or {}
        rtxt = ", ".join(
            f"{ratios[k]:.3f}" if ratios.get(k) is not None else "n/a" for k in keys)
        lines.append(
            f"{mode:<6} {m['termination']:<18} {m['distance_traveled']:>9.4f} "
            + " ".join(f"{m[k]:>12.5g}" for k in keys)
            + f"  [{rtxt}]")
    return "\n".join(lines)


def cmd_compare(args) -> int:
    try:
        cfgs = [_apply_overrides(sc.load_scenario(p), args) for p in args.configs]
        results = []
        for cfg in cfgs:
            result = sc.execute(cfg)
            out = _out_dir(args, cfg)
            _write_outputs(out, cfg, result)
            results.append(result)
        comparison = sc.compare(cfgs, results)
    except MicrogaitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return sc.EXIT_ERROR
    root = Path(args.out) if args.out else Path("results")
    results_io.write_summary(root / "comparison.yaml", comparison)
    table = _format_table(comparison)
    results_io._atomic_write(root / "comparison.txt", table + "\n")
    print(table)
    return sc.EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="microgait",
        description="Plan and simulate low-reaction legged locomotion in microgravity")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a single scenario config")
    p_run.add_argument("config", help="path to the scenario YAML")
    p_run.add_argument("--out", help="output directory root (default ./results)")
    p_run.add_argument("--timestep", type=float, help="override sim timestep [s]")
    p_run.add_argument("--seed", type=int, help="override the scenario seed")
    p_run.add_argument("--emit-plan", action="store_true",
                       help="plan only; export trajectories without simulating")
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="run several mode variants and compare")
    p_cmp.add_argument("configs", nargs="+", help="scenario YAMLs differing only in mode/alpha")
    p_cmp.add_argument("--out", help="output directory root (default ./results)")
    p_cmp.add_argument("--timestep", type=float, help="override sim timestep [s]")
    p_cmp.add_argument("--seed", type=int, help="override the scenario seed")
    p_cmp.set_defaults(func=cmd_compare)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
