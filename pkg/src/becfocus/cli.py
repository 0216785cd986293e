"""Command-line interface.

Verbs: run (single point), sweep, reproduce <figure-id>, calibrate-xi,
validate-config.  Exit codes: 0 success, 1 config error, 2 partial sweep
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .sweep import (RECIPES, ConfigError, RunConfig, emit_plotdata,
                    rows_to_csv, rows_to_json, run_single, run_sweep,
                    _calibrated_power)


def _load_config(path: str | None) -> RunConfig:
    return RunConfig.from_file(path) if path else RunConfig.from_dict({})


def _write_tables(rows, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "results.csv"), "w") as fh:
        fh.write(rows_to_csv(rows))
    with open(os.path.join(out_dir, "results.json"), "w") as fh:
        fh.write(rows_to_json(rows))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="becfocus",
        description="Optical focusing of a falling condensate: variational "
                    "and GPE simulations, deposition analytics, sweeps.")
    sub = ap.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="run a single sweep point")
    p_run.add_argument("config", nargs="?", help="YAML run config")
    p_run.add_argument("-o", "--out", default=None, help="output directory")

    p_sweep = sub.add_parser("sweep", help="run the full parameter sweep")
    p_sweep.add_argument("config", nargs="?", help="YAML run config")
    p_sweep.add_argument("-o", "--out", default=None)
    p_sweep.add_argument("--serial", action="store_true",
                         help="disable the worker pool")

    p_rep = sub.add_parser("reproduce", help="run a figure recipe")
    p_rep.add_argument("figure", choices=sorted(RECIPES))
    p_rep.add_argument("config", nargs="?", help="YAML run config")
    p_rep.add_argument("-o", "--out", default=None)

    p_cal = sub.add_parser("calibrate-xi",
                           help="calibrate the focusing coefficient")
    p_cal.add_argument("config", nargs="?", help="YAML run config")
    p_cal.add_argument("--kick", type=float, default=0.0,
                       help="momentum kick in units of hbar k_L")
    p_cal.add_argument("--ensemble", choices=("diverging", "collimated"),
                       default=None, help="override the ray ensemble")

    p_val = sub.add_parser("validate-config", help="check a config file")
    p_val.add_argument("config")

    args = ap.parse_args(argv)
    try:
        cfg = _load_config(getattr(args, "config", None))
    except (ConfigError, OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    if args.verb == "validate-config":
        print("config ok")
        return 0

    if args.verb == "calibrate-xi":
        if args.ensemble:
            cfg = RunConfig.from_dict(
                {**cfg.raw, "calibration": {**cfg.raw["calibration"],
                                            "ensemble": args.ensemble}})
        xi, p_opt = _calibrated_power(cfg, args.kick)
        print(json.dumps({"kick_hbar_k": args.kick,
                          "ensemble": cfg.raw["calibration"]["ensemble"],
                          "xi": xi, "p_opt_w": p_opt}, indent=1))
        return 0

    out = args.out or cfg.raw["output_dir"]
    if args.verb == "run":
        points = cfg.points()
        if len(points) != 1:
            print(f"config error: 'run' needs exactly one sweep point, "
                  f"got {len(points)}", file=sys.stderr)
            return 1
        row, _ = run_single(cfg, points[0], out_dir=out)
        _write_tables([row], out)
        print(rows_to_csv([row]), end="")
        return 0

    if args.verb == "sweep":
        rows, failures = run_sweep(cfg, out_dir=out,
                                   parallel=not args.serial)
        _write_tables(rows, out)
        print(rows_to_csv(rows), end="")
        return 2 if failures else 0

    if args.verb == "reproduce":
        emit_plotdata(cfg, args.figure, out)
        print(f"wrote {args.figure} data to {out}")
        return 0

    return 1  # pragma: no cover


if __name__ == "__main__":
    raise SystemExit(main())
