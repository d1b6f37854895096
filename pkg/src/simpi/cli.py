"""Command line entry point: ``simpi simulate|fit|bench|report``.

Exit codes: 0 on success, 2 on a configuration error, 3 when a method
failed (the report, possibly partial, is still written).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import (DOMAINS, METHODS, ConfigError, ExperimentConfig, _fit_methods, emit_report,
                    read_report, report_csv, report_json, report_markdown, run_experiment)
from .data import ReplicatedDataset
from .simulators import generate_design

EXIT_OK, EXIT_CONFIG, EXIT_METHOD = 0, 2, 3
RENDER = {"csv": report_csv, "json": report_json, "markdown": report_markdown, "md": report_markdown}


def _load_config(args) -> ExperimentConfig:
    d = {}
    if args.config:
        try:
            d = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from e
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
    for key in ("preset", "seed", "repetitions", "workers"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    if getattr(args, "methods", None):
        d["methods"] = args.methods.split(",")
    if "preset" not in d and not d.get("design_points"):
        d["preset"] = "mm1-design1"
    try:
        return ExperimentConfig.from_dict(d)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def _write(text: str, out) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    data = generate_design(cfg.simulator, cfg.design_points, cfg.reps, cfg.seed)
    if args.format == "json":
        text = json.dumps({"simulator": cfg.simulator, "x": data.x.tolist(),
                           "y": [yi.tolist() for yi in data.y]}) + "\n"
        _write(text, args.out)
    elif args.out in (None, "-"):
        buf = io.StringIO()
        data.to_csv(buf)
        sys.stdout.write(buf.getvalue())
    else:
        data.to_csv(args.out)
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _load_config(args)
    if args.method not in METHODS:
        raise ConfigError(f"unknown method {args.method!r}; choose from {list(METHODS)}")
    cfg.methods = [args.method]
    if args.data:
        data = ReplicatedDataset.from_csv(args.data)
    else:
        data = generate_design(cfg.simulator, cfg.design_points, cfg.reps, cfg.seed)
    lo, hi = DOMAINS[cfg.simulator]
    grid = np.linspace(lo, hi, args.grid)
    seeds = np.random.SeedSequence([cfg.seed, 0]).spawn(8)
    (_, model, _), = list(_fit_methods(cfg, data, seeds))
    if isinstance(model, Exception):
        logging.error("%s failed: %s", args.method, model)
        return EXIT_METHOD
    L, U = model.predict(grid)
    if args.format == "json":
        text = json.dumps({"label": model.label, "x": grid.tolist(), "L": L.tolist(), "U": U.tolist()},
                          default=str) + "\n"
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "L", "U"])
        for row in zip(grid, L, U):
            w.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
    _write(text, args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    report = run_experiment(cfg)
    out = args.out or cfg.output
    if out in (None, "-"):
        sys.stdout.write(RENDER[args.format](report))
    else:
        emit_report(report, out, args.format)
    failed = any(r.failures for r in report.results)
    return EXIT_METHOD if failed else EXIT_OK


def cmd_report(args) -> int:
    try:
        report = read_report(args.input)
    except (OSError, json.JSONDecodeError, KeyError) as e:
        raise ConfigError(f"cannot read report {args.input}: {e}") from e
    _write(RENDER[args.format](report), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="simpi", description="Prediction intervals for simulation metamodels.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, formats, default):
        sp.add_argument("--config", help="JSON file with ExperimentConfig fields")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--out", help="output path (default: stdout)")
        sp.add_argument("--format", choices=formats, default=default)
        sp.add_argument("--preset", help="design preset, e.g. mm1-design1")

    s = sub.add_parser("simulate", help="generate a replicated training design")
    common(s, ["csv", "json"], "csv")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit one method on one dataset and print its intervals on a grid")
    common(f, ["csv", "json"], "csv")
    f.add_argument("--method", required=True)
    f.add_argument("--data", help="dataset CSV written by 'simulate' (default: simulate one)")
    f.add_argument("--grid", type=int, default=50, help="number of grid points for the output")
    f.set_defaults(func=cmd_fit)

    b = sub.add_parser("bench", help="run the full repeated experiment")
    common(b, ["csv", "json", "markdown"], "csv")
    b.add_argument("--methods", help="comma-separated subset of " + ",".join(METHODS))
    b.add_argument("--repetitions", type=int)
    b.add_argument("--workers", type=int)
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("report", help="re-render a JSON report")
    r.add_argument("input", help="report written with --format json")
    r.add_argument("--out")
    r.add_argument("--format", choices=["csv", "json", "markdown"], default="markdown")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
