"""Command-line entry point: ``pqal run|table|curve|rank``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import harness
from .acquisition import STRATEGIES
from .config import METHODS, bundled_config_dir, load_config
from .errors import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _resolve_config_path(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    bundled = bundled_config_dir() / name
    for candidate in (bundled, bundled.with_suffix(".toml")):
        if candidate.exists():
            return candidate
    raise ConfigError(f"config file not found: {name}")


def _load(args):
    cfg = load_config(_resolve_config_path(args.config))
    changes = {}
    if args.seed_override is not None:
        changes["seeds"] = (args.seed_override,)
    if args.method is not None:
        changes["method"] = args.method
    if args.acquisition is not None:
        changes["acquisition"] = args.acquisition
    if args.method is not None or args.acquisition is not None:
        grid = cfg.grid
        if args.method is not None:
            grid = dataclasses.replace(grid, methods=())
        if args.acquisition is not None:
            grid = dataclasses.replace(grid, acquisitions=())
        changes["grid"] = grid
    return cfg.replace(**changes) if changes else cfg


def _emit(text, out):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def cmd_run(args):
    cfg = _load(args)
    out = Path(args.out or "results")
    out.mkdir(parents=True, exist_ok=True)
    records = harness.run_experiment(cfg, round_log_dir=out)
    path = harness.write_results(records, out, cfg.cells())
    finals = [r for r in records if r.metric_name == harness.FINAL_METRIC]
    for r in finals:
        val = "n/a" if r.metric_value is None else f"{r.metric_value:.4f}"
        print(f"{r.method:<13} level={r.shift_level} acq={r.acquisition:<16} seed={r.seed} "
              f"final_mse={val}")
    print(f"wrote {len(records)} records to {path}")


def cmd_rank(args):
    cfg = _load(args)
    out = Path(args.out or "results")
    records = harness.run_rank_experiment(cfg)
    path = harness.write_results(records, out, [cfg])
    by_b = {}
    for r in records:
        by_b.setdefault(r.extra["B"], []).append(r.metric_value)
    for b in sorted(by_b):
        vals = by_b[b]
        print(f"B={b}: mean effective rank {sum(vals) / len(vals):.2f} over {len(vals)} seeds")
    print(f"wrote {len(records)} records to {path}")


def cmd_table(args):
    _emit(harness.emit_table(harness.read_results(args.results_dir)), args.out)


def cmd_curve(args):
    _emit(harness.emit_curve(harness.read_results(args.results_dir)), args.out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pqal", description="Proxy-based active domain adaptation experiments")
    p.add_argument("-v", "--verbose", action="store_true", help="log warnings and progress")
    sub = p.add_subparsers(dest="command", required=True)

    def add_config_command(name, func, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("config", help="TOML config path, or the name of a bundled preset")
        sp.add_argument("--seed-override", type=int, default=None, help="run this single seed")
        sp.add_argument("--out", default=None, help="results directory (default ./results)")
        sp.add_argument("--method", choices=METHODS, default=None)
        sp.add_argument("--acquisition", choices=STRATEGIES, default=None)
        sp.set_defaults(func=func)

    add_config_command("run", cmd_run, "run a method/config grid over seeds")
    add_config_command("rank", cmd_rank, "effective-rank diagnostic over proxy bin counts")
    for name, func, help_text in (("table", cmd_table, "mean final MSE, methods x shift levels"),
                                  ("curve", cmd_curve, "MSE per round with 95%% bands")):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("results_dir")
        sp.add_argument("--out", default=None, help="write the CSV here instead of stdout")
        sp.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any runtime failure maps to exit 2
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
