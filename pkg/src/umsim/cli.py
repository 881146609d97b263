"""``umsim`` command line entry point."""
import argparse
import json
import math
import sys
from collections import Counter
from pathlib import Path

from . import __version__
from .config import load_config, load_preset, parse_config
from .exceptions import ConfigError
from .io import aggregate, format_real, write_csv, write_sidecar
from .runner import default_workers, run_trials

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """Usage mistakes are configuration errors, so they exit with 1 rather than argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    ap = _Parser(prog="umsim", description="Seeded UM-MIMO Monte Carlo experiments.")
    ap.add_argument("--version", action="version", version=f"umsim {__version__}")
    ap.add_argument("task", choices=("geometry", "chest", "detect", "beamform"))
    src = ap.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="JSON scenario file")
    src.add_argument("--preset", help="name of a shipped preset, e.g. fig7_detect_desk")
    ap.add_argument("--out", help="CSV output path (default: <scenario_id>.csv)")
    ap.add_argument("--seed", type=int, help="override the config seed (unsigned 64-bit)")
    ap.add_argument("--trials", type=int, help="override the trial count")
    ap.add_argument("--workers", type=int, default=None, help="worker processes (default: $UMSIM_WORKERS or 1)")
    ap.add_argument("--timing", action="store_true", help="also record runtime_s (not reproducible)")
    ap.add_argument("--sidecar", action="store_true",
                    help="chest only: dump raw estimates to <out>.<algorithm>.cpx")
    ap.add_argument("--quiet", action="store_true", help="suppress the summary table")
    return ap


def _summary(records, sweep_name, stream):
    counts = Counter((r.algorithm, r.sweep_value, r.metric_name) for r in records if not math.isnan(r.value))
    for (alg, value, metric), mean in aggregate(records).items():
        n = counts[alg, value, metric]
        print(f"{alg}\t{sweep_name}={format_real(value)}\t{metric}\tmean={format_real(mean)}\tn={n}", file=stream)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_preset(args.preset) if args.preset else load_config(args.config)
        if args.task == "geometry" and cfg.task != "geometry":
            # any scenario's array can be inspected on its own
            cfg = parse_config({"task": "geometry", "seed": cfg.seed, "scenario_id": cfg.scenario_id,
                                "geometry": cfg.geometry, "channel": cfg.channel})
        if cfg.task != args.task:
            raise ConfigError(f"config is for task {cfg.task!r}, not {args.task!r}", "task")
        changes = {}
        if args.seed is not None:
            changes["seed"] = args.seed
        if args.trials is not None:
            changes["trials"] = args.trials
        if changes:
            cfg = cfg.replace(**changes)
        workers = args.workers if args.workers is not None else default_workers()
        if workers < 1:
            raise ConfigError("must be >= 1", "workers")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(args.out or f"{cfg.scenario_id}.csv")
    try:
        result = run_trials(cfg, workers=workers, timing=args.timing, capture=args.sidecar)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_csv(result.records, out)
        meta = {
            "config": cfg.to_dict(),
            "failed_cells": result.failures,
            "assumptions": [],
        }
        if cfg.task == "beamform":
            meta["assumptions"].append(
                f"transmit power {cfg.params['power_dbm']} interpreted as {cfg.params['power_unit_assumed']}")
        Path(f"{out}.config.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        for alg, arr in result.captures.items():
            write_sidecar(f"{out}.{alg}.cpx", arr)
    except (OSError, RuntimeError, ValueError, ArithmeticError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    if not args.quiet:
        sweep = result.records[0].sweep_name if result.records else "none"
        _summary(result.records, sweep, sys.stdout)
    if result.failures:
        print(f"{result.failures} algorithm-trial failures recorded as 'error' rows:", file=sys.stderr)
        for line in result.errors[:20]:
            print(f"  {line}", file=sys.stderr)
    print(f"wrote {out} ({len(result.records)} records)", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
