"""Command-line entry point for pixseg.

Every subcommand is a thin wrapper over :mod:`pixseg.pipeline`:

1. Parse the arguments and read the user settings.
2. Configure logging once for the whole process.
3. Run the requested workflow.
4. Translate errors into exit codes, or write a crash report.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric error (NaN/Inf detected), 130 interrupted.
"""

from __future__ import annotations

import argparse
import logging
import sys
import traceback
from dataclasses import replace
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from pixseg import __version__
from pixseg.config import load_run_config, load_settings
from pixseg.errors import ConfigError, DataError, NumericError, ShapeError
from pixseg.help_text import build_help_lines
from pixseg.metrics import (
    RegionSpec,
    load_region_specs,
    summarize,
    summary_lines,
    write_metrics_csv,
    write_summary_csv,
)
from pixseg.modes import DistanceMode, SamplerStrategy
from pixseg.pipeline import (
    compare_samplers,
    evaluate_directories,
    predict_path,
    sample_stats,
    train_on_directory,
    write_comparison,
    write_sample_stats,
)
from pixseg.synth import generate_synthetic, load_synth_config
from pixseg.volume import load_volume

logger = logging.getLogger("pixseg")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3
EXIT_INTERRUPTED = 130

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: str) -> None:
    """Install one stderr handler on the ``pixseg`` logger."""
    numeric = logging.getLevelName(str(level).upper())
    if not isinstance(numeric, int):
        raise ConfigError(f"unknown log level: {level}")
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logger.addHandler(handler)
    logger.setLevel(numeric)
    logger.propagate = False


def write_crash_report(exception: BaseException, report_path: str = "") -> None:
    """Append a crash report to ``report_path``, or print it to stderr."""
    timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
    report = f"""
================================================================================
pixseg Crash Report
================================================================================
Timestamp: {timestamp}
Version: {__version__}
Python: {sys.version}
Platform: {sys.platform}

Exception Type: {type(exception).__name__}
Exception Message: {str(exception)}

Traceback:
{traceback.format_exc()}
================================================================================
"""
    if report_path:
        try:
            path = Path(report_path).expanduser()
            with open(path, "a", encoding="utf-8") as f:
                f.write(report)
            print(f"pixseg crashed unexpectedly; details saved to {path}", file=sys.stderr)
            return
        except OSError:
            pass
    print(report, file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pixseg",
        description="Class-balanced hypercolumn pixel segmentation.",
        epilog="commands:\n  " + "\n  ".join(build_help_lines()),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Log debug messages.")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Only log warnings and errors.")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="Generate a synthetic dataset.")
    synth.add_argument("--out", required=True, type=Path)
    synth.add_argument("--config", type=Path, help="SynthConfig JSON.")
    synth.add_argument("--seed", type=int, help="Override the config seed.")

    train = sub.add_parser("train", help="Train a model on a dataset directory.")
    train.add_argument("--data", required=True, type=Path)
    train.add_argument("--out", required=True, type=Path)
    train.add_argument("--config", type=Path, help="Run config (.json or .toml).")
    train.add_argument("--holdout", type=int, default=0, help="Volumes held out at the end of the sorted list.")
    train.add_argument("--iterations", type=int, help="Override the configured step count.")

    predict = sub.add_parser("predict", help="Predict label volumes with a checkpoint.")
    predict.add_argument("--checkpoint", required=True, type=Path)
    predict.add_argument("--input", required=True, type=Path, help="Volume file or directory.")
    predict.add_argument("--out", required=True, type=Path)

    evaluate = sub.add_parser("evaluate", help="Score predictions against ground truth.")
    evaluate.add_argument("--pred", required=True, type=Path)
    evaluate.add_argument("--gt", required=True, type=Path)
    evaluate.add_argument("--out", required=True, type=Path)
    evaluate.add_argument("--regions", type=Path, help="Region spec JSON.")
    evaluate.add_argument("--spacing", type=float, nargs=3, metavar=("D", "H", "W"))
    evaluate.add_argument(
        "--distance-mode", choices=[m.value for m in DistanceMode], default=DistanceMode.SURFACE.value
    )
    evaluate.add_argument("--summary", type=Path, help="Also write mean/std per region and metric.")

    stats = sub.add_parser("sample-stats", help="Per-class sampled pixel counts.")
    stats.add_argument("--volume", required=True, type=Path)
    stats.add_argument("--n", required=True, type=int)
    stats.add_argument(
        "--strategy", choices=[s.value for s in SamplerStrategy], default=SamplerStrategy.CLASS_BALANCED.value
    )
    stats.add_argument("--seed", type=int, default=0)
    stats.add_argument("--slice", type=int, dest="slice_index")
    stats.add_argument("--out", type=Path, help="CSV path (default: stdout).")

    compare = sub.add_parser("compare-samplers", help="Uniform vs class-balanced twins.")
    compare.add_argument("--data", required=True, type=Path)
    compare.add_argument("--out", required=True, type=Path)
    compare.add_argument("--config", type=Path)
    compare.add_argument("--holdout", type=int, default=1)
    compare.add_argument("--runs", type=int, default=1)
    compare.add_argument("--regions", type=Path)
    return parser


def _load_regions(path: Optional[Path]) -> Optional[List[RegionSpec]]:
    return None if path is None else load_region_specs(path)


def run_command(args: argparse.Namespace, settings: Dict[str, Any]) -> int:
    workers = int(settings["inference"]["workers"])

    if args.command == "synth":
        config = load_synth_config(args.config)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        generate_synthetic(config, args.out)

    elif args.command == "train":
        config = load_run_config(args.config)
        if args.iterations is not None:
            config = replace(config, iterations=args.iterations)
        result = train_on_directory(args.data, args.out, config, holdout=args.holdout)
        print(f"final loss {result.losses[-1]:.6f} after {len(result.losses)} steps")

    elif args.command == "predict":
        written = predict_path(args.checkpoint, args.input, args.out, workers=workers)
        print(f"wrote {len(written)} prediction(s)")

    elif args.command == "evaluate":
        reports = evaluate_directories(
            args.pred,
            args.gt,
            _load_regions(args.regions),
            spacing=tuple(args.spacing) if args.spacing else (),
            mode=DistanceMode(args.distance_mode),
        )
        write_metrics_csv(args.out, reports)
        if args.summary is not None:
            summary = summarize(reports)
            write_summary_csv(args.summary, summary)
            print("\n".join(summary_lines(summary)))

    elif args.command == "sample-stats":
        rows = sample_stats(
            load_volume(args.volume),
            args.n,
            strategy=SamplerStrategy(args.strategy),
            seed=args.seed,
            slice_index=args.slice_index,
        )
        write_sample_stats(args.out if args.out is not None else sys.stdout, rows)

    elif args.command == "compare-samplers":
        rows = compare_samplers(
            args.data,
            load_run_config(args.config),
            holdout=args.holdout,
            runs=args.runs,
            specs=_load_regions(args.regions),
            workers=workers,
        )
        write_comparison(args.out, rows)

    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        # argparse exits 0 for --help/--version and 2 for usage errors.
        return EXIT_OK if exit_.code in (0, None) else EXIT_USAGE

    settings = load_settings()
    try:
        level = "DEBUG" if args.verbose else "WARNING" if args.quiet else settings["logging"]["level"]
        configure_logging(level)
        return run_command(args, settings)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as err:
        print(f"numeric error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ShapeError, OSError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except KeyboardInterrupt:
        print("\nInterrupted by user", file=sys.stderr)
        return EXIT_INTERRUPTED
    except Exception as err:
        write_crash_report(err, settings["crash"]["report_path"])
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
