"""gazelab command-line entry point."""
import argparse
import logging
import sys
from typing import Any, Dict, List, Optional

import pipeline
from config import TOOL_VERSION, load_config, settings
from errors import GazelabError, UsageError
from logging_utils import setup_logging
from metrics import write_metrics

logger = logging.getLogger(__name__)

SUBCOMMANDS = {
    "detect": "events CSV, quality report and exclusions",
    "features": "feature matrix CSV",
    "train": "nested cross-validation, model report, ROC and SHAP tables",
    "explain": "SHAP summary and feature-elimination curve",
    "stats": "group or before/after test table",
    "synth": "planted synthetic recordings with ground truth",
    "pipeline": "detect, features, train, explain and stats",
}


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so usage errors map to exit 1."""

    def error(self, message: str) -> None:
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gazelab", description="VR gaze, head and pupil analytics")
    parser.add_argument("--version", action="version", version=f"gazelab {TOOL_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_text in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="pipeline config JSON")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--window", type=float, help="override the feature window (s)")
        p.add_argument("--repeats", type=int, help="override the outer CV repeats")
        p.add_argument("--preset", help="override the detection preset")
        p.add_argument("--catalog", help="override the feature catalog")
        p.add_argument("--output-dir", help="artifact directory (default: config output_dir)")
        p.add_argument("--workers", type=int, help="worker processes")
        p.add_argument("--metrics-file", help="write Prometheus metrics here after the run")
        if name in ("detect", "pipeline"):
            p.add_argument("--export-pupil", action="store_true", help="write cleaned pupil traces")
    return parser


def overrides_from(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "seed": args.seed,
        "features.window_s": args.window,
        "cv.outer_repeats": args.repeats,
        "preset": args.preset,
        "features.catalog": args.catalog,
    }


def run(argv: Optional[List[str]] = None) -> int:
    """Parse, run one subcommand, and return the process exit code."""
    setup_logging(settings.log_level)
    metrics_file = None
    command = None
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        metrics_file = args.metrics_file
        cfg = load_config(args.config, overrides_from(args))
        workers = args.workers or settings.workers
        if workers < 1:
            raise UsageError(f"--workers must be >= 1, got {workers}")
        store = pipeline.artifact_store(cfg, args.output_dir or settings.output_dir)
        logger.info(
            "Run started",
            extra={"stage": command, "config_hash": cfg.config_hash(), "preset": cfg.detection().name},
        )
        code = pipeline.run_stage(command, cfg, store, workers, export_pupil=getattr(args, "export_pupil", False))
    except GazelabError as e:
        code = e.exit_code
        logger.error(str(e), extra={"stage": command, "exit_code": code})
    if metrics_file:
        write_metrics(metrics_file)
    logger.info("Run finished", extra={"stage": command, "exit_code": code})
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
