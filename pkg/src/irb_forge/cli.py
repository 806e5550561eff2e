"""Command-line entry point: ``irb-forge <stage> --config path [flags]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, PipelineConfig
from .pipeline import STAGES, Pipeline, PipelineError

logger = logging.getLogger("irb_forge")


class _JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        out = {"level": record.levelname.lower(), "logger": record.name, "msg": record.getMessage()}
        if record.exc_info:
            out["exc"] = self.formatException(record.exc_info)
        return json.dumps(out, ensure_ascii=False)


def _setup_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(getattr(logging, level.upper()))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irb-forge", description="Build and evaluate citation-grounded RAG benchmarks.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="pipeline YAML config")
    common.add_argument("--dry-run", action="store_true", help="print the stage plan and exit")
    common.add_argument("--work-dir", help="override paths.work_dir")
    common.add_argument("--log-level", default="info", choices=["debug", "info", "warning", "error"])
    common.add_argument("--fetch-concurrency", type=int, help="parallel fetches")
    common.add_argument("--politeness-ms", type=int, help="per-host delay between requests")
    common.add_argument("--user-agent", help="HTTP user agent for fetching")
    common.add_argument("--mode", choices=["rag", "closed-book"], help="restrict answer generation to one mode")
    common.add_argument("--k", type=int, help="top-k documents for nDCG and RAG contexts")
    common.add_argument("--current-date", help="question date shown to the generator (YYYY-MM-DD)")
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        sub.add_parser(stage, parents=[common], help=f"run the {stage} stage")
    sub.add_parser("run", parents=[common], help="run every stage in order")
    return parser


def overrides_from_args(args: argparse.Namespace) -> dict:
    return {
        "paths.work_dir": args.work_dir,
        "fetch.concurrency": args.fetch_concurrency,
        "fetch.politeness_ms": args.politeness_ms,
        "fetch.user_agent": args.user_agent,
        "eval.modes": [args.mode.replace("-", "_")] if args.mode else None,
        "eval.k": args.k,
        "eval.current_date": args.current_date,
    }


def main(argv: list[str] | None = None, *, provider_factory=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.log_level)
    try:
        config = PipelineConfig.load(args.config, overrides_from_args(args))
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return 2
    stages = list(STAGES) if args.command == "run" else [args.command]
    pipeline = Pipeline(config, provider_factory=provider_factory)
    try:
        results = pipeline.run(stages, dry_run=args.dry_run)
    except PipelineError as exc:
        logger.error("%s", exc)
        return 1
    except Exception as exc:  # noqa: BLE001 - report any stage crash as a failed run
        logger.exception("stage failed: %s", exc)
        return 1
    if args.dry_run:
        return 1 if any(r.status == "blocked" for r in results) else 0
    for r in results:
        logger.info("%s: %s", r.stage, r.status)
    return 0


if __name__ == "__main__":
    sys.exit(main())
