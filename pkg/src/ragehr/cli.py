"""Command-line entry point: ``ragehr <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import pipeline
from .config import TASKS, load_config
from .errors import PipelineRuntimeError, ValidationError
from .training import SUITES

logger = logging.getLogger("ragehr")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
_LOG_FIELDS = ("stage", "patient_id", "duration_ms", "none_substitutions")


class JsonLineFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        out = {
            "ts": round(record.created, 3),
            "level": record.levelname.lower(),
            "logger": record.name,
            "message": record.getMessage(),
        }
        for key in _LOG_FIELDS:
            if hasattr(record, key):
                out[key] = getattr(record, key)
        if record.exc_info:
            out["error"] = self.formatException(record.exc_info)
        return json.dumps(out)


def setup_logging(verbose: bool = False) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.INFO)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML configuration file")
    common.add_argument("--epsilon", type=float, help="abnormality threshold on |z|")
    common.add_argument("--eta", type=float, help="minimum cosine similarity for a KG match")
    common.add_argument("--task", choices=TASKS)
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, help="parallel workers for per-patient stages")
    common.add_argument("--force", action="store_true", help="recompute existing outputs")
    common.add_argument("--keep-going", action="store_true", help="skip failing patients instead of aborting")
    common.add_argument("--cache-dir", type=Path)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ragehr", description="Knowledge-enhanced multimodal EHR pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    ingest = sub.add_parser("ingest", parents=[common], help="validate and normalize a patients file")
    ingest.add_argument("input", type=Path)
    sub.add_parser("synth", parents=[common], help="write a synthetic cohort and knowledge graph")
    sub.add_parser("extract", parents=[common], help="time-series and note entity extraction")
    sub.add_parser("match", parents=[common], help="link entities to knowledge-graph nodes")
    sub.add_parser("summarize", parents=[common], help="generate knowledge-grounded summaries")
    train = sub.add_parser("train", parents=[common], help="train the fusion model and report test metrics")
    train.add_argument("--grid-search", action="store_true", help="pick lr and hidden size on validation first")
    sub.add_parser("evaluate", parents=[common], help="bootstrap-evaluate a trained model")
    ablate = sub.add_parser("ablate", parents=[common], help="run an ablation suite")
    ablate.add_argument("suite", choices=SUITES)
    return parser


def run(args: argparse.Namespace):
    config = load_config(args.config).override(
        epsilon=args.epsilon, eta=args.eta, task=args.task, seed=args.seed, jobs=args.jobs,
        cache_dir=args.cache_dir,
    )
    cmd = args.command
    if cmd == "ingest":
        return pipeline.cmd_ingest(config, args.input)
    if cmd == "synth":
        return pipeline.cmd_synth(config)
    if cmd == "extract":
        return pipeline.cmd_extract(config, force=args.force, keep_going=args.keep_going)
    if cmd == "match":
        return pipeline.cmd_match(config, force=args.force, keep_going=args.keep_going)
    if cmd == "summarize":
        return pipeline.cmd_summarize(config, keep_going=args.keep_going)
    if cmd == "train":
        return pipeline.cmd_train(config, use_grid_search=args.grid_search)
    if cmd == "evaluate":
        return pipeline.cmd_evaluate(config)
    return pipeline.cmd_ablate(config, args.suite)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    start = time.perf_counter()
    try:
        result = run(args)
    except ValidationError as exc:
        logger.error("%s: %s", type(exc).__name__, exc, extra={"stage": args.command})
        return EXIT_VALIDATION
    except (PipelineRuntimeError, OSError) as exc:
        logger.error("%s: %s", type(exc).__name__, exc, extra={"stage": args.command})
        return EXIT_RUNTIME
    ms = round((time.perf_counter() - start) * 1000)
    logger.info("finished", extra={"stage": args.command, "duration_ms": ms})
    print(json.dumps(result.to_dict(), sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
