"""Command-line entry point: ``perceptbench {validate,run,judge,aggregate,report}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .aggregate import BRADLEY_TERRY, WIN_RATE
from .errors import ConfigError, PerceptBenchError
from .judge import JudgeConfig

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

_METHODS = {
    "win-rate": (WIN_RATE,),
    "bradley-terry": (BRADLEY_TERRY,),
    "both": (WIN_RATE, BRADLEY_TERRY),
}

log = logging.getLogger("perceptbench")


def _add_run_options(p: argparse.ArgumentParser, manifest_required: bool = True) -> None:
    p.add_argument("--manifest", required=manifest_required, help="dataset manifest (JSON)")
    p.add_argument("--category", action="append", default=[], help="restrict to a category (repeatable)")
    p.add_argument("--schedule", default="full", help="full | sampled:<k>  (default: full)")
    p.add_argument("--order-balanced", action="store_true", help="judge every pair in both orders")
    p.add_argument("--seed", type=int, default=0, help="seed for sampling and the simulated judge")

    j = p.add_argument_group("judge")
    j.add_argument("--judge", choices=("live", "simulated"), default="simulated")
    j.add_argument("--model", default=JudgeConfig.model_id)
    j.add_argument("--temperature", type=float, default=0.01)
    j.add_argument("--noise-p", type=float, default=0.0, help="flip probability (simulated only)")
    j.add_argument("--concurrency", type=int, default=4)
    j.add_argument("--endpoint", default=None, help="chat-completions URL of the live judge")
    j.add_argument("--api-key-env", default="JUDGE_API_KEY", help="environment variable holding the credential")
    j.add_argument("--max-retries", type=int, default=2)
    j.add_argument("--timeout", type=float, default=120.0, help="per-request timeout in seconds")
    j.add_argument("--max-image-dimension", type=int, default=8000)
    j.add_argument("--downscale", action="store_true", help="shrink oversized images instead of rejecting them")
    j.add_argument("--template", default=None, help="prompt template override file")
    j.add_argument("--debug-wire", action="store_true", help="log request/response bodies (images redacted)")

    a = p.add_argument_group("aggregation")
    a.add_argument("--method", choices=sorted(_METHODS), default="win-rate")
    a.add_argument("--epsilon", type=float, default=0.01, help="Bradley-Terry pseudo-count")
    a.add_argument("--max-iter", type=int, default=10_000)
    a.add_argument("--tol", type=float, default=1e-10)

    o = p.add_argument_group("output")
    o.add_argument("--output", default="out")
    o.add_argument("--cache-dir", default=None, help="verdict cache directory (default: <output>/cache)")
    o.add_argument("--emit-schedule", action="store_true")
    o.add_argument("--emit-matrices", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="perceptbench",
        description="Pairwise visual-perception judging with Bradley-Terry aggregation and correlation reports.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("validate", "check a configuration without running it"),
        ("run", "ingest, schedule, judge, aggregate and report"),
        ("judge", "ingest, schedule and judge only"),
    ):
        _add_run_options(sub.add_parser(name, help=help_text))
    for name, help_text in (
        ("aggregate", "score previously judged pairs"),
        ("report", "write tables, radar charts and the run summary"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--output", default="out", help="output directory of an earlier judge stage")
        p.add_argument("--manifest", default=None, help="override the manifest recorded by the judge stage")
        p.add_argument("--method", choices=sorted(_METHODS), default=None)
        p.add_argument("--epsilon", type=float, default=None)
        p.add_argument("--emit-matrices", action="store_true")
    return parser


def config_from_args(args: argparse.Namespace) -> pipeline.RunConfig:
    judge = JudgeConfig(
        backend=args.judge,
        model_id=args.model,
        temperature=args.temperature,
        max_image_dimension=args.max_image_dimension,
        max_retries=args.max_retries,
        request_timeout=args.timeout,
        concurrency_limit=args.concurrency,
        endpoint_url=args.endpoint,
        credential_env_var_name=args.api_key_env,
        noise_p=args.noise_p,
        seed=args.seed,
        debug_wire=args.debug_wire,
    )
    return pipeline.RunConfig(
        manifest=args.manifest,
        output=args.output,
        cache_dir=args.cache_dir,
        categories=tuple(args.category),
        schedule=args.schedule,
        order_balanced=args.order_balanced,
        seed=args.seed,
        judge=judge,
        methods=_METHODS[args.method],
        epsilon=args.epsilon,
        max_iter=args.max_iter,
        tol=args.tol,
        template=args.template,
        downscale=args.downscale,
        emit_schedule=args.emit_schedule,
        emit_matrices=args.emit_matrices,
    )


def _stored_config(args: argparse.Namespace) -> pipeline.RunConfig:
    config = pipeline.load_run_config(args.output)
    changes = {"output": args.output}
    if args.manifest:
        changes["manifest"] = args.manifest
    if args.method:
        changes["methods"] = _METHODS[args.method]
    if args.epsilon is not None:
        changes["epsilon"] = args.epsilon
    if args.emit_matrices:
        changes["emit_matrices"] = True
    doc = config.to_dict()
    doc.update(changes)
    return pipeline.RunConfig.from_dict(doc)


def _print_summary(summary) -> None:
    t = summary.totals()
    print(
        f"{summary.dataset}: scheduled {t.scheduled}, judged {t.judged} "
        f"({t.cached} cached), failed {t.failed}, backend calls {summary.backend_calls}"
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "debug_wire", False):
        logging.getLogger("perceptbench.wire").setLevel(logging.DEBUG)

    try:
        if args.command in ("aggregate", "report"):
            config = _stored_config(args)
        else:
            config = config_from_args(args)

        if args.command == "validate":
            diags = pipeline.validate(config)
            for d in diags:
                print(d)
            if not diags:
                print("ok")
            return EXIT_CONFIG if diags else EXIT_OK
        if args.command == "run":
            summary = pipeline.run(config)
            _print_summary(summary)
            print(f"artifacts written to {Path(config.output).resolve()}")
        elif args.command == "judge":
            outcome = pipeline.run_judge_stage(config)
            judged = sum(c.judged for c in outcome.counts.values())
            print(f"judged {judged} pairs, {len(outcome.failures)} failed, {outcome.backend_calls} backend calls")
        elif args.command == "aggregate":
            scores = pipeline.aggregate_stage(config)
            print(f"computed {len(scores)} score vectors")
        elif args.command == "report":
            _, summary = pipeline.report_stage(config)
            _print_summary(summary)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PerceptBenchError, OSError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
