"""Command line interface.

    anoncloud run --scenario cfg.yaml [--seed N] [--trace-out run.jsonl]
    anoncloud replay run.jsonl
    anoncloud check-config cfg.yaml

Exit codes: 0 when every invariant holds and every linkage verdict
matches its expectation, 1 when the run or report fails, 2 for bad
configs, unreadable transcripts, or bad usage.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .errors import ConfigError, LivelockSuspected, SchemaError
from .scenario import load_config, replay, run_scenario

ENV_SEED = "ANONCLOUD_SEED"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anoncloud",
        description="Deterministic simulator for an agent-based anonymous "
        "cloud: run scenarios, replay transcripts, check configs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario to quiescence and report")
    run.add_argument("--scenario", required=True, help="scenario YAML path")
    run.add_argument(
        "--seed",
        type=int,
        default=None,
        help=f"master seed (default: scenario value, or ${ENV_SEED})",
    )
    run.add_argument(
        "--payment-mode",
        choices=("postpaid", "prepaid"),
        default=None,
        help="override the scenario's payment mode",
    )
    run.add_argument(
        "--adversary",
        action="append",
        default=None,
        metavar="MODEL",
        help="adversary model to evaluate (repeatable; default: scenario list)",
    )
    run.add_argument(
        "--step-budget",
        type=int,
        default=None,
        help="delivery budget before declaring a livelock",
    )
    run.add_argument("--trace-out", default=None, help="write transcript JSONL here")
    run.add_argument("--report-out", default=None, help="write report JSON here")
    run.add_argument(
        "--figures",
        default=None,
        metavar="DIR",
        help="render timeline/knowledge/linkage PNGs into DIR",
    )

    rep = sub.add_parser("replay", help="recompute the report from a transcript")
    rep.add_argument("transcript", help="transcript JSONL path")
    rep.add_argument("--report-out", default=None, help="write report JSON here")
    rep.add_argument(
        "--figures",
        default=None,
        metavar="DIR",
        help="render timeline/knowledge/linkage PNGs into DIR",
    )

    chk = sub.add_parser("check-config", help="validate a scenario config")
    chk.add_argument("scenario", help="scenario YAML path")
    return parser


def _emit(report, transcript, args) -> None:
    if getattr(args, "report_out", None):
        Path(args.report_out).write_text(report.to_json())
    if getattr(args, "figures", None):
        from .figures import render_figures

        for path in render_figures(transcript, report, args.figures):
            print(f"wrote {path}")
    for line in report.summary_lines():
        print(line)


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            config = load_config(args.scenario)
            seed = args.seed
            if seed is None and os.environ.get(ENV_SEED):
                try:
                    seed = int(os.environ[ENV_SEED])
                except ValueError:
                    print(
                        f"error: ${ENV_SEED} must be an integer, got "
                        f"{os.environ[ENV_SEED]!r}",
                        file=sys.stderr,
                    )
                    return 2
            transcript, report = run_scenario(
                config,
                seed=seed,
                step_budget=args.step_budget,
                payment_mode=args.payment_mode,
                adversaries=tuple(args.adversary) if args.adversary else None,
            )
            if args.trace_out:
                Path(args.trace_out).write_text(transcript.to_jsonl())
                print(f"wrote {args.trace_out}")
            _emit(report, transcript, args)
            return 0 if report.passed else 1
        if args.command == "replay":
            transcript, report = replay(args.transcript)
            _emit(report, transcript, args)
            return 0 if report.passed else 1
        if args.command == "check-config":
            config = load_config(args.scenario)
            print(
                f"ok: {config.name} ({config.payment_mode}, "
                f"circuit length {config.circuit_length}, "
                f"{config.slave_nodes} slave nodes, "
                f"{len(config.events)} event(s))"
            )
            return 0
    except (ConfigError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LivelockSuspected as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
