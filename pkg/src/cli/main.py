# src/cli/main.py
"""Command-line driver: check, build, run, trace-summary and strip."""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from src.application.dtos import (
    BuildRequestDTO,
    CheckResultDTO,
    CompileRequestDTO,
    RunRequestDTO,
)
from src.application.scheduling import POLICIES
from src.cli.dependencies import (
    get_build_use_case,
    get_check_use_case,
    get_run_use_case,
    get_strip_use_case,
    get_trace_summary_use_case,
)
from src.domain.exceptions import ArtifactError, ConfigError, TraceValidationError
from src.domain.value_objects import Diagnostic, TargetConfig
from src.infrastructure.config import CHECK_INVARIANTS, DEFAULT_SCHED, configure_logging
from src.infrastructure.repositories import diagnostics_to_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DIAGNOSTICS = 1
EXIT_USAGE = 2
EXIT_RUNTIME = 3


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid int value: '{text}'")
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0,
                        help="more logging on standard error (repeatable)")

    target = argparse.ArgumentParser(add_help=False)
    target.add_argument("--target-bits", type=int, choices=(32, 64), default=64,
                        help="width of pointers and long")
    target.add_argument("--char", choices=("signed", "unsigned"), default="signed",
                        help="signedness of plain char")
    target.add_argument("--no-registration-check", action="store_true",
                        help="skip the 'may be used unregistered' analysis")
    target.add_argument("--werror", action="store_true", help="treat warnings as errors")
    target.add_argument("--diag-format", choices=("text", "json"), default="text")
    target.add_argument("--entry", default="main", help="entry procedure")

    parser = argparse.ArgumentParser(
        prog="taskc", description="Compiler and simulator for task-annotated C."
    )
    commands = parser.add_subparsers(dest="command", required=True)

    check = commands.add_parser("check", parents=[common, target], help="report diagnostics")
    check.add_argument("file")

    build = commands.add_parser("build", parents=[common, target], help="write an artifact")
    build.add_argument("file")
    build.add_argument("-o", "--output", help="artifact path (default: FILE with .json)")

    run = commands.add_parser("run", parents=[common], help="simulate an artifact")
    run.add_argument("artifact")
    run.add_argument("--machine", help="machine description (default: one cpu worker)")
    run.add_argument("--perf", help="performance model (default: uniform costs)")
    run.add_argument("--sched", choices=sorted(POLICIES), default=DEFAULT_SCHED)
    run.add_argument("--trace", help="write the trace as JSON lines")
    run.add_argument("--dump-buffers", action="store_true",
                     help="print the final host contents of every handle")
    run.add_argument("--max-steps", type=_positive_int,
                     help="fail a task whose kernel runs more than N ops per work item "
                          "(default: no limit)")

    summary = commands.add_parser("trace-summary", parents=[common], help="summarize a trace")
    summary.add_argument("trace")

    strip = commands.add_parser("strip", parents=[common], help="print the plain C program")
    strip.add_argument("file")
    return parser


def _compile_request(args: argparse.Namespace) -> CompileRequestDTO:
    return CompileRequestDTO(
        file=args.file,
        config=TargetConfig.for_bits(args.target_bits, char_signed=args.char == "signed"),
        entry=args.entry,
        registration_check=not args.no_registration_check,
        werror=args.werror,
    )


def _print_diagnostics(diagnostics: Sequence[Diagnostic], fmt: str) -> None:
    if fmt == "json":
        print(diagnostics_to_json(list(diagnostics)), file=sys.stderr)
        return
    for diagnostic in diagnostics:
        print(diagnostic, file=sys.stderr)


def _status(check: CheckResultDTO) -> int:
    return EXIT_DIAGNOSTICS if check.failed else EXIT_OK


def cmd_check(args: argparse.Namespace) -> int:
    check = get_check_use_case().execute(_compile_request(args))
    _print_diagnostics(check.diagnostics, args.diag_format)
    return _status(check)


def cmd_build(args: argparse.Namespace) -> int:
    output = args.output or str(Path(args.file).with_suffix(".json"))
    result = get_build_use_case().execute(BuildRequestDTO(_compile_request(args), output))
    _print_diagnostics(result.check.diagnostics, args.diag_format)
    if result.written is None:
        return EXIT_DIAGNOSTICS
    return _status(result.check)


def cmd_run(args: argparse.Namespace) -> int:
    result = get_run_use_case().execute(RunRequestDTO(
        artifact=args.artifact,
        machine=args.machine,
        perf=args.perf,
        sched=args.sched,
        trace=args.trace,
        check_invariants=CHECK_INVARIANTS,
        max_steps=args.max_steps,
    ))
    if not result.ok:
        print(result.error, file=sys.stderr)
        return EXIT_RUNTIME
    if args.dump_buffers:
        for snapshot in result.image.values():
            values = snapshot.values(result.config)
            print(f"{snapshot.var}: {' '.join(str(v) for v in values)}")
    print(f"makespan: {result.makespan!r}")
    return EXIT_OK


def cmd_trace_summary(args: argparse.Namespace) -> int:
    summary = get_trace_summary_use_case().execute(args.trace)
    print(f"makespan: {summary.makespan!r}")
    print(f"tasks: {summary.task_count}")
    print(f"transfers: {summary.transfer_count}")
    print(f"errors: {summary.error_count}")
    for worker, busy in summary.busy_by_worker.items():
        print(f"worker {worker} busy: {busy!r}")
    for (src, dst), nbytes in summary.bytes_by_link.items():
        print(f"link {src}->{dst} bytes: {nbytes}")
    return EXIT_OK


def cmd_strip(args: argparse.Namespace) -> int:
    text, failure = get_strip_use_case().execute(args.file)
    if failure is not None:
        print(failure, file=sys.stderr)
        return EXIT_DIAGNOSTICS
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "check": cmd_check,
    "build": cmd_build,
    "run": cmd_run,
    "trace-summary": cmd_trace_summary,
    "strip": cmd_strip,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    configure_logging(verbose=args.verbose)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ArtifactError, TraceValidationError) as e:
        print(f"taskc: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        logger.error(f"I/O failure: {e}")
        print(f"taskc: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
