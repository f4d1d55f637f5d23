"""Command line interface.

Subcommands::

    fasids run    --input PATH [--format raw|jsonl] [--rules F] [--signatures F]
                  [--fuzzy F] [--patterns F] [--out PATH] [--records-out PATH]
                  [--legacy-record-names] [--strict-rule-values]
                  [--no-payload] [--no-fuzzy]
    fasids bench  objects --counts 20,40,80 [--trials N] [--out PATH]
    fasids bench  payload --sizes 1024,65536 [--trials N] [--out PATH]
    fasids report --corpus DIR [--rules F] [--signatures F] [--fuzzy F] [--out PATH]

Exit codes: 0 clean run, 1 alerts were raised, 2 configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from fasids.bench import bench_objects, bench_payload, objects_csv, payload_csv
from fasids.http_ingest import dispatch, parse_header, read_capture, serialize_records
from fasids.pipeline import (
    DEFAULT_FUZZY,
    DEFAULT_RULES,
    DEFAULT_SIGNATURES,
    ConfigError,
    RunConfig,
    corpus_report,
    report_csv,
    run_pipeline,
    write_alerts,
)

EXIT_CLEAN = 0
EXIT_ALERTS = 1
EXIT_CONFIG = 2


def _int_list(text: str) -> list[int]:
    try:
        values = [int(token) for token in text.split(",") if token.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated integer list: {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fasids",
        description="HTTP misuse detection: header rules, payload signatures, "
                    "fuzzy frequency analysis.",
    )
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log diagnostics to stderr")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="analyze a capture and emit alerts")
    run.add_argument("--input", required=True, type=Path, help="capture file or directory")
    run.add_argument("--format", choices=("raw", "jsonl"), default="raw")
    run.add_argument("--rules", type=Path, default=DEFAULT_RULES)
    run.add_argument("--signatures", type=Path, default=DEFAULT_SIGNATURES)
    run.add_argument("--fuzzy", type=Path, default=DEFAULT_FUZZY)
    run.add_argument("--patterns", type=Path, default=None,
                     help="script pattern file (kind + regex per line)")
    run.add_argument("--out", type=Path, default=None,
                     help="alert sink (JSON lines); default stdout")
    run.add_argument("--records-out", type=Path, default=None,
                     help="also write parsed field records here")
    run.add_argument("--legacy-record-names", action="store_true",
                     help="serialize start-line records with the legacy spelling")
    run.add_argument("--strict-rule-values", action="store_true",
                     help="restrict rule values to the letters/digits production")
    run.add_argument("--no-payload", action="store_true", help="disable the payload stage")
    run.add_argument("--no-fuzzy", action="store_true", help="disable the fuzzy stage")

    bench = commands.add_parser("bench", help="timing harnesses (CSV output)")
    bench_kind = bench.add_subparsers(dest="bench_kind", required=True)
    objects = bench_kind.add_parser("objects", help="scan time vs rule-base size")
    objects.add_argument("--counts", type=_int_list, default=[20, 40, 80, 160, 320])
    objects.add_argument("--trials", type=int, default=3)
    objects.add_argument("--out", type=Path, default=None)
    payload = bench_kind.add_parser("payload", help="scan time vs payload size")
    payload.add_argument("--sizes", type=_int_list,
                         default=[1024, 4096, 16384, 65536, 262144])
    payload.add_argument("--trials", type=int, default=3)
    payload.add_argument("--out", type=Path, default=None)

    report = commands.add_parser("report", help="detection rates over a labeled corpus")
    report.add_argument("--corpus", required=True, type=Path)
    report.add_argument("--rules", type=Path, default=DEFAULT_RULES)
    report.add_argument("--signatures", type=Path, default=DEFAULT_SIGNATURES)
    report.add_argument("--fuzzy", type=Path, default=DEFAULT_FUZZY)
    report.add_argument("--out", type=Path, default=None)
    return parser


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text, encoding="utf-8")


def _write_records(config: RunConfig, destination: Path) -> None:
    chunks = []
    for entry in read_capture(config.input_path, config.input_format):
        txn, _ = dispatch(entry)
        if txn is None:
            continue
        records, _ = parse_header(txn)
        chunks.append(serialize_records(records, legacy_names=config.legacy_record_names))
    destination.write_text("\n".join(chunks), encoding="utf-8")


def _cmd_run(args: argparse.Namespace) -> int:
    config = RunConfig(
        input_path=args.input,
        input_format=args.format,
        rules_path=args.rules,
        signatures_path=args.signatures,
        fuzzy_path=args.fuzzy,
        patterns_path=args.patterns,
        legacy_record_names=args.legacy_record_names,
        strict_rule_values=args.strict_rule_values,
        enable_payload=not args.no_payload,
        enable_fuzzy=not args.no_fuzzy,
    )
    result = run_pipeline(config)
    text = write_alerts(result.alerts, args.out)
    if args.out is None:
        sys.stdout.write(text)
    if args.records_out is not None:
        _write_records(config, args.records_out)
    summary = result.summary()
    print(
        f"transactions={summary['transactions']} alerts={summary['alerts']} "
        f"by_source={summary['alerts_by_source']} "
        f"violations={summary['spec_violations']}",
        file=sys.stderr,
    )
    return EXIT_ALERTS if result.alerts else EXIT_CLEAN


def _cmd_bench(args: argparse.Namespace) -> int:
    if args.bench_kind == "objects":
        _emit(objects_csv(bench_objects(args.counts, trials=args.trials)), args.out)
    else:
        _emit(payload_csv(bench_payload(args.sizes, trials=args.trials)), args.out)
    return EXIT_CLEAN


def _cmd_report(args: argparse.Namespace) -> int:
    rows = corpus_report(
        args.corpus,
        rules_path=args.rules,
        signatures_path=args.signatures,
        fuzzy_path=args.fuzzy,
    )
    _emit(report_csv(rows), args.out)
    return EXIT_CLEAN


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.ERROR,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "bench":
            return _cmd_bench(args)
        return _cmd_report(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
