#!/usr/bin/env python3
"""
forklab command line: run one scenario, run the matrix, list protocols.
"""
from __future__ import annotations
import argparse
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from forklab.errors import ConfigError, IncompleteCorpus, IoError
from forklab.protocols import PROTOCOLS
from forklab.scenarios.config import expected_cell, load_corpus, load_scenario, normalize_expectation
from forklab.scenarios.export import FORMATS, export_event_log, export_report, normalize_format, render_markdown
from forklab.scenarios.matrix import MATRIX_ATTACKS, golden_matrix, run_matrix
from forklab.scenarios.runner import run_scenario
from forklab.scenarios.trials import run_trials
from forklab.settings import Settings, configure_logging

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_USAGE = 2

# `--expect` given without a value: use the scenario file's own expectation
FROM_FILE = object()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forklab", description="Simulate forking attacks on enclave protocols")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run one scenario file")
    run.add_argument("scenario", help="Path to a scenario YAML file")
    run.add_argument("--seed", type=int, help="Override the scenario seed")
    run.add_argument("--trials", type=int, help="Repeat N >= 100 times and report a frequency")
    run.add_argument("--out", help="Write the report here")
    run.add_argument("--format", choices=FORMATS, help="Report format (default: from --out suffix, else json)")
    run.add_argument("--events", help="Also write the event log (.csv or .jsonl)")
    run.add_argument("--expect", nargs="?", const=FROM_FILE, default=None,
                     help="succeeds | fails | not-applicable; bare flag uses the file's expect field")

    matrix = sub.add_parser("matrix", help="Run the scenario corpus and print the matrix")
    matrix.add_argument("--corpus", help="Scenario directory (default FORKLAB_CORPUS_DIR)")
    matrix.add_argument("--seed", type=int, help="Override every scenario seed")
    matrix.add_argument("--out", help="Write the report here")
    matrix.add_argument("--format", choices=FORMATS, help="Report format (default: from --out suffix, else json)")
    matrix.add_argument("--expect", action="store_true", help="Compare with the golden matrix")
    matrix.add_argument("--jobs", type=int, help="Worker processes (default FORKLAB_JOBS)")

    sub.add_parser("list", help="List protocols, variants and attacks")
    return parser


def _out_path(out: str, settings: Settings) -> Path:
    """A bare file name goes under FORKLAB_OUTPUT_DIR."""
    p = Path(out)
    if p.is_absolute() or p.parent != Path("."):
        return p
    return Path(settings.output_dir) / p


def _seed(cli_seed: Optional[int], settings: Settings) -> Optional[int]:
    return cli_seed if cli_seed is not None else settings.seed_override


def cmd_run(args: argparse.Namespace, settings: Settings) -> int:
    config = load_scenario(args.scenario).with_seed(_seed(args.seed, settings))
    expect = config.expect if args.expect is FROM_FILE else normalize_expectation(args.expect)
    if args.expect is FROM_FILE and expect is None:
        raise ConfigError("expect", f"{args.scenario} has no expect field")

    trials = args.trials if args.trials is not None else (config.trials or None)
    if trials and expect is not None:
        raise ConfigError("expect", "--expect compares a single run; drop --trials")
    if trials:
        report = run_trials(config, trials)
        print(f"📊 {config.name}: {report.successes}/{report.trials} = {report.frequency:.4f} "
              f"(95% CI {report.ci_low:.4f}..{report.ci_high:.4f})")
        cell = None
    else:
        report = run_scenario(config)
        cell = report.cell
        print(f"🔬 {config.name} [seed {config.seed}]: {cell.value} ({report.outcome.evidence_summary() or 'no evidence'})")
        if args.events:
            print(f"📄 Event log written to {export_event_log(report.log, _out_path(args.events, settings))}")

    if args.out:
        fmt = normalize_format(args.format, args.out)
        path = export_report(report, fmt, _out_path(args.out, settings), title=config.name)
        print(f"📄 Report written to {path}")

    if expect is None or cell is None:
        return EXIT_OK
    if cell == expected_cell(expect):
        print(f"✅ {config.name}: matches expectation ({expect})")
        return EXIT_OK
    print(f"❌ {config.name}: expected {expect}, got {cell.value}")
    return EXIT_MISMATCH


def cmd_matrix(args: argparse.Namespace, settings: Settings) -> int:
    corpus = load_corpus(args.corpus or settings.corpus_dir)
    seed = _seed(args.seed, settings)
    report = run_matrix(corpus, seed=seed, jobs=args.jobs or settings.jobs)
    print(render_markdown(report.to_rows(), "forklab matrix" + (f" (seed {seed})" if seed is not None else "")))

    if args.out:
        fmt = normalize_format(args.format, args.out)
        path = export_report(report, fmt, _out_path(args.out, settings), title="forklab matrix")
        print(f"📄 Report written to {path}")

    if not args.expect:
        return EXIT_OK
    mismatches = report.mismatches(golden_matrix())
    if not mismatches:
        print(f"✅ Matrix matches the golden matrix ({len(report.rows)} rows)")
        return EXIT_OK
    for m in mismatches:
        print(f"❌ {m['protocol']}/{m['variant']} {m['attack']}: expected {m['expected']}, got {m['got']}")
    return EXIT_MISMATCH


def cmd_list() -> int:
    attacks = ", ".join(k.value for k in MATRIX_ATTACKS)
    for name, world in PROTOCOLS.items():
        print(f"{name:<18} variants: {', '.join(world.variants):<20} attacks: {attacks:<18} consensus: {world.consensus}")
        for key, value in world.defaults.items():
            print(f"{'':<18}   {key} = {value!r}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    settings = Settings.from_env()
    configure_logging(settings.log_level)

    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args, settings)
        if args.command == "matrix":
            return cmd_matrix(args, settings)
        return cmd_list()
    except ConfigError as e:
        print(f"❌ Config error: {e}", file=sys.stderr)
    except IncompleteCorpus as e:
        print(f"❌ {e}", file=sys.stderr)
    except IoError as e:
        print(f"⚠️  {e}", file=sys.stderr)
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
