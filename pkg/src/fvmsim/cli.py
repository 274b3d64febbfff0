"""``fvmsim`` command line: run scenarios, scan mock binaries, emit corpora.

Exit status: 0 on success, 1 when a scenario check fails, 2 on parse errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .binscan import parse_mock_binary, scan_binary
from .corpus import generate_corpus, write_corpus
from .errors import BinaryParseError, FvmError, ScenarioAssertionError, ScenarioParseError
from .hio import load_hio_file
from .scenario import Scenario, Simulation, scenarios_dir

EXIT_OK, EXIT_ASSERT, EXIT_PARSE = 0, 1, 2


def _find_scenario(name: str) -> Path:
    path = Path(name)
    if path.is_file():
        return path
    for cand in (scenarios_dir() / name, scenarios_dir() / f"{name}.fvm"):
        if cand.is_file():
            return cand
    raise FileNotFoundError(name)


def cmd_run(args) -> int:
    try:
        scenario = Scenario.from_file(_find_scenario(args.scenario))
        hio = load_hio_file(args.hio_seed) if args.hio_seed else None
    except ScenarioParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (FileNotFoundError, FvmError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    sim = Simulation(hio=hio, base_dir=scenario.base_dir)
    status = EXIT_OK
    try:
        sim.run(scenario)
    except ScenarioAssertionError as exc:
        print(f"assertion failed: {exc}", file=sys.stderr)
        status = EXIT_ASSERT
    if args.log:
        sim.log.write(args.log)
    else:
        sys.stdout.write(sim.log.to_jsonl())
    return status


def cmd_scan(args) -> int:
    try:
        binary = parse_mock_binary(Path(args.binary).read_text(encoding="utf-8"))
        found = scan_binary(binary, args.service)
    except (BinaryParseError, FvmError) as exc:
        print(f"{args.binary}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    for occ in found:
        print(occ.to_tsv())
    return EXIT_OK


def cmd_corpus(args) -> int:
    entries = generate_corpus(args.seed, args.count, args.fraction)
    manifest = write_corpus(entries, args.out)
    print(f"wrote {len(entries)} programs to {manifest.parent}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fvmsim", description="OS-level service duplication simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario script")
    run.add_argument("scenario", help="scenario file, or the name of a bundled scenario")
    run.add_argument("--log", help="write the JSON Lines event log here instead of stdout")
    run.add_argument("--hio-seed", help="HIO seed file to load instead of the bundled table")
    run.set_defaults(func=cmd_run)

    scan = sub.add_parser("scan", help="find hard-coded service names in a mock binary")
    scan.add_argument("binary")
    scan.add_argument("--service", required=True)
    scan.set_defaults(func=cmd_scan)

    corpus = sub.add_parser("corpus", help="generate a mock-binary corpus with ground truth")
    corpus.add_argument("--seed", type=int, required=True)
    corpus.add_argument("--count", type=int, required=True)
    corpus.add_argument("--fraction", type=float, required=True)
    corpus.add_argument("--out", required=True)
    corpus.set_defaults(func=cmd_corpus)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
