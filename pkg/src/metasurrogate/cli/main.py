"""``metasurrogate`` command line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from metasurrogate.cli.checkpoint import checkpoint_load
from metasurrogate.cli.config import load_config
from metasurrogate.cli.pipelines import run
from metasurrogate.cli.report import write_report
from metasurrogate.errors import CheckpointError, ConfigError, DataError, NumericError

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4

log = logging.getLogger("metasurrogate")


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, CheckpointError)):
        return EXIT_DATA
    if isinstance(exc, (NumericError, FloatingPointError, ArithmeticError)):
        return EXIT_NUMERIC
    return EXIT_OTHER


def inspect(path) -> dict:
    ck = checkpoint_load(path)
    return {
        "format_version": ck.format_version,
        "config": ck.config.to_dict(),
        "metadata": ck.metadata,
        "arrays": {name: list(v.shape) for name, v in ck.params.items()},
        "num_values": ck.params.num_values(),
        "digest": ck.params.digest(),
    }


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="metasurrogate", description="Meta-learned surrogate experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the pipeline named in a TOML config")
    r.add_argument("config")
    rep = sub.add_parser("report", help="aggregate <method>__rep<k>.jsonl files into CSV")
    rep.add_argument("run_dir")
    ins = sub.add_parser("inspect", help="print a checkpoint's manifest as JSON")
    ins.add_argument("checkpoint")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        if args.command == "run":
            out = run(load_config(args.config))
            print(out)
        elif args.command == "report":
            print(write_report(args.run_dir))
        else:
            print(json.dumps(inspect(args.checkpoint), indent=2, sort_keys=True))
    except Exception as exc:  # noqa: BLE001 - mapped to an exit status
        print(f"error: {exc}", file=sys.stderr)
        code = exit_code(exc)
        if code == EXIT_OTHER:
            log.exception("unexpected failure")
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
