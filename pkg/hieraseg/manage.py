"""
`hieraseg` command-line entry point.

    hieraseg validate-hierarchy hieraseg/fixtures/mm5b.json
    hieraseg gen-data --out runs/data
    hieraseg train --data runs/data/data --out runs/train
    hieraseg ablate --suite bhccm --seeds 5 --out runs/ablate

Failures print `<category>: <message>` to stderr and exit with the code of
the error: 2 invalid input, 3 numerical failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import logging
import logging.config
import sys
from typing import Optional, Sequence, TextIO

from hieraseg import __version__, settings
from hieraseg.commands import COMMANDS
from hieraseg.exceptions import HieraSegError, StorageError

logger = logging.getLogger(__name__)


def create_parser(stdout: Optional[TextIO] = None) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hieraseg", description="Hierarchical segmentation toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="command")
    for command_class in COMMANDS.values():
        command_class(stdout).create_parser(subparsers)
    return parser


def configure_logging(verbose: bool = False) -> None:
    logging.config.dictConfig(settings.LOGGING)
    if verbose:
        logging.getLogger("hieraseg").setLevel(logging.DEBUG)


def main(argv: Optional[Sequence[str]] = None, stdout: Optional[TextIO] = None) -> int:
    args = create_parser(stdout).parse_args(argv)
    configure_logging(args.verbose)
    try:
        args.handler.execute(args)
    except HieraSegError as exc:
        logger.debug("%s failed", args.command, exc_info=True)
        sys.stderr.write(f"{exc.category}: {exc}\n")
        return exc.exit_code
    except OSError as exc:
        logger.debug("%s failed", args.command, exc_info=True)
        sys.stderr.write(f"{StorageError.category}: {exc}\n")
        return StorageError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
