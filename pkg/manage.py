#!/usr/bin/env python
"""Command-line utility for the hieraseg toolkit."""
import sys


def main():
    """Run a hieraseg subcommand."""
    try:
        from hieraseg.manage import main as run
    except ImportError as exc:
        raise ImportError(
            "Couldn't import hieraseg. Are you sure numpy and Pillow are "
            "installed and available on your PYTHONPATH environment variable? "
            "Did you forget to activate a virtual environment?"
        ) from exc
    return run(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
