"""Run experiment 1 with default settings; extra flags pass through to the CLI."""

import sys

from ssmlab.cli import main

if __name__ == "__main__":
    sys.exit(main(["exp1", *sys.argv[1:]]))
