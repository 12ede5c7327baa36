"""Run experiment 2 with default settings; extra flags pass through to the CLI."""

import sys

from ssmlab.cli import main

if __name__ == "__main__":
    sys.exit(main(["exp2", *sys.argv[1:]]))
