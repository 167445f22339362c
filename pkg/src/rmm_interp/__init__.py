import sys

from . import cli


def main():
    sys.exit(cli.main())
