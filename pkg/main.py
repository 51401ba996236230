import sys

from app import cli
from services.middleware import run_cli


def main():
    return run_cli(cli)


if __name__ == '__main__':
    sys.exit(main())
