#!/usr/bin/env python
"""
Run cvqkd-rt from a checkout without installing it: python cvqkd-rt.py --help
"""
import sys
from pathlib import Path

SRC_PATH = Path(__file__).resolve().parent / "src"


def main() -> int:
    if not (SRC_PATH / "cvqkd_rt" / "cli.py").is_file():
        print(f"cvqkd-rt sources not found under {SRC_PATH}; run from the project root", file=sys.stderr)
        return 1
    sys.path.insert(0, str(SRC_PATH))
    from cvqkd_rt.cli import run_cli

    return run_cli()


if __name__ == "__main__":
    sys.exit(main())
