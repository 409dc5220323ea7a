"""plot_all entry point: regenerate every figure for an output directory."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .render import MissingColumnError, plot_all


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plot_all",
        description="Render figures from the CSV files in a simcli output directory.")
    parser.add_argument("out_dir", help="completed output directory")
    args = parser.parse_args(argv)

    try:
        rendered = plot_all(Path(args.out_dir))
    except (MissingColumnError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for image, labels in rendered.items():
        print(f"{image}: {len(labels)} series")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
