"""``render`` command line: one figure per invocation.

Examples:
    render --csv sweep.csv --x snr_db --y rmspe_rad --group method --out fig.png
    render --csv weights.csv --mode heatmap --x col_deg --y row_deg \
        --value energy --out weights.png
"""

from __future__ import annotations

import argparse
import sys

from .plotspec import PlotError, PlotSpec
from .render import render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="render",
        description="Render a line plot or heatmap from toolkit CSV output; "
        "writes both PNG and SVG.",
    )
    parser.add_argument(
        "--csv", action="append", required=True, help="input CSV (repeatable)"
    )
    parser.add_argument("--x", required=True, help="x-axis column")
    parser.add_argument("--y", required=True, help="y-axis column")
    parser.add_argument("--group", help="draw one line per value of this column")
    parser.add_argument(
        "--mode", choices=["line", "heatmap"], default="line"
    )
    parser.add_argument("--value", help="heatmap cell column")
    parser.add_argument("--logy", action="store_true", help="logarithmic y axis")
    parser.add_argument("--title", help="optional figure title")
    parser.add_argument("--out", required=True, help="output .png or .svg path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = PlotSpec(
            csv_paths=tuple(args.csv),
            x=args.x,
            y=args.y,
            out=args.out,
            group=args.group,
            value=args.value,
            mode=args.mode,
            log_y=args.logy,
            title=args.title,
        )
        png, svg = render(spec)
    except PlotError as exc:
        print(f"error:plot: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error:io: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {png} and {svg}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
