"""Command line front door: render one figure from experiment CSVs."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import figures


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fbmplots",
        description="Render figures from CSV outputs of fbmflow experiment runs.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    render = commands.add_parser(
        "render",
        help="draw one figure kind from run CSVs",
        description=(
            "Inputs must live in a run directory containing manifest.txt; "
            "the manifest labels the figure and anchors its provenance."
        ),
    )
    render.add_argument(
        "--kind",
        required=True,
        choices=sorted(figures.KINDS),
        help="which figure to draw",
    )
    render.add_argument(
        "--in",
        dest="inputs",
        required=True,
        metavar="CSV[,CSV...]",
        help="comma-separated input CSVs",
    )
    render.add_argument("--out", required=True, metavar="PNG", help="output image path")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    inputs = [Path(part) for part in args.inputs.split(",") if part]
    try:
        spec = figures.FigureSpec.build(args.kind, inputs, Path(args.out))
        out = figures.render(spec)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"ok: wrote {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
