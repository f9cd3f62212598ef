"""Command-line entry: render one export file per invocation."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .render import PlotJob, RenderError, kind_of_payload, load_export, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plotkit",
        description="Render dcqn plot-data JSON exports to PNG or SVG figures.",
    )
    parser.add_argument("input", help="export JSON file (schema v1)")
    parser.add_argument("-o", "--out", required=True,
                        help="output image path (.png or .svg)")
    parser.add_argument("--kind", choices=("auto", "fan", "scenarios", "heatmap"),
                        default="auto",
                        help="figure kind; 'auto' reads it from the export file")
    parser.add_argument("--dpi", type=int, default=100)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        kind = args.kind
        if kind == "auto":
            kind = kind_of_payload(load_export(Path(args.input)))
        job = PlotJob(input_path=Path(args.input), kind=kind,
                      output_path=Path(args.out), style={"dpi": args.dpi})
        render(job)
    except RenderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
