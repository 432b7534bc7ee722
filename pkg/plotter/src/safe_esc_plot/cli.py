"""safe-esc-plot: render a figure from a safe-esc run directory."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .render import (
    MalformedCsv,
    PlotJob,
    UnsupportedScenario,
    discover_layers,
    load_scenario,
    render,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="safe-esc-plot",
        description="Plot safe-esc trajectory CSVs over the scenario's "
        "safe-set geometry.",
    )
    parser.add_argument("run_dir", help="directory holding <layer>.csv files")
    parser.add_argument(
        "--scenario", required=True, help="scenario JSON (barrier geometry)"
    )
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument(
        "--layers", help="comma list restricting which layer CSVs to draw"
    )
    parser.add_argument(
        "--no-probe", action="store_true", help="omit the probed-point traces"
    )
    parser.add_argument(
        "--no-shade", action="store_true", help="omit unsafe-region shading"
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        layer_csvs = discover_layers(args.run_dir)
        if args.layers:
            wanted = {name.strip() for name in args.layers.split(",")}
            missing = wanted - set(layer_csvs)
            if missing:
                raise MalformedCsv(f"requested layers not in run dir: {sorted(missing)}")
            layer_csvs = {k: v for k, v in layer_csvs.items() if k in wanted}
        job = PlotJob(
            layer_csvs=layer_csvs,
            scenario=load_scenario(args.scenario),
            output_path=Path(args.out),
            show_probe=not args.no_probe,
            shade_unsafe=not args.no_shade,
        )
        summary = render(job)
    except (MalformedCsv, UnsupportedScenario, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    layer_list = ", ".join(f"{k} ({v} rows)" for k, v in summary["layers"].items())
    boundary = ", ".join(item["type"] for item in summary["boundary"])
    print(f"wrote {summary['output']}: layers {layer_list}; boundary: {boundary}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
