"""Command-line entry point: ``floodsim {simulate,bench,layouts,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import bench, raster_io
from .decomp import enumerate_layouts
from .driver import ConfigError, load_config, run_simulation


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _size(text: str) -> tuple[int, int]:
    try:
        rows, cols = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected ROWSxCOLS, got {text!r}") from None
    return rows, cols


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="floodsim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a simulation from a TOML config")
    p.add_argument("--config", required=True)

    p = sub.add_parser("bench", help="time a matrix of resolutions, worker counts and layouts")
    p.add_argument("--resolutions", type=_float_list, required=True, help="cell sizes in metres, e.g. 8,4")
    p.add_argument("--workers", type=_int_list, required=True, help="worker counts, e.g. 1,2,4,8")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--warmup", type=int, default=bench.WARMUP_STEPS)
    p.add_argument("--layouts", choices=("all", "strip"), default="all")
    p.add_argument("--dem", help="base DEM (default: synthetic valley)")
    p.add_argument("--base-size", type=_size, default=(1024, 1024), help="synthetic DEM size ROWSxCOLS at 1 m")
    p.add_argument("--out", default="bench.csv")

    p = sub.add_parser("layouts", help="list cx x cy layouts for a worker count")
    p.add_argument("workers", type=int)
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)

    p = sub.add_parser("report", help="efficiency tables and figures from a bench CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--out-dir", help="write report.txt, scaling_curve.csv and figures here")
    p.add_argument("--no-figures", action="store_true")
    return parser


def _simulate(args) -> int:
    cfg = load_config(args.config)
    report = run_simulation(cfg)
    print(json.dumps(report.summary(), indent=2))
    return 0


def _bench(args) -> int:
    if args.steps < 1:
        raise ValueError("--steps must be positive")
    base = raster_io.load_raster(args.dem) if args.dem else bench.synthetic_dem(*args.base_size)
    records = bench.run_bench(args.resolutions, args.workers, args.steps, base, args.layouts, args.warmup)
    bench.write_records(records, args.out)
    for r in records:
        print(f"{r.resolution_m:g} m  {r.cx}x{r.cy}  {r.steps_per_s:10.2f} steps/s  exchange {r.exchange_pct:5.2f}%")
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def _layouts(args) -> int:
    print(f"{'cx':>4} {'cy':>4} {'borders':>8} {'halo cells':>11}")
    for lay in enumerate_layouts(args.workers, args.rows, args.cols):
        halo = "-" if lay.halo_cells is None else str(lay.halo_cells)
        print(f"{lay.cx:>4} {lay.cy:>4} {lay.shared_borders:>8} {halo:>11}")
    return 0


def _report(args) -> int:
    records = bench.read_records(args.csv)
    print(bench.report(records, args.out_dir, figures=not args.no_figures))
    return 0


COMMANDS = {"simulate": _simulate, "bench": _bench, "layouts": _layouts, "report": _report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, raster_io.RasterError, ValueError, OSError) as exc:
        print(f"floodsim: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
