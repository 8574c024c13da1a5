"""Scaling benchmarks and weak/strong efficiency tables."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import raster_io
from .boundary import CrossSection, DischargeSeries, InflowSpec, OutflowSpec
from .decomp import enumerate_layouts
from .driver import Simulation

log = logging.getLogger(__name__)

WARMUP_STEPS = 50
CSV_COLUMNS = ("resolution_m", "grid_points", "workers", "cx", "cy", "steps_per_s", "exchange_pct", "t_1M_steps_s")


@dataclass
class BenchRecord:
    resolution_m: float
    grid_points: int
    workers: int
    cx: int
    cy: int
    steps_per_s: float
    exchange_pct: float
    t_1M_steps_s: float | None = None

    def __post_init__(self):
        if not self.steps_per_s > 0:
            raise ValueError(f"steps/s must be positive, got {self.steps_per_s}")
        if not 0 <= self.exchange_pct <= 100:
            raise ValueError(f"exchange fraction must be in [0, 100], got {self.exchange_pct}")
        if self.t_1M_steps_s is None:
            self.t_1M_steps_s = 1e6 / self.steps_per_s

    @property
    def points_per_worker(self) -> float:
        return self.grid_points / self.workers


def write_records(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for r in records:
            writer.writerow(asdict(r))


def read_records(path) -> list[BenchRecord]:
    types = {f.name: f.type for f in fields(BenchRecord)}
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS[:7]) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            kw = {}
            for name in CSV_COLUMNS:
                value = row.get(name)
                if value in (None, ""):
                    continue
                kw[name] = int(float(value)) if types[name] == "int" else float(value)
            records.append(BenchRecord(**kw))
    return records


def synthetic_dem(rows: int, cols: int, cell_size: float = 1.0, seed: int = 0) -> raster_io.Raster:
    """A valley draining west to east with a central channel and mild roughness."""
    rng = np.random.default_rng(seed)
    y = (np.arange(rows) + 0.5) / rows - 0.5
    x = (np.arange(cols) + 0.5) * cell_size
    along = 0.001 * (x[-1] - x)
    across = 20.0 * y**2 - 2.0 * np.exp(-(y / 0.05) ** 2)
    z = along[None, :] + across[:, None] + 0.05 * rng.standard_normal((rows, cols))
    return raster_io.Raster(z.astype(np.float32), cell_size)


def bench_boundaries(discharge: float = 50.0, slope: float = 0.001):
    inflow = InflowSpec(CrossSection("west", 0.4, 0.6), DischargeSeries.constant(discharge), slope)
    outflow = OutflowSpec(CrossSection("east", 0.4, 0.6), slope)
    return inflow, outflow


def measure(z: raster_io.Raster, cx: int, cy: int, steps: int, warmup: int = WARMUP_STEPS, dt=None) -> BenchRecord:
    """Time ``steps`` steps after ``warmup`` steps, with the same code path as a real run."""
    padded, _ = raster_io.pad_to_divisible(z, cx, cy)
    dt = dt or 0.1 * z.cell_size
    inflow, outflow = bench_boundaries()
    with Simulation(
        padded.values, z.cell_size, cx=cx, cy=cy, inflow=inflow, outflow=outflow, domain_shape=z.shape
    ) as sim:
        if warmup:
            sim.run(warmup, dt=dt)
        start = time.perf_counter()
        result = sim.run(steps, dt=dt)
        elapsed = time.perf_counter() - start
    return BenchRecord(
        resolution_m=z.cell_size,
        grid_points=z.rows * z.cols,
        workers=cx * cy,
        cx=cx,
        cy=cy,
        steps_per_s=steps / elapsed,
        exchange_pct=100.0 * result.exchange_fraction,
    )


def run_bench(
    resolutions,
    workers,
    steps: int,
    base: raster_io.Raster | None = None,
    layouts: str = "all",
    warmup: int = WARMUP_STEPS,
) -> list[BenchRecord]:
    """Benchmark every (resolution, worker count, layout) combination, one at a time."""
    base = base or synthetic_dem(1024, 1024)
    records = []
    for res in resolutions:
        factor = round(res / base.cell_size)
        if factor < 1 or abs(factor * base.cell_size - res) > 1e-6 * res:
            raise ValueError(f"resolution {res} m is not a multiple of the base cell size {base.cell_size} m")
        z = raster_io.downsample_mean(base, factor)
        for n in workers:
            for layout in enumerate_layouts(n, z.rows, z.cols):
                if layouts == "strip" and n > 1 and min(layout.cx, layout.cy) != 1:
                    continue
                rec = measure(z, layout.cx, layout.cy, steps, warmup)
                log.info(
                    "%g m %dx%d: %.1f steps/s, exchange %.1f%%",
                    res, layout.cx, layout.cy, rec.steps_per_s, rec.exchange_pct,
                )
                records.append(rec)
    return records


def weak_efficiency(t_base: float, t_scaled: float) -> float:
    """Percent efficiency when points per worker stay fixed."""
    if t_scaled == 0:
        raise ZeroDivisionError("scaled time is zero")
    return 100.0 * t_base / t_scaled


def strong_efficiency(t_base: float, workers_base: int, t_scaled: float, workers_scaled: int) -> float:
    """Percent efficiency at fixed problem size."""
    denom = t_scaled * workers_scaled
    if denom == 0:
        raise ZeroDivisionError("scaled time or worker count is zero")
    return 100.0 * (t_base * workers_base) / denom


def best_records(records) -> dict:
    """Fastest layout per (resolution, workers)."""
    best = {}
    for r in records:
        key = (r.resolution_m, r.workers)
        if key not in best or r.steps_per_s > best[key].steps_per_s:
            best[key] = r
    return best


@dataclass
class EfficiencyTable:
    resolutions: list  # coarsest first
    workers: list
    times: dict  # (res, workers) -> seconds per 1M steps
    weak: dict
    strong: dict
    weak_baselines: set
    strong_baselines: set


def _is_close(a: float, b: float) -> bool:
    return abs(a - b) <= 1e-6 * max(abs(a), abs(b))


def efficiency_table(records) -> EfficiencyTable:
    best = best_records(records)
    times = {key: r.t_1M_steps_s for key, r in best.items()}
    resolutions = sorted({k[0] for k in times}, reverse=True)
    workers = sorted({k[1] for k in times})
    weak, strong = {}, {}
    weak_base, strong_base = set(), set()
    for (res, w), t in times.items():
        # weak: coarser resolution with proportionally fewer workers; take the coarsest
        candidates = [
            (rb, wb) for (rb, wb) in times
            if rb > res and _is_close(wb * (rb / res) ** 2, w)
        ]
        if candidates:
            base = max(candidates)
            weak[(res, w)] = weak_efficiency(times[base], t)
        else:
            weak[(res, w)] = 100.0
            weak_base.add((res, w))
        w0 = min(wb for (rb, wb) in times if rb == res)
        if w0 == w:
            strong[(res, w)] = 100.0
            strong_base.add((res, w))
        else:
            strong[(res, w)] = strong_efficiency(times[(res, w0)], w0, t, w)
    return EfficiencyTable(resolutions, workers, times, weak, strong, weak_base, strong_base)


def format_duration(seconds: float) -> str:
    minutes = seconds / 60.0
    if minutes < 60:
        return f"{minutes:.3g} mins"
    return f"{minutes / 60.0:.3g} hours"


def _table(title: str, table: EfficiencyTable, cell) -> str:
    header = ["Resolution (m)"] + [f"{w} workers" for w in table.workers]
    rows = [[f"{res:g}"] + [cell(res, w) for w in table.workers] for res in table.resolutions]
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = [title, "  ".join(h.rjust(wd) for h, wd in zip(header, widths))]
    lines.append("  ".join("-" * wd for wd in widths))
    lines += ["  ".join(c.rjust(wd) for c, wd in zip(r, widths)) for r in rows]
    return "\n".join(lines)


def format_tables(table: EfficiencyTable) -> str:
    def time_cell(res, w):
        t = table.times.get((res, w))
        return "-" if t is None else format_duration(t)

    def eff_cell(effs, baselines):
        def cell(res, w):
            if (res, w) not in table.times:
                return "-"
            text = format_duration(table.times[(res, w)])
            if (res, w) in baselines:
                return text
            return f"{text} {effs[(res, w)]:.0f}%"

        return cell

    return "\n\n".join([
        _table("Time to compute 1 million steps", table, time_cell),
        _table("Weak scaling efficiencies", table, eff_cell(table.weak, table.weak_baselines)),
        _table("Strong scaling efficiencies", table, eff_cell(table.strong, table.strong_baselines)),
    ])


CURVE_COLUMNS = ("points_per_worker", "steps_per_s", "resolution_m", "workers", "cx", "cy", "exchange_pct", "best")


def scaling_curve(records) -> list[dict]:
    """Steps/s against grid points per worker, ascending in x, best layout flagged."""
    best = best_records(records)
    rows = [
        {
            "points_per_worker": r.points_per_worker,
            "steps_per_s": r.steps_per_s,
            "resolution_m": r.resolution_m,
            "workers": r.workers,
            "cx": r.cx,
            "cy": r.cy,
            "exchange_pct": r.exchange_pct,
            "best": int(best[(r.resolution_m, r.workers)] is r),
        }
        for r in records
    ]
    rows.sort(key=lambda row: (row["points_per_worker"], row["resolution_m"], row["cx"]))
    return rows


def write_curve(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


@dataclass
class LayoutSpread:
    resolution_m: float
    workers: int
    best: tuple
    worst: tuple
    ratio: float  # best steps/s over worst steps/s
    mean_exchange_pct: float


def layout_spread(records) -> list[LayoutSpread]:
    """Best/worst layout ratio and mean communication share per (resolution, workers)."""
    groups = {}
    for r in records:
        groups.setdefault((r.resolution_m, r.workers), []).append(r)
    out = []
    for (res, w), group in sorted(groups.items(), key=lambda kv: (-kv[0][0], kv[0][1])):
        fast = max(group, key=lambda r: r.steps_per_s)
        slow = min(group, key=lambda r: r.steps_per_s)
        out.append(LayoutSpread(
            res, w, (fast.cx, fast.cy), (slow.cx, slow.cy),
            fast.steps_per_s / slow.steps_per_s,
            sum(r.exchange_pct for r in group) / len(group),
        ))
    return out


def format_spread(spreads) -> str:
    lines = ["Layout spread (best vs worst) and mean communication share"]
    lines.append(f"{'res (m)':>8} {'workers':>8} {'best':>7} {'worst':>7} {'ratio':>7} {'comm %':>7}")
    for s in spreads:
        lines.append(
            f"{s.resolution_m:>8g} {s.workers:>8d} {'%dx%d' % s.best:>7} {'%dx%d' % s.worst:>7} "
            f"{s.ratio:>7.2f} {s.mean_exchange_pct:>7.2f}"
        )
    return "\n".join(lines)


def report(records, out_dir=None, figures: bool = True) -> str:
    """Efficiency tables and layout spread as text; optionally curve CSV and figures."""
    table = efficiency_table(records)
    text = format_tables(table) + "\n\n" + format_spread(layout_spread(records))
    if out_dir is not None:
        out_dir = raster_io.ensure_dir(out_dir)
        curve = scaling_curve(records)
        write_curve(curve, Path(out_dir) / "scaling_curve.csv")
        (Path(out_dir) / "report.txt").write_text(text + "\n")
        if figures:
            from . import plotting

            plotting.scaling_figure(curve, Path(out_dir) / "scaling_curve.png")
            plotting.exchange_figure(curve, Path(out_dir) / "exchange_fraction.png")
    return text
