"""Run a full simulation: configuration, time loop, snapshots and mass ledger."""

from __future__ import annotations

import csv
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import raster_io
from .boundary import CrossSection, DischargeSeries, InflowSpec, OutflowSpec
from .decomp import H_BOUNDARY_MODES, BatchResult, WorkerPool, build_topology
from .swe_core import DEFAULT_H_MIN, G_STANDARD, State

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

DEFAULT_MANNING_N = 0.03
DEFAULT_EXTENT_THRESHOLD = 0.05
AUDIT_RTOL = 1e-6


class ConfigError(ValueError):
    pass


@dataclass
class SimConfig:
    dem_path: Path
    dt: float
    duration: float
    dem_format: str | None = None
    resolution: float | None = None
    downsample: int | None = None
    start_time: float = 0.0
    cx: int = 1
    cy: int = 1
    g: float = G_STANDARD
    h_min: float = DEFAULT_H_MIN
    manning_n: float = DEFAULT_MANNING_N
    manning_path: Path | None = None
    h_boundary: str = "replicate"
    inflow: InflowSpec | None = None
    outflow: OutflowSpec | None = None
    snapshot_interval: float | None = None
    output_dir: Path = Path("output")
    extent_threshold: float = DEFAULT_EXTENT_THRESHOLD

    def validate(self) -> "SimConfig":
        if not self.duration > 0:
            raise ConfigError(f"duration must be positive, got {self.duration}")
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.cx < 1 or self.cy < 1:
            raise ConfigError(f"cx, cy must be >= 1, got {self.cx}, {self.cy}")
        if self.snapshot_interval is not None and self.snapshot_interval < self.dt:
            raise ConfigError("snapshot interval must be at least one time step")
        if self.extent_threshold < 0:
            raise ConfigError("extent threshold must be nonnegative")
        if self.h_boundary not in H_BOUNDARY_MODES:
            raise ConfigError(f"h_boundary must be one of {H_BOUNDARY_MODES}")
        for path in (self.dem_path, self.manning_path):
            if path is not None and not Path(path).exists():
                raise ConfigError(f"file not found: {path}")
        return self


def _section(table: dict, what: str) -> CrossSection:
    try:
        return CrossSection(
            table["side"],
            float(table.get("fraction_start", 0.0)),
            float(table.get("fraction_end", 1.0)),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"[{what}] {exc}") from None


def _discharge(table: dict) -> DischargeSeries:
    if "hydrograph" in table:
        pairs = table["hydrograph"]
        return DischargeSeries(tuple(float(t) for t, _ in pairs), tuple(float(q) for _, q in pairs))
    if "discharge" in table:
        return DischargeSeries.constant(float(table["discharge"]))
    raise ConfigError("[inflow] needs 'discharge' or 'hydrograph'")


def load_config(path) -> SimConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    base = path.parent

    def resolve(p):
        return None if p is None else (base / p if not Path(p).is_absolute() else Path(p))

    dem = raw.get("dem", {})
    tm = raw.get("time", {})
    part = raw.get("partition", {})
    phys = raw.get("physics", {})
    out = raw.get("output", {})
    try:
        inflow = outflow = None
        if "inflow" in raw:
            t = raw["inflow"]
            try:
                inflow = InflowSpec(_section(t, "inflow"), _discharge(t), float(t["slope"]))
            except KeyError as exc:
                raise ConfigError(f"[inflow] missing {exc}") from None
        if "outflow" in raw:
            t = raw["outflow"]
            try:
                outflow = OutflowSpec(_section(t, "outflow"), float(t["slope"]))
            except KeyError as exc:
                raise ConfigError(f"[outflow] missing {exc}") from None
        cfg = SimConfig(
            dem_path=resolve(dem["path"]),
            dem_format=dem.get("format"),
            resolution=dem.get("resolution"),
            downsample=dem.get("downsample"),
            dt=float(tm["dt"]),
            duration=float(tm["duration"]),
            start_time=float(tm.get("start_time", 0.0)),
            snapshot_interval=tm.get("snapshot_interval"),
            cx=int(part.get("cx", 1)),
            cy=int(part.get("cy", 1)),
            g=float(phys.get("g", G_STANDARD)),
            h_min=float(phys.get("h_min", DEFAULT_H_MIN)),
            manning_n=float(phys.get("manning_n", DEFAULT_MANNING_N)),
            manning_path=resolve(phys.get("manning_path")),
            h_boundary=phys.get("h_boundary", "replicate"),
            inflow=inflow,
            outflow=outflow,
            output_dir=resolve(out.get("directory", "output")),
            extent_threshold=float(out.get("extent_threshold", DEFAULT_EXTENT_THRESHOLD)),
        )
    except KeyError as exc:
        raise ConfigError(f"config {path} is missing required key {exc}") from None
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"config {path}: {exc}") from None
    return cfg.validate()


@dataclass(frozen=True)
class StepSchedule:
    """``full_steps`` steps of ``dt`` followed by one truncated step of ``remainder`` (if > 0)."""

    dt: float
    full_steps: int
    remainder: float = 0.0

    def __len__(self) -> int:
        return self.full_steps + (1 if self.remainder > 0 else 0)

    def dts(self, start: int, stop: int) -> list[float]:
        out = [self.dt] * max(0, min(stop, self.full_steps) - start)
        if self.remainder > 0 and start <= self.full_steps < stop:
            out.append(self.remainder)
        return out

    def elapsed(self, k: int) -> float:
        """Simulated seconds after ``k`` steps."""
        if k <= self.full_steps:
            return k * self.dt
        return self.full_steps * self.dt + self.remainder


def _count(ratio: float) -> tuple[int, bool]:
    nearest = round(ratio)
    if abs(ratio - nearest) <= 1e-9 * max(1.0, ratio):
        return nearest, True
    return math.floor(ratio), False


def step_schedule(duration: float, dt: float) -> StepSchedule:
    n, exact = _count(duration / dt)
    if exact:
        return StepSchedule(dt, n)
    return StepSchedule(dt, n, duration - n * dt)


def snapshot_steps(schedule: StepSchedule, duration: float, interval: float | None) -> list[int]:
    """Step indices of snapshots at 0, interval, 2*interval, ... (rounded down to a step)."""
    if interval is None:
        return [0, len(schedule)]
    n_snap, _ = _count(duration / interval)
    steps = []
    for k in range(n_snap + 1):
        t = k * interval
        if abs(t - duration) <= 1e-9 * duration:
            steps.append(len(schedule))
        else:
            steps.append(min(len(schedule), _count(t / schedule.dt)[0]))
    return steps


@dataclass
class MassLedger:
    step: int
    time: float
    volume: float
    inflow: float
    outflow: float
    clamped: float
    audit_error: float  # relative

    @staticmethod
    def audit(volume, volume0, inflow, outflow, clamped) -> float:
        residual = (volume - volume0) - (inflow - outflow - clamped)
        scale = max(abs(volume), abs(volume0), abs(inflow), abs(outflow), abs(clamped), 1e-30)
        return abs(residual) / scale


class Simulation:
    """A partitioned grid with boundary conditions and cumulative mass accounting.

    ``z`` must already split evenly into ``cx`` x ``cy`` tiles.
    """

    def __init__(
        self,
        z,
        dx: float,
        n=DEFAULT_MANNING_N,
        cx: int = 1,
        cy: int = 1,
        inflow=None,
        outflow=None,
        h0=None,
        g: float = G_STANDARD,
        h_min: float = DEFAULT_H_MIN,
        domain_shape=None,
        h_boundary: str = "replicate",
        t0: float = 0.0,
    ):
        z = np.asarray(z, dtype=np.float32)
        self.topology = build_topology(*z.shape, cx, cy)
        self.pool = WorkerPool(
            self.topology, z, n, dx, h0=h0, inflow=inflow, outflow=outflow,
            domain_shape=domain_shape, h_boundary=h_boundary,
        )
        self.dx = float(dx)
        self.g, self.h_min = g, h_min
        self.t = t0
        self.steps_done = 0
        self.inflow_volume = self.outflow_volume = self.clamped_volume = 0.0
        self.volume0 = self.volume()

    def run(self, n_steps: int | None = None, dt: float | None = None, dts=None) -> BatchResult:
        if dts is None:
            dts = [dt] * n_steps
        if not dts:
            return BatchResult()
        result = self.pool.advance(dts, self.t, self.steps_done, self.g, self.h_min)
        for d in dts:
            self.t += d
        self.steps_done += len(dts)
        self.inflow_volume += result.inflow_volume
        self.outflow_volume += result.outflow_volume
        self.clamped_volume += result.clamped_volume
        return result

    def state(self) -> State:
        return self.pool.gather()

    def volume(self) -> float:
        return self.pool.volume()

    def ledger(self) -> MassLedger:
        v = self.volume()
        return MassLedger(
            self.steps_done, self.t, v, self.inflow_volume, self.outflow_volume, self.clamped_volume,
            MassLedger.audit(v, self.volume0, self.inflow_volume, self.outflow_volume, self.clamped_volume),
        )

    def close(self) -> None:
        self.pool.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def extent_mask(h, threshold: float = DEFAULT_EXTENT_THRESHOLD, record=None) -> np.ndarray:
    """1 where depth exceeds ``threshold``, else 0; cropped to ``record``'s original extent."""
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    h = np.asarray(h)
    if record is not None:
        h = record.crop(h)
    return (h > threshold).astype(np.uint8)


@dataclass
class SteadyState:
    metric: list
    threshold: float

    @property
    def steady(self) -> list[bool]:
        return [m < self.threshold for m in self.metric]

    @property
    def reached(self) -> bool:
        return bool(self.metric) and self.metric[-1] < self.threshold


def steady_state_check(snapshots, threshold: float = 1e-3) -> SteadyState:
    """Max |delta h| between consecutive snapshots."""
    snapshots = [np.asarray(s, dtype=np.float64) for s in snapshots]
    if len(snapshots) < 2:
        raise ValueError("need at least two snapshots")
    metric = [float(np.max(np.abs(b - a))) for a, b in zip(snapshots, snapshots[1:])]
    return SteadyState(metric, threshold)


@dataclass
class RunReport:
    final_state: State
    ledgers: list
    snapshot_paths: list = field(default_factory=list)
    steps: int = 0
    wall_seconds: float = 0.0
    exchange_fraction: float = 0.0
    pad: raster_io.PadRecord | None = None

    def summary(self) -> dict:
        return {
            "steps": self.steps,
            "wall_seconds": self.wall_seconds,
            "steps_per_s": self.steps / self.wall_seconds if self.wall_seconds > 0 else None,
            "exchange_pct": 100.0 * self.exchange_fraction,
            "max_audit_error": max((l.audit_error for l in self.ledgers), default=0.0),
            "final_volume_m3": self.ledgers[-1].volume if self.ledgers else None,
            "padding": asdict(self.pad) if self.pad else None,
            "snapshots": [str(p) for p in self.snapshot_paths],
        }


def _seconds_label(t: float) -> str:
    if float(t).is_integer():
        return str(int(t))
    return f"{t:.6f}".rstrip("0").rstrip(".")


def prepare_inputs(cfg: SimConfig):
    """Load, downsample, validate and pad the DEM and Manning field."""
    dem = raster_io.load_raster(cfg.dem_path, cfg.dem_format)
    factor = cfg.downsample or 1
    if cfg.resolution is not None:
        ratio = cfg.resolution / dem.cell_size
        factor = round(ratio)
        if factor < 1 or abs(ratio - factor) > 1e-6:
            raise ConfigError(f"resolution {cfg.resolution} is not a multiple of DEM cell size {dem.cell_size}")
    dem = raster_io.validate_dem(raster_io.downsample_mean(dem, factor))
    if cfg.manning_path is not None:
        manning = raster_io.load_raster(cfg.manning_path)
        manning = raster_io.downsample_mean(manning, round(dem.cell_size / manning.cell_size))
        if manning.shape != dem.shape:
            raise ConfigError(f"Manning raster shape {manning.shape} != DEM shape {dem.shape}")
    else:
        manning = raster_io.uniform_like(dem, cfg.manning_n)
    padded, record = raster_io.pad_to_divisible(dem, cfg.cx, cfg.cy)
    manning_padded, _ = raster_io.pad_to_divisible(manning, cfg.cx, cfg.cy)
    return dem, padded, manning_padded, record


def run_simulation(cfg: SimConfig, write_outputs: bool = True) -> RunReport:
    cfg.validate()
    dem, z, manning, record = prepare_inputs(cfg)
    schedule = step_schedule(cfg.duration, cfg.dt)
    snaps = snapshot_steps(schedule, cfg.duration, cfg.snapshot_interval)
    log.info(
        "grid %dx%d (padded %dx%d), %d steps, layout %dx%d",
        dem.rows, dem.cols, z.rows, z.cols, len(schedule), cfg.cx, cfg.cy,
    )
    out_dir = raster_io.ensure_dir(cfg.output_dir) if write_outputs else None
    ledgers, paths = [], []
    exchange_ns = compute_ns = executed = 0
    wall = 0.0

    def snapshot(sim: Simulation):
        ledgers.append(sim.ledger())
        if out_dir is None:
            return
        h = record.crop(sim.state().depth)
        label = _seconds_label(sim.t)
        h_path = out_dir / f"h_{label}.r32"
        raster_io.write_raster(
            raster_io.Raster(h, dem.cell_size, dem.origin_x, dem.origin_y, dem.nodata), h_path, raster_io.RAW_F32
        )
        mask = extent_mask(h, cfg.extent_threshold).astype(np.float32)
        e_path = out_dir / f"extent_{label}.asc"
        raster_io.write_raster(
            raster_io.Raster(mask, dem.cell_size, dem.origin_x, dem.origin_y, dem.nodata), e_path, raster_io.ASCII_GRID
        )
        paths.extend([h_path, e_path])

    with Simulation(
        z.values, dem.cell_size, manning.values, cfg.cx, cfg.cy, cfg.inflow, cfg.outflow,
        g=cfg.g, h_min=cfg.h_min, domain_shape=dem.shape, h_boundary=cfg.h_boundary, t0=cfg.start_time,
    ) as sim:
        done = 0
        seen = set()
        for target in snaps:
            dts = schedule.dts(done, target)
            if dts:
                start = time.perf_counter()
                result = sim.run(dts=dts)
                wall += time.perf_counter() - start
                exchange_ns += sum(result.exchange_ns)
                compute_ns += sum(result.compute_ns)
                executed += result.steps
                done = target
                sim.t = cfg.start_time + schedule.elapsed(done)
            if target not in seen:
                seen.add(target)
                snapshot(sim)
                log.info("t=%s s step %d volume %.6g m3", _seconds_label(sim.t), done, ledgers[-1].volume)
        final = sim.state()

    total_ns = exchange_ns + compute_ns
    report = RunReport(
        final_state=final,
        ledgers=ledgers,
        snapshot_paths=paths,
        steps=executed,
        wall_seconds=wall,
        exchange_fraction=exchange_ns / total_ns if total_ns else 0.0,
        pad=record,
    )
    if out_dir is not None:
        write_ledger_csv(ledgers, out_dir / "mass_ledger.csv")
        (out_dir / "run_report.json").write_text(json.dumps(report.summary(), indent=2) + "\n")
    return report


LEDGER_COLUMNS = ("step", "time", "volume", "inflow", "outflow", "clamped", "audit_error")


def write_ledger_csv(ledgers, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LEDGER_COLUMNS)
        for entry in ledgers:
            writer.writerow([getattr(entry, c) for c in LEDGER_COLUMNS])
