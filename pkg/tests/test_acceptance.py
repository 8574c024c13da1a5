"""Acceptance checks. Each test prints one PASS/FAIL line; run with ``pytest tests/test_acceptance.py -v``."""

import math
import os
import time

import numpy as np
import pytest

from floodsim import bench, raster_io
from floodsim.boundary import (
    BoundaryConditions,
    CrossSection,
    DischargeSeries,
    InflowSpec,
    OutflowSpec,
    solve_inflow_level,
)
from floodsim.driver import SimConfig, Simulation, run_simulation, steady_state_check, step_schedule
from floodsim.swe_core import State


@pytest.fixture
def verdict(capsys):
    """Print a one-line verdict (outside pytest's capture) and fail the test if it did not pass."""

    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {name}: {detail}")
        assert ok, f"{name}: {detail}"

    return emit


def quantized(a):
    return (np.round(np.asarray(a, np.float64) * 1024) / 1024).astype(np.float32)


def random_terrain(rows, cols, seed):
    rng = np.random.default_rng(seed)
    x = np.arange(cols)[None, :]
    return quantized(0.005 * (cols - x) + rng.uniform(0, 0.2, (rows, cols)))


def test_well_balanced(verdict):
    rows = cols = 128
    rng = np.random.default_rng(0)
    yy, xx = np.mgrid[:rows, :cols]
    z = quantized(1.5 * np.sin(xx / 9.0) * np.cos(yy / 13.0) + 0.3 * rng.standard_normal((rows, cols)))
    h0 = np.maximum(np.float32(1.0) - z, 0).astype(np.float32)
    start = time.perf_counter()
    with Simulation(z, 2.0, h0=h0) as sim:
        sim.run(10_000, dt=0.1)
        state = sim.state()
    elapsed = time.perf_counter() - start
    q_max = max(float(np.abs(state.flux_x).max()), float(np.abs(state.flux_y).max()))
    same = state.depth.tobytes() == h0.tobytes()
    dry = int((h0 == 0).sum())
    verdict(
        "well-balancedness",
        q_max == 0 and same and elapsed < 60,
        f"max|q|={q_max:g}, h bitwise unchanged={same}, {dry} dry cells, {elapsed:.1f}s",
    )


LAYOUTS = [(1, 1), (1, 4), (4, 1), (2, 2)]


def _partitioned_runs():
    z = random_terrain(64, 64, 7)
    h0 = np.full(z.shape, 0.05, np.float32)
    inflow = InflowSpec(CrossSection("west", 0.3, 0.7), DischargeSeries((0.0, 50.0), (5.0, 12.0)), 0.005)
    outflow = OutflowSpec(CrossSection("east", 0.1, 0.9), 0.005)
    runs = {}
    for cx, cy in LAYOUTS:
        ledgers = []
        start = time.perf_counter()
        with Simulation(z, 1.0, cx=cx, cy=cy, inflow=inflow, outflow=outflow, h0=h0) as sim:
            for _ in range(10):
                sim.run(100, dt=0.1)
                ledgers.append(sim.ledger())
            runs[(cx, cy)] = (sim.state(), ledgers, time.perf_counter() - start)
    return runs


@pytest.fixture(scope="module")
def partitioned_runs():
    return _partitioned_runs()


def test_partition_invariance(partitioned_runs, verdict):
    ref, ref_ledgers, _ = partitioned_runs[(1, 1)]
    mismatches = []
    for layout, (state, _, _) in partitioned_runs.items():
        for name in ("h", "qx", "qy"):
            if getattr(state, name).tobytes() != getattr(ref, name).tobytes():
                mismatches.append(f"{layout[0]}x{layout[1]}:{name}")
    elapsed = sum(r[2] for r in partitioned_runs.values())
    outflow = ref_ledgers[-1].outflow
    verdict(
        "partition invariance",
        not mismatches and outflow > 0 and elapsed < 60,
        f"layouts {', '.join(f'{a}x{b}' for a, b in LAYOUTS)}; mismatches={mismatches or 'none'}; "
        f"outflow {outflow:.1f} m3; {elapsed:.1f}s total",
    )


def test_mass_ledger(partitioned_runs, verdict):
    worst = max(l.audit_error for _, ledgers, _ in partitioned_runs.values() for l in ledgers)
    n = sum(len(ledgers) for _, ledgers, _ in partitioned_runs.values())
    verdict("mass ledger", worst <= 1e-6, f"max relative audit error {worst:.2e} over {n} snapshots")


def test_normal_depth(verdict):
    slope, n, q, dx = 0.001, 0.03, 1.0, 10.0
    rows, cols = 4, 200
    x = (np.arange(cols) + 0.5) * dx
    z = np.tile((slope * (cols * dx - x)).astype(np.float32), (rows, 1))
    h_n = (n * q / math.sqrt(slope)) ** 0.6
    inflow = InflowSpec(CrossSection("west"), DischargeSeries.constant(q * rows * dx), slope)
    outflow = OutflowSpec(CrossSection("east"), slope)
    start = time.perf_counter()
    snaps = []
    with Simulation(z, dx, n=n, inflow=inflow, outflow=outflow) as sim:
        while len(snaps) < 100:
            sim.run(1000, dt=1.0)
            snaps.append(sim.state().depth.copy())
            if len(snaps) > 1 and steady_state_check(snaps[-2:], 1e-5).reached:
                break
    elapsed = time.perf_counter() - start
    interior = snaps[-1][:, cols // 4 : 3 * cols // 4]
    err = float(np.abs(interior / h_n - 1).max())
    verdict(
        "Manning normal depth",
        err <= 0.05 and elapsed < 300,
        f"h_n={h_n:.4f} m, interior {interior.min():.4f}..{interior.max():.4f} m, "
        f"max rel err {err:.2e}, steady after {len(snaps) * 1000} steps, {elapsed:.1f}s",
    )


def _scan_level(z, n, q_in, slope, dx):
    def total(w):
        return np.sum(dx / n * np.clip(w - z, 0, None) ** (5 / 3) * math.sqrt(slope))

    lo, step = float(z.min()), 1.0
    while True:
        levels = lo + step * np.arange(1, 1001)
        hit = np.array([total(w) for w in levels]) >= q_in
        if not hit.any():
            lo = float(levels[-1])
            continue
        k = int(np.argmax(hit))
        if step <= 1e-6:
            return float(levels[k])
        lo, step = float(levels[k] - step), step / 1000


def test_inflow_inversion(verdict):
    rng = np.random.default_rng(11)
    worst_q = worst_w = 0.0
    for _ in range(100):
        rows, cols = int(rng.integers(4, 40)), int(rng.integers(4, 40))
        dx = float(rng.choice([1.0, 2.0, 5.0]))
        z = rng.uniform(0, 4, (rows, cols)).astype(np.float32)
        n = rng.uniform(0.02, 0.1, (rows, cols)).astype(np.float32)
        side = str(rng.choice(["west", "east", "north", "south"]))
        a = float(rng.uniform(0, 0.9))
        section = CrossSection(side, a, float(rng.uniform(a + 0.05, 1.0)))
        q_in = float(10 ** rng.uniform(-1, 2.5))
        slope = float(10 ** rng.uniform(-4, -2))
        spec = InflowSpec(section, DischargeSeries.constant(q_in), slope)
        bc = BoundaryConditions(spec, None, z, n, dx)
        state = State.zeros(rows, cols)
        volume = bc.apply_inflow(state, 0.0, 1.0)
        worst_q = max(worst_q, abs(volume - q_in) / q_in)
        r, c = section.cells(rows, cols)
        zs, ns = z[r, c].astype(np.float64), n[r, c].astype(np.float64)
        w, _ = solve_inflow_level(zs, ns, q_in, slope, dx)
        worst_w = max(worst_w, abs(w - _scan_level(zs, ns, q_in, slope, dx)))
    verdict(
        "inflow inversion",
        worst_q <= 1e-6 and worst_w <= 1e-4,
        f"100 sections: max rel discharge error {worst_q:.2e}, max |W - scan| {worst_w:.2e} m",
    )


@pytest.mark.slow
def test_step_count(tmp_path, verdict):
    dem = tmp_path / "flat.asc"
    raster_io.write_raster(raster_io.Raster(np.zeros((2, 2), np.float32), 1.0), dem)
    cfg = SimConfig(dem_path=dem, dt=0.1, duration=172_800.0, output_dir=tmp_path / "out")
    report = run_simulation(cfg, write_outputs=False)
    planned = len(step_schedule(172_800.0, 0.1))
    verdict(
        "step-count contract",
        report.steps == planned == 1_728_000,
        f"planned {planned}, executed {report.steps}, final t={report.ledgers[-1].time:.1f}s",
    )


# Minutes per million steps (best layout), and the published efficiencies derived from them.
WORKERS = [8, 32, 128, 512]
MINUTES = {8.0: [43, 13, 5.9, 6.1], 4.0: [162, 44, 15, 8.9], 2.0: [600, 162, 46, 18], 1.0: [2400, 600, 162, 53]}
WEAK = {4.0: [97, 84, 66], 2.0: [99, 93, 72], 1.0: [100, 100, 80]}
STRONG = {8.0: [83, 46, 11], 4.0: [91, 66, 28], 2.0: [94, 83, 54], 1.0: [99, 94, 70]}


def test_efficiency_arithmetic(tmp_path, verdict):
    records = [
        bench.BenchRecord(res, 1, w, w, 1, 1e6 / (t * 60), 0.0)
        for res, times in MINUTES.items()
        for w, t in zip(WORKERS, times)
    ]
    path = tmp_path / "published.csv"
    bench.write_records(records, path)
    table = bench.efficiency_table(bench.read_records(path))
    misses, total = [], 0
    for kind, expected, got in (("weak", WEAK, table.weak), ("strong", STRONG, table.strong)):
        for res, values in expected.items():
            for w, v in zip(WORKERS[1:], values):
                total += 1
                if abs(got[(res, w)] - v) > 1.0:
                    misses.append(f"{kind} {res:g}m/{w}: {got[(res, w)]:.1f} vs {v}")
    verdict(
        "efficiency arithmetic",
        not misses,
        f"{total - len(misses)}/{total} entries within 1 pp" + (f"; off: {'; '.join(misses)}" if misses else ""),
    )


def _block_mean(values, f):
    rows, cols = values.shape
    out = np.empty((rows // f, cols // f), np.float32)
    for i in range(rows // f):
        for j in range(cols // f):
            out[i, j] = np.float32(math.fsum(values[i * f : (i + 1) * f, j * f : (j + 1) * f].astype(float).ravel()) / (f * f))
    return out


def test_downsampling(verdict):
    base = bench.synthetic_dem(256, 192, cell_size=1.0, seed=3)
    bitwise = {}
    for f in (2, 4, 8):
        out = raster_io.downsample_mean(base, f)
        bitwise[f] = out.values.tobytes() == _block_mean(base.values, f).tobytes() and out.cell_size == f
    m4 = raster_io.grid_points(46129, 21471, 4.0) / 1e6
    m8 = raster_io.grid_points(46129, 21471, 8.0) / 1e6
    verdict(
        "downsampling",
        all(bitwise.values()) and round(m4) == 62 and int(m8) == 15 and round(m8, 1) == 15.5,
        f"bitwise factor 2/4/8: {bitwise}; grid points {m4:.2f}M at 4 m, {m8:.2f}M at 8 m",
    )


def hardware_threads():
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


@pytest.mark.slow
def test_bench_sanity(verdict):
    z = bench.synthetic_dem(1024, 1024)
    single = bench.measure(z, 1, 1, steps=20, warmup=2)
    strip = bench.measure(z, 8, 1, steps=20, warmup=2)
    threads = hardware_threads()
    frac_ok = 0 < strip.exchange_pct < 100
    detail = (
        f"1 worker {single.steps_per_s:.2f} steps/s, 8x1 strip {strip.steps_per_s:.2f} steps/s, "
        f"exchange {strip.exchange_pct:.1f}%"
    )
    if threads >= 4:
        verdict("bench harness sanity", frac_ok and strip.steps_per_s > single.steps_per_s, detail)
    else:
        verdict(
            "bench harness sanity",
            frac_ok,
            detail + f"; speedup clause not applicable ({threads} hardware thread(s) < 4)",
        )
