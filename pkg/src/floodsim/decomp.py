"""Domain decomposition over a pool of threads exchanging 1-cell halos.

The padded global grid is split into ``cx`` x ``cy`` equal tiles numbered
row-major from the north-west corner. Each tile is owned by one worker thread.
Workers only share data through :class:`HaloPacket` messages on point-to-point
FIFO channels, and every exchange blocks until the neighbour's strip for the
same field and step has arrived, so results do not depend on scheduling.
"""

from __future__ import annotations

import queue
import threading
import time
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass, field

import numpy as np

from .boundary import BoundaryConditions
from .swe_core import EAST, NORTH, SIDES, SOUTH, WEST, PhysicsParams, State, Terrain, step

OPPOSITE = {WEST: EAST, EAST: WEST, NORTH: SOUTH, SOUTH: NORTH}
H_BOUNDARY_MODES = ("replicate", "reflect-wall")

_POLL_S = 0.05


class ProtocolError(RuntimeError):
    """A halo packet arrived out of order (wrong field, step or side)."""


class Aborted(RuntimeError):
    """Raised in a worker when another worker failed."""


@dataclass(frozen=True)
class Tile:
    id: int
    row0: int
    col0: int
    rows: int
    cols: int
    neighbors: tuple  # worker id or None for west, east, north, south

    @property
    def extent(self) -> tuple[int, int, int, int]:
        return self.row0, self.col0, self.rows, self.cols

    def neighbor(self, side: str):
        return self.neighbors[SIDES.index(side)]

    @property
    def open_sides(self) -> tuple[bool, bool, bool, bool]:
        return tuple(nb is not None for nb in self.neighbors)


@dataclass(frozen=True)
class Topology:
    rows: int
    cols: int
    cx: int
    cy: int
    tiles: tuple

    @property
    def n_workers(self) -> int:
        return self.cx * self.cy


def build_topology(rows: int, cols: int, cx: int, cy: int) -> Topology:
    if cx < 1 or cy < 1:
        raise ValueError(f"layout must be at least 1x1, got {cx}x{cy}")
    if rows % cy or cols % cx:
        raise ValueError(f"{rows}x{cols} grid does not split evenly into cx={cx}, cy={cy}; pad it first")
    tile_rows, tile_cols = rows // cy, cols // cx
    tiles = []
    for j in range(cy):
        for i in range(cx):
            wid = j * cx + i
            neighbors = (
                wid - 1 if i > 0 else None,
                wid + 1 if i < cx - 1 else None,
                wid - cx if j > 0 else None,
                wid + cx if j < cy - 1 else None,
            )
            tiles.append(Tile(wid, j * tile_rows, i * tile_cols, tile_rows, tile_cols, neighbors))
    return Topology(rows, cols, cx, cy, tuple(tiles))


@dataclass(frozen=True)
class Layout:
    cx: int
    cy: int
    shared_borders: int
    halo_cells: int | None = None


def enumerate_layouts(n_workers: int, rows: int | None = None, cols: int | None = None) -> list[Layout]:
    """Every cx x cy factorisation of ``n_workers`` with its communication cost proxies.

    ``shared_borders`` counts adjacent tile pairs; ``halo_cells`` (when the grid
    size is given) counts cells along internal tile boundaries.
    """
    if n_workers < 1:
        raise ValueError("need at least one worker")
    layouts = []
    for cx in range(1, n_workers + 1):
        if n_workers % cx:
            continue
        cy = n_workers // cx
        borders = cy * (cx - 1) + cx * (cy - 1)
        halo = None if rows is None or cols is None else (cx - 1) * rows + (cy - 1) * cols
        layouts.append(Layout(cx, cy, borders, halo))
    return layouts


@dataclass(frozen=True)
class HaloPacket:
    source: int
    side: str  # side of the source tile the strip was taken from
    field: str
    step: int
    payload: np.ndarray


# (send strip, ghost strip) accessors per field and side.
def _strips(state: State, fld: str, side: str):
    h, qx, qy = state.h, state.qx, state.qy
    if fld == "h":
        return {
            WEST: (h[1:-1, 1], h[1:-1, 0]),
            EAST: (h[1:-1, -2], h[1:-1, -1]),
            NORTH: (h[1, 1:-1], h[0, 1:-1]),
            SOUTH: (h[-2, 1:-1], h[-1, 1:-1]),
        }[side]
    if fld == "qy" and side in (WEST, EAST):
        return (qy[:, 1], qy[:, 0]) if side == WEST else (qy[:, -2], qy[:, -1])
    if fld == "qx" and side in (NORTH, SOUTH):
        return (qx[1, :], qx[0, :]) if side == NORTH else (qx[-2, :], qx[-1, :])
    return None


@dataclass
class BatchResult:
    steps: int = 0
    inflow_volume: float = 0.0
    outflow_volume: float = 0.0
    clamped_volume: float = 0.0
    compute_ns: list = field(default_factory=list)
    exchange_ns: list = field(default_factory=list)

    @property
    def exchange_fraction(self) -> float:
        """Mean over workers of exchange time / step time."""
        fractions = [
            ex / (ex + comp) if ex + comp > 0 else 0.0
            for ex, comp in zip(self.exchange_ns, self.compute_ns)
        ]
        return sum(fractions) / len(fractions) if fractions else 0.0


class Worker:
    """Owner of one tile; also acts as the halo exchanger passed to :func:`step`."""

    def __init__(self, tile: Tile, state: State, terrain: Terrain, boundary, pool: "WorkerPool"):
        self.tile = tile
        self.state = state
        self.terrain = terrain
        self.boundary = boundary
        self.pool = pool
        self.open_sides = tile.open_sides
        self._global_sides = tuple(not s for s in self.open_sides)
        self.exchange_ns = 0

    def _send(self, dest: int, packet: HaloPacket) -> None:
        self.pool.channels[(self.tile.id, dest)].put(packet)

    def _recv(self, source: int) -> HaloPacket:
        channel = self.pool.channels[(source, self.tile.id)]
        while True:
            try:
                return channel.get(timeout=_POLL_S)
            except queue.Empty:
                if self.pool.abort.is_set():
                    raise Aborted(f"worker {self.tile.id} aborted") from None

    def exchange(self, fld: str, step_index: int) -> None:
        """Refresh this worker's ghost strips of ``fld`` from its neighbours."""
        start = time.perf_counter_ns()
        for side in SIDES:
            nb = self.tile.neighbor(side)
            strips = _strips(self.state, fld, side)
            if strips is None:
                continue
            send, ghost = strips
            if nb is None:
                if fld == "h":
                    ghost[...] = send
                continue
            self._send(nb, HaloPacket(self.tile.id, side, fld, step_index, send.copy()))
            packet = self._recv(nb)
            if (
                packet.field != fld
                or packet.step != step_index
                or packet.side != OPPOSITE[side]
                or packet.source != nb
            ):
                raise ProtocolError(
                    f"worker {self.tile.id} expected {fld}@{step_index} from {nb} ({OPPOSITE[side]}), "
                    f"got {packet.field}@{packet.step} from {packet.source} ({packet.side})"
                )
            if packet.payload.shape != ghost.shape:
                raise ProtocolError(f"halo strip shape {packet.payload.shape} != {ghost.shape}")
            ghost[...] = packet.payload
        self.exchange_ns += time.perf_counter_ns() - start

    # exchange interface used by swe_core.step
    def fluxes(self, state: State, step_index: int) -> None:
        self.exchange("qy", step_index)
        self.exchange("qx", step_index)

    def depth(self, state: State, step_index: int) -> None:
        self.exchange("h", step_index)

    def run(self, params: list, times: list, step0: int) -> BatchResult:
        result = BatchResult()
        self.exchange_ns = 0
        start = time.perf_counter_ns()
        for k, (p, t) in enumerate(zip(params, times)):
            diag = step(self.state, self.terrain, p, self.boundary, t, self, step0 + k)
            result.inflow_volume += diag.inflow_volume
            result.outflow_volume += diag.outflow_volume
            result.clamped_volume += diag.clamped_volume
        total = time.perf_counter_ns() - start
        result.steps = len(params)
        result.exchange_ns = [self.exchange_ns]
        result.compute_ns = [total - self.exchange_ns]
        return result


class WorkerPool:
    """Workers for every tile of ``topology``, each running in its own thread."""

    def __init__(
        self,
        topology: Topology,
        z,
        n,
        dx: float,
        h0=None,
        qx0=None,
        qy0=None,
        inflow=None,
        outflow=None,
        domain_shape=None,
        h_boundary: str = "replicate",
    ):
        if h_boundary not in H_BOUNDARY_MODES:
            raise ValueError(f"h_boundary must be one of {H_BOUNDARY_MODES}")
        z = np.asarray(z, dtype=np.float32)
        if z.shape != (topology.rows, topology.cols):
            raise ValueError(f"elevation shape {z.shape} != topology {topology.rows}x{topology.cols}")
        n = np.broadcast_to(np.asarray(n, dtype=np.float32), z.shape)
        h0 = np.zeros_like(z) if h0 is None else h0
        self.topology = topology
        self.dx = float(dx)
        self.h_boundary = h_boundary
        self.abort = threading.Event()
        self.channels = {}
        for tile in topology.tiles:
            for nb in tile.neighbors:
                if nb is not None:
                    self.channels[(tile.id, nb)] = queue.Queue()
        self.workers = []
        for tile in topology.tiles:
            state = State.from_global(h0, qx0, qy0, tile.extent)
            terrain = Terrain.from_global(z, n, dx, tile.extent)
            bc = None
            if inflow is not None or outflow is not None:
                bc = BoundaryConditions(inflow, outflow, z, n, dx, tile.extent, domain_shape)
            self.workers.append(Worker(tile, state, terrain, bc, self))
        self._executor = ThreadPoolExecutor(max_workers=topology.n_workers, thread_name_prefix="tile")
        self._broken = None

    def close(self) -> None:
        self.abort.set()
        self._executor.shutdown(wait=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _run_all(self, fn):
        if self._broken is not None:
            raise RuntimeError("worker pool is unusable after an earlier failure") from self._broken
        futures = [self._executor.submit(fn, w) for w in self.workers]
        done, pending = wait(futures, return_when=FIRST_EXCEPTION)
        if pending or any(f.exception() for f in done):
            self.abort.set()
            wait(futures)
            errors = [f.exception() for f in futures if f.exception() is not None]
            primary = next((e for e in errors if not isinstance(e, Aborted)), errors[0])
            self._broken = primary
            raise primary
        return [f.result() for f in futures]

    def advance(self, dts, t0: float, step0: int, g: float, h_min: float) -> BatchResult:
        """Run ``len(dts)`` steps starting at simulated time ``t0``."""
        params, times = [], []
        cache = {}
        t = t0
        for dt in dts:
            if dt not in cache:
                cache[dt] = PhysicsParams(dt=dt, dx=self.dx, g=g, h_min=h_min)
            params.append(cache[dt])
            times.append(t)
            t += dt
        results = self._run_all(lambda w: w.run(params, times, step0))
        total = BatchResult(steps=len(dts))
        for r in results:  # fixed worker order keeps the float sums reproducible
            total.inflow_volume += r.inflow_volume
            total.outflow_volume += r.outflow_volume
            total.clamped_volume += r.clamped_volume
            total.compute_ns += r.compute_ns
            total.exchange_ns += r.exchange_ns
        return total

    def gather(self) -> State:
        """Assemble the global fields (without the outer ghost layer) into one :class:`State`."""
        rows, cols = self.topology.rows, self.topology.cols
        h = np.empty((rows, cols), np.float32)
        qx = np.empty((rows, cols + 1), np.float32)
        qy = np.empty((rows + 1, cols), np.float32)
        for w in self.workers:
            r0, c0, nr, nc = w.tile.extent
            h[r0 : r0 + nr, c0 : c0 + nc] = w.state.depth
            qx[r0 : r0 + nr, c0 : c0 + nc + 1] = w.state.flux_x
            qy[r0 : r0 + nr + 1, c0 : c0 + nc] = w.state.flux_y
        return State.from_global(h, qx, qy)

    def volume(self) -> float:
        total = 0.0
        for w in self.workers:
            total += float(w.state.depth.sum(dtype=np.float64))
        return total * self.dx * self.dx


def halo_exchange(pool: WorkerPool, fld: str, step_index: int) -> None:
    """Refresh every worker's ghost strips of one field (``h``, ``qx`` or ``qy``)."""
    pool._run_all(lambda w: w.exchange(fld, step_index))


def timed_step(pool: WorkerPool, dt: float, t: float, step_index: int, g: float, h_min: float) -> BatchResult:
    """One instrumented step; per-worker compute and exchange nanoseconds in the result."""
    return pool.advance([dt], t, step_index, g, h_min)
