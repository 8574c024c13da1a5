"""Manning-equation inflow and outflow boundary conditions.

A cross-section is a contiguous run of cells along one side of the grid.
North/south sections run west to east along columns; east/west sections run
north to south along rows. Inflow distributes a prescribed discharge over its
cells by finding the common water level that Manning's law maps to that
discharge; outflow drains each cell independently through Manning's law.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .swe_core import EAST, NORTH, SIDES, SOUTH, WEST, F32

MAX_BRACKET_DEPTH = 1e6
MAX_BISECTION_ITERS = 200
DISCHARGE_RTOL = 1e-6

# Sign of a positive flux value relative to the domain interior, per side.
_INWARD = {WEST: 1, EAST: -1, NORTH: 1, SOUTH: -1}


class BracketError(ValueError):
    """No water level within MAX_BRACKET_DEPTH carries the requested discharge."""


@dataclass(frozen=True)
class CrossSection:
    side: str
    fraction_start: float = 0.0
    fraction_end: float = 1.0

    def __post_init__(self):
        if self.side not in SIDES:
            raise ValueError(f"side must be one of {SIDES}, got {self.side!r}")
        if not 0 <= self.fraction_start < self.fraction_end <= 1:
            raise ValueError(
                f"need 0 <= fraction_start < fraction_end <= 1, got "
                f"{self.fraction_start}, {self.fraction_end}"
            )

    def length(self, rows: int, cols: int) -> int:
        return cols if self.side in (NORTH, SOUTH) else rows

    def resolve(self, rows: int, cols: int) -> range:
        """Cell index range along the side for a ``rows`` x ``cols`` grid."""
        n = self.length(rows, cols)
        start = min(math.floor(self.fraction_start * n), n - 1)
        stop = max(min(math.ceil(self.fraction_end * n), n), start + 1)
        return range(start, stop)

    def cells(self, rows: int, cols: int, grid_rows=None, grid_cols=None):
        """(row, col) index arrays of the section cells.

        The index range is resolved on the ``rows`` x ``cols`` extent; the side
        itself sits on the edge of the (possibly padded) ``grid_rows`` x ``grid_cols`` grid.
        """
        grid_rows = rows if grid_rows is None else grid_rows
        grid_cols = cols if grid_cols is None else grid_cols
        idx = np.arange(self.resolve(rows, cols).start, self.resolve(rows, cols).stop)
        if self.side == WEST:
            return idx, np.zeros_like(idx)
        if self.side == EAST:
            return idx, np.full_like(idx, grid_cols - 1)
        if self.side == NORTH:
            return np.zeros_like(idx), idx
        return np.full_like(idx, grid_rows - 1), idx


@dataclass(frozen=True)
class DischargeSeries:
    """Piecewise-constant discharge (m^3/s) on left-closed intervals starting at ``times``."""

    times: tuple
    values: tuple

    def __post_init__(self):
        if len(self.times) != len(self.values) or not self.times:
            raise ValueError("discharge series needs matching, nonempty times and values")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("discharge series times must increase strictly")
        if any(v < 0 for v in self.values):
            raise ValueError("discharges must be nonnegative")

    @classmethod
    def constant(cls, q: float) -> "DischargeSeries":
        return cls((0.0,), (float(q),))

    def __call__(self, t: float) -> float:
        k = bisect.bisect_right(self.times, t) - 1
        return self.values[max(k, 0)]


@dataclass(frozen=True)
class InflowSpec:
    section: CrossSection
    discharge: DischargeSeries
    slope: float

    def __post_init__(self):
        if not self.slope > 0:
            raise ValueError(f"inflow slope must be positive, got {self.slope}")


@dataclass(frozen=True)
class OutflowSpec:
    section: CrossSection
    slope: float

    def __post_init__(self):
        if not self.slope > 0:
            raise ValueError(f"outflow slope must be positive, got {self.slope}")


def manning_flux(h, slope, n, dx):
    """Discharge (m^3/s) through a cell face of width ``dx`` at depth ``h``.

    Hydraulic radius is approximated by the depth, so Q = (dx / n) h^(5/3) sqrt(S).
    """
    h = np.maximum(h, 0)
    return (dx / n) * np.power(h, 5.0 / 3.0) * np.sqrt(slope)


def solve_inflow_level(z, n, q_in: float, slope: float, dx: float):
    """Water level W whose Manning discharge summed over the section equals ``q_in``.

    Returns ``(W, q)`` with ``q`` the per-cell discharges (m^3/s). Bisection on
    W, bracket grown by doubling the depth above the lowest bed.
    """
    z = np.asarray(z, dtype=np.float64)
    n = np.broadcast_to(np.asarray(n, dtype=np.float64), z.shape)
    if z.size == 0:
        raise ValueError("inflow section is empty")
    if q_in < 0:
        raise ValueError(f"inflow discharge must be nonnegative, got {q_in}")
    z_min = float(z.min())
    if q_in == 0:
        return z_min, np.zeros_like(z)

    def total(w):
        return float(manning_flux(w - z, slope, n, dx).sum())

    depth = 1.0
    while total(z_min + depth) < q_in:
        depth *= 2.0
        if depth > MAX_BRACKET_DEPTH:
            raise BracketError(f"no level within {MAX_BRACKET_DEPTH:g} m carries {q_in} m^3/s")
    lo, hi = z_min, z_min + depth
    for _ in range(MAX_BISECTION_ITERS):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if total(mid) < q_in:
            lo = mid
        else:
            hi = mid
        if abs(total(hi) - q_in) <= 1e-3 * DISCHARGE_RTOL * q_in:
            break
    q = manning_flux(hi - z, slope, n, dx)
    return hi, q


@dataclass
class _SideSlice:
    side: str
    k0: int  # local index range along the side, half-open
    k1: int

    def faces(self, state):
        rows, cols = state.rows, state.cols
        k = slice(1 + self.k0, 1 + self.k1)
        if self.side == WEST:
            return state.qx, (k, 0)
        if self.side == EAST:
            return state.qx, (k, cols)
        if self.side == NORTH:
            return state.qy, (0, k)
        return state.qy, (rows, k)

    def cells(self, state):
        rows, cols = state.rows, state.cols
        k = slice(1 + self.k0, 1 + self.k1)
        if self.side == WEST:
            return state.h[k, 1]
        if self.side == EAST:
            return state.h[k, cols]
        if self.side == NORTH:
            return state.h[1, k]
        return state.h[rows, k]


def _local_part(section_range: range, side: str, extent, grid_shape):
    """Intersect a global section range with a subgrid; None if the subgrid misses it."""
    row0, col0, rows, cols = extent
    grid_rows, grid_cols = grid_shape
    on_side = {
        WEST: col0 == 0,
        EAST: col0 + cols == grid_cols,
        NORTH: row0 == 0,
        SOUTH: row0 + rows == grid_rows,
    }[side]
    if not on_side:
        return None
    offset, length = (col0, cols) if side in (NORTH, SOUTH) else (row0, rows)
    lo = max(section_range.start, offset)
    hi = min(section_range.stop, offset + length)
    if hi <= lo:
        return None
    return _SideSlice(side, lo - offset, hi - offset), lo - section_range.start, hi - section_range.start


@dataclass
class BoundaryConditions:
    """Inflow/outflow faces owned by one subgrid (or the whole grid).

    ``z`` and ``n`` are the global (padded) fields; section index ranges are
    resolved on ``domain_shape``, the unpadded extent.
    """

    inflow: InflowSpec | None
    outflow: OutflowSpec | None
    z: np.ndarray
    n: np.ndarray
    dx: float
    extent: tuple | None = None
    domain_shape: tuple | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        z = np.asarray(self.z, dtype=F32)
        n = np.broadcast_to(np.asarray(self.n, dtype=F32), z.shape)
        grid_shape = z.shape
        self.extent = self.extent or (0, 0, *grid_shape)
        self.domain_shape = self.domain_shape or grid_shape
        rows, cols = self.domain_shape
        self._in = self._out = None
        if self.inflow is not None:
            sec = self.inflow.section
            r, c = sec.cells(rows, cols, *grid_shape)
            self._in_z, self._in_n = z[r, c].astype(np.float64), n[r, c].astype(np.float64)
            self._in = _local_part(sec.resolve(rows, cols), sec.side, self.extent, grid_shape)
        if self.outflow is not None:
            sec = self.outflow.section
            r, c = sec.cells(rows, cols, *grid_shape)
            self._out = _local_part(sec.resolve(rows, cols), sec.side, self.extent, grid_shape)
            if self._out is not None:
                _, a, b = self._out
                self._out_n = np.ascontiguousarray(n[r, c][a:b])

    def inflow_per_width(self, t: float) -> np.ndarray:
        """Per-width inflow (m^2/s, float32) for every cell of the section at time ``t``."""
        q_total = self.inflow.discharge(t)
        cached = self._cache.get(q_total)
        if cached is None:
            _, q = solve_inflow_level(self._in_z, self._in_n, q_total, self.inflow.slope, self.dx)
            cached = (q / self.dx).astype(F32)
            self._cache[q_total] = cached
        return cached

    def apply_inflow(self, state, t: float, dt: float) -> float:
        """Set inflow face fluxes; returns the inflow volume over ``dt``."""
        if self._in is None:
            return 0.0
        part, a, b = self._in
        q = self.inflow_per_width(t)[a:b]
        arr, idx = part.faces(state)
        arr[idx] = q * F32(_INWARD[part.side])
        return float(q.sum(dtype=np.float64)) * float(F32(self.dx)) * float(F32(dt))

    def apply_outflow(self, state, dt: float) -> float:
        """Set outflow face fluxes from local depths; returns the outflow volume over ``dt``."""
        if self._out is None:
            return 0.0
        part, _, _ = self._out
        h = np.ascontiguousarray(part.cells(state))
        q = np.power(h, F32(5.0 / 3.0)) * F32(math.sqrt(self.outflow.slope)) / self._out_n
        cap = h * (F32(self.dx) / F32(dt))
        q = np.minimum(q, cap)
        arr, idx = part.faces(state)
        arr[idx] = q * F32(-_INWARD[part.side])
        return float(q.sum(dtype=np.float64)) * float(F32(self.dx)) * float(F32(dt))

    def apply(self, state, t: float, p) -> tuple[float, float]:
        return self.apply_inflow(state, t, p.dt), self.apply_outflow(state, p.dt)


def apply_inflow(state, spec: InflowSpec, t: float, p, z, n) -> float:
    """Set the inflow faces of an unpartitioned grid; returns the inflow volume."""
    return BoundaryConditions(spec, None, z, n, p.dx).apply_inflow(state, t, p.dt)


def apply_outflow(state, spec: OutflowSpec, p, z, n) -> float:
    """Set the outflow faces of an unpartitioned grid; returns the outflow volume."""
    return BoundaryConditions(None, spec, z, n, p.dx).apply_outflow(state, p.dt)
