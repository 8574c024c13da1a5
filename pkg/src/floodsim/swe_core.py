"""Inertial shallow-water update on a staggered grid, in float32.

Depths live at cell centres, fluxes (m^2/s, per unit width) on cell faces.
Every array carries one ghost layer so the same kernel runs on a whole
domain or on one subgrid of a partition:

    h  (rows + 2, cols + 2)   cell (r, c) stored at [r + 1, c + 1]
    qx (rows + 2, cols + 1)   x-face (r, i), left of cell (r, i), at [r + 1, i]
    qy (rows + 1, cols + 2)   y-face (j, c), above cell (j, c), at [j, c + 1]

Positive ``qx`` flows east (increasing column), positive ``qy`` flows south
(increasing row).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

F32 = np.float32

G_STANDARD = 9.80665
DEFAULT_H_MIN = 1e-3

WEST, EAST, NORTH, SOUTH = "west", "east", "north", "south"
SIDES = (WEST, EAST, NORTH, SOUTH)
CLOSED = (False, False, False, False)

_SEVEN_THIRDS = F32(-7.0 / 3.0)


class StabilityError(RuntimeError):
    """Raised when a step produces a non-finite value."""


@dataclass(frozen=True)
class PhysicsParams:
    dt: float
    dx: float
    g: float = G_STANDARD
    h_min: float = DEFAULT_H_MIN

    def __post_init__(self):
        if not (self.g > 0 and self.dt > 0 and self.dx > 0 and self.h_min >= 0):
            raise ValueError(f"invalid physics parameters {self}")


@dataclass
class State:
    h: np.ndarray
    qx: np.ndarray
    qy: np.ndarray

    @property
    def rows(self) -> int:
        return self.h.shape[0] - 2

    @property
    def cols(self) -> int:
        return self.h.shape[1] - 2

    @property
    def depth(self) -> np.ndarray:
        return self.h[1:-1, 1:-1]

    @property
    def flux_x(self) -> np.ndarray:
        return self.qx[1:-1, :]

    @property
    def flux_y(self) -> np.ndarray:
        return self.qy[:, 1:-1]

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "State":
        return cls(
            h=np.zeros((rows + 2, cols + 2), F32),
            qx=np.zeros((rows + 2, cols + 1), F32),
            qy=np.zeros((rows + 1, cols + 2), F32),
        )

    @classmethod
    def from_global(cls, h, qx=None, qy=None, extent=None) -> "State":
        """Cut a subgrid (with ghosts) out of unpadded global fields.

        ``extent`` is ``(row0, col0, rows, cols)``; the whole grid by default.
        Ghosts on the global boundary replicate the edge depth and carry zero flux.
        """
        h = np.asarray(h, dtype=F32)
        n_rows, n_cols = h.shape
        qx = np.zeros((n_rows, n_cols + 1), F32) if qx is None else np.asarray(qx, F32)
        qy = np.zeros((n_rows + 1, n_cols), F32) if qy is None else np.asarray(qy, F32)
        if qx.shape != (n_rows, n_cols + 1) or qy.shape != (n_rows + 1, n_cols):
            raise ValueError(f"flux shapes {qx.shape}, {qy.shape} do not match depth {h.shape}")
        if (h < 0).any():
            raise ValueError("initial depth must be nonnegative")
        row0, col0, rows, cols = extent or (0, 0, n_rows, n_cols)
        h_pad = np.pad(h, 1, mode="edge")
        qx_pad = np.pad(qx, ((1, 1), (0, 0)))
        qy_pad = np.pad(qy, ((0, 0), (1, 1)))
        return cls(
            h=h_pad[row0 : row0 + rows + 2, col0 : col0 + cols + 2].copy(),
            qx=qx_pad[row0 : row0 + rows + 2, col0 : col0 + cols + 1].copy(),
            qy=qy_pad[row0 : row0 + rows + 1, col0 : col0 + cols + 2].copy(),
        )


@dataclass
class Terrain:
    """Static fields of a (sub)grid: elevation with ghosts and squared Manning n per face."""

    z: np.ndarray
    nsq_x: np.ndarray
    nsq_y: np.ndarray
    dx: float
    row0: int = 0
    col0: int = 0

    @property
    def rows(self) -> int:
        return self.z.shape[0] - 2

    @property
    def cols(self) -> int:
        return self.z.shape[1] - 2

    @classmethod
    def from_global(cls, z, n, dx: float, extent=None) -> "Terrain":
        z = np.asarray(z, dtype=F32)
        n = np.broadcast_to(np.asarray(n, dtype=F32), z.shape)
        if not (n > 0).all():
            raise ValueError("Manning coefficients must be positive")
        row0, col0, rows, cols = extent or (0, 0, *z.shape)
        z_pad = np.pad(z, 1, mode="edge")[row0 : row0 + rows + 2, col0 : col0 + cols + 2]
        n_pad = np.pad(n, 1, mode="edge")[row0 : row0 + rows + 2, col0 : col0 + cols + 2]
        half = F32(0.5)
        n_x = (n_pad[1:-1, :-1] + n_pad[1:-1, 1:]) * half
        n_y = (n_pad[:-1, 1:-1] + n_pad[1:, 1:-1]) * half
        return cls(
            z=np.ascontiguousarray(z_pad),
            nsq_x=n_x * n_x,
            nsq_y=n_y * n_y,
            dx=float(dx),
            row0=row0,
            col0=col0,
        )


@dataclass
class StepDiagnostics:
    inflow_volume: float = 0.0
    outflow_volume: float = 0.0
    clamped_volume: float = 0.0


def flux_face_depth(h_left, z_left, h_right, z_right):
    """Depth available for flow across a face: highest surface minus highest bed, >= 0."""
    hf = np.maximum(np.add(h_left, z_left), np.add(h_right, z_right)) - np.maximum(z_left, z_right)
    return np.maximum(hf, 0)


def _face_flux(q, q_cross, eta_a, eta_b, z_a, z_b, nsq, g_dt, dx, h_min):
    hf = np.maximum(eta_a, eta_b) - np.maximum(z_a, z_b)
    np.maximum(hf, F32(0), out=hf)
    wet = hf > h_min
    slope = (eta_b - eta_a) / dx
    norm = np.sqrt(q * q + q_cross * q_cross)
    friction = np.power(np.where(wet, hf, F32(1)), _SEVEN_THIRDS)
    num = q - g_dt * hf * slope
    den = F32(1) + g_dt * nsq * norm * friction
    return np.where(wet, num / den, F32(0))


def _check_finite(values: np.ndarray, what: str, row0: int, col0: int) -> None:
    if not np.isfinite(values).all():
        r, c = np.argwhere(~np.isfinite(values))[0]
        raise StabilityError(f"non-finite {what} at global index (row {row0 + r}, col {col0 + c})")


def update_flux(state: State, terrain: Terrain, p: PhysicsParams, open_sides=CLOSED) -> State:
    """Advance interior face fluxes one step in place.

    Faces on a side listed as open in ``open_sides`` (west, east, north, south)
    border a neighbouring subgrid and are computed from the ghost layer; faces on
    closed sides are global boundary faces and are left to the boundary conditions.
    """
    west, east, north, south = open_sides
    rows, cols = state.rows, state.cols
    h, qx, qy, z = state.h, state.qx, state.qy, terrain.z
    eta = h + z
    g_dt = F32(p.g) * F32(p.dt)
    dx = F32(p.dx)
    h_min = F32(p.h_min)
    quarter = F32(0.25)

    i0, i1 = (0 if west else 1), (cols if east else cols - 1)
    j0, j1 = (0 if north else 1), (rows if south else rows - 1)
    new_qx = new_qy = None

    if i1 >= i0:
        a, b = slice(i0, i1 + 1), slice(i0 + 1, i1 + 2)
        qy_cross = ((qy[:-1, a] + qy[1:, a]) + (qy[:-1, b] + qy[1:, b])) * quarter
        new_qx = _face_flux(
            qx[1:-1, a], qy_cross,
            eta[1:-1, a], eta[1:-1, b], z[1:-1, a], z[1:-1, b],
            terrain.nsq_x[:, a], g_dt, dx, h_min,
        )
        _check_finite(new_qx, "x-face flux", terrain.row0, terrain.col0 + i0)

    if j1 >= j0:
        a, b = slice(j0, j1 + 1), slice(j0 + 1, j1 + 2)
        qx_cross = ((qx[a, :-1] + qx[a, 1:]) + (qx[b, :-1] + qx[b, 1:])) * quarter
        new_qy = _face_flux(
            qy[a, 1:-1], qx_cross,
            eta[a, 1:-1], eta[b, 1:-1], z[a, 1:-1], z[b, 1:-1],
            terrain.nsq_y[a, :], g_dt, dx, h_min,
        )
        _check_finite(new_qy, "y-face flux", terrain.row0 + j0, terrain.col0)

    if new_qx is not None:
        qx[1:-1, i0 : i1 + 1] = new_qx
    if new_qy is not None:
        qy[j0 : j1 + 1, 1:-1] = new_qy
    return state


def update_depth(state: State, p: PhysicsParams, row0: int = 0, col0: int = 0) -> float:
    """Advance depths one step from the face fluxes; returns the clamped volume.

    Negative depths are set to zero. The returned value is the volume removed by
    that clamp, so it is <= 0 (removing negative water adds mass).
    """
    qx, qy = state.flux_x, state.flux_y
    h = state.depth
    div = (qx[:, :-1] - qx[:, 1:]) + (qy[:-1, :] - qy[1:, :])
    raw = h + F32(p.dt) * div / F32(p.dx)
    _check_finite(raw, "depth", row0, col0)
    negative = raw < 0
    clamped = 0.0
    if negative.any():
        clamped = float(raw[negative].sum(dtype=np.float64)) * p.dx * p.dx
        raw[negative] = 0
    h[...] = raw
    return clamped


def fill_depth_ghosts(state: State, sides=(True, True, True, True)) -> None:
    """Zero-gradient ghost depths on the given (west, east, north, south) sides."""
    h = state.h
    west, east, north, south = sides
    if west:
        h[1:-1, 0] = h[1:-1, 1]
    if east:
        h[1:-1, -1] = h[1:-1, -2]
    if north:
        h[0, 1:-1] = h[1, 1:-1]
    if south:
        h[-1, 1:-1] = h[-2, 1:-1]


class LocalExchange:
    """Halo handling for an unpartitioned grid: every side is a global boundary."""

    open_sides = CLOSED

    def fluxes(self, state: State, step_index: int) -> None:
        pass

    def depth(self, state: State, step_index: int) -> None:
        fill_depth_ghosts(state)


def step(state, terrain, p, boundary=None, t=0.0, exchange=None, step_index=0) -> StepDiagnostics:
    """One full update: flux halos, flux update, boundary fluxes, depth update, depth halos."""
    exchange = exchange or LocalExchange()
    exchange.fluxes(state, step_index)
    update_flux(state, terrain, p, exchange.open_sides)
    diag = StepDiagnostics()
    if boundary is not None:
        diag.inflow_volume, diag.outflow_volume = boundary.apply(state, t, p)
    diag.clamped_volume = update_depth(state, p, terrain.row0, terrain.col0)
    exchange.depth(state, step_index)
    return diag


def volume(state: State, dx: float) -> float:
    return float(state.depth.sum(dtype=np.float64)) * dx * dx
