import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floodsim.swe_core import (
    G_STANDARD,
    PhysicsParams,
    StabilityError,
    State,
    Terrain,
    flux_face_depth,
    step,
    update_depth,
    update_flux,
    volume,
)


def inertial_flux(q, hf, slope, n, dt, q_cross=0.0, g=G_STANDARD):
    """Scalar float64 reference for the semi-implicit friction update."""
    norm = (q * q + q_cross * q_cross) ** 0.5
    return (q - g * dt * hf * slope) / (1 + g * dt * n * n * norm / hf ** (7 / 3))


def bumpy(rows, cols, seed=0):
    """Bed quantized to 1/1024 so eta = h + z is exact in float32."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[:rows, :cols]
    z = 2.0 * np.sin(xx / 5.0) * np.cos(yy / 7.0) + 0.3 * rng.standard_normal((rows, cols))
    return (np.round(z * 1024) / 1024).astype(np.float32)


class TestFaceDepth:
    @pytest.mark.parametrize(
        "args,expected",
        [((2.0, 1.0, 0.5, 2.0), 1.0), ((1.0, 0.0, 1.0, 0.0), 1.0), ((0.0, 5.0, 0.0, 1.0), 0.0), ((3.0, 0.0, 0.0, 1.0), 2.0)],
    )
    def test_examples(self, args, expected):
        assert flux_face_depth(*args) == pytest.approx(expected)

    def test_never_negative(self):
        assert flux_face_depth(0.0, 1.0, 0.0, 3.0) == 0.0


class TestFluxUpdate:
    def _pair(self, h, z, q=0.0, n=0.03, dt=0.1, dx=1.0):
        state = State.from_global(np.array([h], np.float32), qx=np.array([[0.0, q, 0.0]], np.float32))
        terrain = Terrain.from_global(np.array([z], np.float32), n, dx)
        p = PhysicsParams(dt=dt, dx=dx)
        update_flux(state, terrain, p)
        return float(state.flux_x[0, 1])

    def test_matches_scalar_reference(self):
        # eta 2.000 on the left, 1.999 on the right: slope -0.001 over a 1 m face, hf = 2
        got = self._pair([2.0, 1.999], [0.0, 0.0], q=1.0)
        expected = inertial_flux(1.0, 2.0, -0.001, 0.03, 0.1)
        assert got == pytest.approx(expected, rel=1e-6)
        assert got == pytest.approx(1.0017860, abs=1e-6)

    def test_step_in_bed_uses_higher_bed(self):
        # flat surface at 1.5 over a 0.5 m step: only friction acts, hf = 1.0
        got = self._pair([1.5, 1.0], [0.0, 0.5], q=0.4, n=0.05, dt=0.5)
        assert got == pytest.approx(inertial_flux(0.4, 1.0, 0.0, 0.05, 0.5), rel=1e-6)

    def test_dry_face_has_zero_flux(self):
        assert self._pair([0.0005, 0.0], [0.0, 0.0], q=0.3) == 0.0

    def test_flow_runs_downhill(self):
        assert self._pair([1.0, 0.5], [0.0, 0.0]) > 0
        assert self._pair([0.5, 1.0], [0.0, 0.0]) < 0

    def test_y_direction_is_south_positive(self):
        h = np.array([[1.0], [0.5]], np.float32)
        state = State.from_global(h)
        update_flux(state, Terrain.from_global(np.zeros_like(h), 0.03, 1.0), PhysicsParams(0.1, 1.0))
        assert state.flux_y[1, 0] > 0
        assert state.flux_y[0, 0] == 0 and state.flux_y[2, 0] == 0

    def test_transverse_flux_slows_update(self):
        plain = inertial_flux(1.0, 1.0, -0.01, 0.05, 0.5)
        crossed = inertial_flux(1.0, 1.0, -0.01, 0.05, 0.5, q_cross=2.0)
        assert abs(crossed) < abs(plain)

    def test_nonfinite_names_index(self):
        h = np.ones((3, 3), np.float32)
        h[1, 2] = np.inf
        state = State.from_global(h)
        with pytest.raises(StabilityError, match="row 1"):
            update_flux(state, Terrain.from_global(np.zeros((3, 3)), 0.03, 1.0), PhysicsParams(0.1, 1.0))


class TestDepthUpdate:
    def test_inflow_example(self):
        state = State.zeros(1, 1)
        state.h[1, 1] = 1.0
        state.qx[1, 0] = 0.1  # 0.1 m^2/s entering from the west
        update_depth(state, PhysicsParams(dt=0.1, dx=1.0))
        assert state.depth[0, 0] == pytest.approx(1.01)

    def test_divergence_oracle(self):
        rng = np.random.default_rng(5)
        rows, cols, dt, dx = 6, 9, 0.2, 2.0
        state = State.zeros(rows, cols)
        state.h[1:-1, 1:-1] = rng.uniform(1, 2, (rows, cols))
        state.qx[1:-1, :] = rng.uniform(-0.1, 0.1, (rows, cols + 1))
        state.qy[:, 1:-1] = rng.uniform(-0.1, 0.1, (rows + 1, cols))
        expected = np.empty((rows, cols))
        for r in range(rows):
            for c in range(cols):
                net = (
                    float(state.qx[r + 1, c]) - float(state.qx[r + 1, c + 1])
                    + float(state.qy[r, c + 1]) - float(state.qy[r + 1, c + 1])
                )
                expected[r, c] = float(state.h[r + 1, c + 1]) + dt * net / dx
        update_depth(state, PhysicsParams(dt, dx))
        np.testing.assert_allclose(state.depth, expected, rtol=1e-6)

    def test_clamp_reports_removed_negative_volume(self):
        state = State.zeros(1, 2)
        state.h[1, 1:3] = [0.01, 1.0]
        state.qx[1, 1] = 1.0  # drains 0.1 m from a 0.01 m cell
        clamped = update_depth(state, PhysicsParams(dt=0.1, dx=2.0))
        assert state.depth[0, 0] == 0.0
        assert clamped == pytest.approx((0.01 - 0.05) * 4.0, rel=1e-5)


class TestInvariants:
    def test_lake_at_rest(self):
        z = bumpy(32, 32)
        h = np.maximum(np.float32(1.5) - z, 0).astype(np.float32)
        state = State.from_global(h)
        terrain = Terrain.from_global(z, 0.03, 1.0)
        p = PhysicsParams(dt=0.05, dx=1.0)
        for k in range(200):
            step(state, terrain, p, step_index=k)
        assert np.abs(state.flux_x).max() == 0 and np.abs(state.flux_y).max() == 0
        assert state.depth.tobytes() == h.tobytes()

    def test_closed_domain_conserves_mass(self):
        rows, cols = 24, 24
        z = bumpy(rows, cols, 3) * 0.2
        h = np.full((rows, cols), 0.5, np.float32)
        h[8:16, 8:16] += 1.0
        state = State.from_global(h)
        terrain = Terrain.from_global(z, 0.03, 2.0)
        p = PhysicsParams(dt=0.1, dx=2.0)
        v0 = volume(state, p.dx)
        clamped = 0.0
        for k in range(300):
            clamped += step(state, terrain, p, step_index=k).clamped_volume
        assert abs(volume(state, p.dx) - v0 + clamped) <= 1e-6 * v0

    @settings(max_examples=10, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31))
    def test_translation_equivariance(self, dr, dc, seed):
        """A closed box surrounded by tall walls behaves the same wherever it sits."""
        rng = np.random.default_rng(seed)
        inner_z = rng.uniform(0, 0.5, (10, 10)).astype(np.float32)
        inner_h = rng.uniform(0, 1, (10, 10)).astype(np.float32)
        results = []
        for r0, c0 in ((1, 1), (1 + dr, 1 + dc)):
            z = np.full((20, 20), 100.0, np.float32)
            h = np.zeros((20, 20), np.float32)
            z[r0 : r0 + 10, c0 : c0 + 10] = inner_z
            h[r0 : r0 + 10, c0 : c0 + 10] = inner_h
            state = State.from_global(h)
            terrain = Terrain.from_global(z, 0.03, 1.0)
            for k in range(20):
                step(state, terrain, PhysicsParams(0.05, 1.0), step_index=k)
            results.append(state.depth[r0 : r0 + 10, c0 : c0 + 10].tobytes())
        assert results[0] == results[1]


def test_params_validation():
    with pytest.raises(ValueError):
        PhysicsParams(dt=0.0, dx=1.0)
    with pytest.raises(ValueError):
        PhysicsParams(dt=0.1, dx=-1.0)
