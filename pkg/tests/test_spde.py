"""Tests for the finite-difference SPDE solvers."""

import math

import numpy as np
import pytest

from kraichnan_lab.const import FLUX_UPWIND
from kraichnan_lab.errors import (
    LabBlowUpError,
    LabDomainError,
    LabResolutionError,
    LabValidationError,
    LabWindowError,
)
from kraichnan_lab.noise import NoiseGrid, mollifier_stencil, mollify, sample_white_increments
from kraichnan_lab.qpde import heat_second_moment, she_second_moment
from kraichnan_lab.spde import (
    GridField,
    SpdeScheme,
    fit_l2_growth,
    heat_kernel,
    init_delta,
    inner_products,
    log_height,
    solve_she,
    solve_transport,
    spectral_shift,
    step_she,
    step_transport,
    tilt_kernel,
)


class TestSpdeScheme:
    """Tests for SpdeScheme."""

    def test_invalid(self):
        """Test unknown flux form and stability factor are reported."""
        with pytest.raises(LabValidationError) as err:
            SpdeScheme(flux_form="spectral", stability_factor=1.5)
        assert len(err.value.issues) == 2

    def test_for_nu(self):
        """Test the Laplacian coefficient is nu / 2."""
        assert SpdeScheme.for_nu(3.0).laplacian_coeff == 1.5

    def test_cfl(self):
        """Test dt above the stability bound is refused."""
        scheme = SpdeScheme.for_nu(1.0)
        scheme.check_cfl(1e-3, 0.125)
        with pytest.raises(LabValidationError) as err:
            scheme.check_cfl(0.01, 0.125)
        assert err.value.issues[0][0] == "grid.dt"


class TestHeatKernel:
    """Tests for heat_kernel and init_delta."""

    def test_scalar_peak(self):
        """Test the peak value 1/sqrt(2 pi nu t)."""
        assert heat_kernel(2.0, 0.5, 0.0) == pytest.approx(1.0 / math.sqrt(2.0 * math.pi))

    def test_periodized_mass(self, small_grid):
        """Test a wide periodized kernel still has unit mass on the torus."""
        values = heat_kernel(1.0, 4.0, small_grid.x, small_grid.L)
        assert np.sum(values) * small_grid.dx == pytest.approx(1.0, rel=1e-10)

    @pytest.mark.parametrize("nu,t", [(1.0, 0.0), (0.0, 1.0), (1.0, -1.0)])
    def test_domain(self, nu, t):
        """Test non-positive time or diffusivity is refused."""
        with pytest.raises(LabDomainError):
            heat_kernel(nu, t, 0.0)

    def test_init_delta(self, small_grid):
        """Test the default smoothed delta has unit mass and width 2 dx."""
        start = init_delta(small_grid, 1.0)
        assert start.t == pytest.approx(4.0 * small_grid.dx**2)
        assert start.mass == pytest.approx(1.0, rel=1e-8)

    def test_init_delta_unresolved(self, small_grid):
        """Test a too narrow start is refused."""
        with pytest.raises(LabResolutionError):
            init_delta(small_grid, 1.0, t0=small_grid.dx**2)


class TestStepTransport:
    """Tests for the transport step."""

    def _state(self, grid, replicas=8):
        start = init_delta(grid, 1.0, t0=0.1)
        return GridField(values=np.tile(start.values, (replicas, 1)), t=start.t, grid=grid)

    @pytest.mark.parametrize("flux_form", ["conservative-central", FLUX_UPWIND])
    def test_mass_conserved(self, small_grid, triangle_cov, params, flux_form):
        """Test the untilted step conserves each replica's mass."""
        state = self._state(small_grid)
        scheme = SpdeScheme.for_nu(params.nu, flux_form)
        before = state.mass
        for k in range(20):
            xi = sample_white_increments(small_grid, k, 8)
            dW = mollify(small_grid, xi, triangle_cov, params, k)
            state = step_transport(state, dW, params, 0.0, scheme)
        assert np.allclose(state.mass, before, rtol=1e-12, atol=0.0)

    def test_tilt_changes_mass(self, small_grid, triangle_cov, params):
        """Test a non-zero tilt moves the mass by lambda sum(v dW) dx."""
        state = self._state(small_grid)
        dW = mollify(small_grid, sample_white_increments(small_grid, 0, 8), triangle_cov, params)
        scheme = SpdeScheme.for_nu(params.nu)
        tilted = step_transport(state, dW, params, 2.0, scheme)
        plain = step_transport(state, dW, params, 0.0, scheme)
        expected = 2.0 * np.sum(state.values * dW.values, axis=-1) * small_grid.dx
        assert np.allclose(tilted.mass - plain.mass, expected)

    def test_blow_up(self, small_grid, triangle_cov, params):
        """Test non-finite values raise a blow-up error carrying the step."""
        state = self._state(small_grid, replicas=1)
        state.values[0, 3] = np.nan
        xi = sample_white_increments(small_grid, 5, 1)
        dW = mollify(small_grid, xi, triangle_cov, params, 5)
        with pytest.raises(LabBlowUpError) as err:
            step_transport(state, dW, params, 0.0, SpdeScheme.for_nu(params.nu))
        assert err.value.time_index == 5

    def test_cfl_refused(self, triangle_cov, params):
        """Test a coarse time step is refused before stepping."""
        grid = NoiseGrid(L=4.0, nx=64, dt=0.05, seed=1)
        state = self._state(grid, replicas=1)
        dW = mollify(grid, np.zeros((1, 64)), triangle_cov, params)
        with pytest.raises(LabValidationError):
            step_transport(state, dW, params, 0.0, SpdeScheme.for_nu(params.nu))


class TestSolvers:
    """Tests for the ensemble solvers."""

    def test_transport_mass(self, small_grid, triangle_cov, params):
        """Test the transport ensemble keeps unit mass at every output time."""
        run = solve_transport(small_grid, triangle_cov, params, [0.05, 0.1], replicas=4)
        assert run.mass_times == [0.05, 0.1]
        assert run.mass_mean == pytest.approx([1.0, 1.0], rel=1e-8)
        assert run.mass_var[-1] == pytest.approx(0.0, abs=1e-20)
        assert run.snapshots[0.1].values.shape == (4, 64)

    def test_transport_deterministic(self, small_grid, triangle_cov, params):
        """Test two runs with the same seed agree bitwise."""
        a = solve_transport(small_grid, triangle_cov, params, [0.05], replicas=2)
        b = solve_transport(small_grid, triangle_cov, params, [0.05], replicas=2)
        assert np.array_equal(a.snapshots[0.05].values, b.snapshots[0.05].values)

    def test_she_without_noise_is_heat(self, small_grid):
        """Test kappa = 0 reduces the SHE to the heat equation."""
        run = solve_she(small_grid, 0.0, 1.0, [0.2], replicas=2, t0=0.1)
        values = run.snapshots[0.2].values[0]
        expected = heat_kernel(1.0, 0.2, small_grid.x, small_grid.L)
        assert np.max(np.abs(values - expected)) < 0.01 * np.max(expected)

    def test_she_step_multiplicative(self, small_grid):
        """Test a zero field stays zero under the SHE step."""
        state = GridField(values=np.zeros(64), t=0.0, grid=small_grid)
        xi = sample_white_increments(small_grid, 0)
        out = step_she(state, xi, 2.0, 1.0, SpdeScheme.for_nu(1.0))
        assert np.all(out.values == 0.0)
        assert out.t == pytest.approx(small_grid.dt)

    def test_she_second_moment_matches_volterra(self):
        """Test the ensemble E ||Z(t)||^2 against the Volterra oracle.

        The smoothed start at t0 = 4 dx^2 / nu misses the interaction
        before t0, so the ensemble is allowed to sit a few percent low.
        """
        grid = NoiseGrid(L=4.0, nx=128, dt=5e-4, seed=13)
        run = solve_she(grid, 1.0, 1.0, [0.5], replicas=1000)
        norms = np.sum(run.snapshots[0.5].values ** 2, axis=-1) * grid.dx
        mean = np.mean(norms)
        se = np.std(norms, ddof=1) / math.sqrt(len(norms))
        oracle = she_second_moment(1.0, 1.0, 0.5).value
        assert oracle > heat_second_moment(1.0, 0.5)
        assert abs(mean - oracle) < 3.0 * se + 0.1 * oracle


class TestTilt:
    """Tests for spectral_shift and tilt_kernel."""

    def test_integer_shift_is_roll(self):
        """Test a shift by whole cells equals a roll."""
        values = np.sin(2.0 * np.pi * np.arange(32) / 32) + 0.5
        assert np.allclose(spectral_shift(values, 3 * 0.25, 0.25), np.roll(values, -3))

    def test_zero_tilt_copies(self, small_grid):
        """Test lambda = 0 returns an equal but separate field."""
        u = init_delta(small_grid, 1.0, t0=0.1)
        out = tilt_kernel(u, 0.0, 1.0)
        assert np.array_equal(out.values, u.values)
        assert out.values is not u.values

    def test_window(self, small_grid):
        """Test a shift beyond L/2 is refused."""
        u = init_delta(small_grid, 1.0, t0=1.0)
        with pytest.raises(LabWindowError):
            tilt_kernel(u, 3.0, 1.0)

    def test_heat_kernel_tilt_mass(self):
        """Test the tilted heat kernel keeps unit mass."""
        grid = NoiseGrid(L=8.0, nx=256, dt=1e-3)
        u = init_delta(grid, 1.0, t0=0.5)
        out = tilt_kernel(u, 1.0, 1.0)
        assert out.mass == pytest.approx(1.0, rel=1e-6)


class TestDiagnostics:
    """Tests for inner products, log height and growth fits."""

    def test_inner_products(self, small_grid, triangle_cov, params):
        """Test the plain L2 product and a positive mollified product."""
        f = init_delta(small_grid, 1.0, t0=0.1)
        out = inner_products(f, f, mollifier_stencil(small_grid, triangle_cov, params))
        assert out["l2"] == pytest.approx(np.sum(f.values**2) * small_grid.dx)
        assert out["l2_mollified"] > 0

    def test_inner_products_grid_mismatch(self, small_grid, triangle_cov, params):
        """Test fields on different grids are refused."""
        f = init_delta(small_grid, 1.0, t0=0.1)
        g = init_delta(NoiseGrid(L=8.0, nx=64, dt=1e-3), 1.0, t0=0.5)
        with pytest.raises(LabValidationError):
            inner_products(f, g, mollifier_stencil(small_grid, triangle_cov, params))

    def test_log_height(self, small_grid):
        """Test non-positive cells are clipped and counted."""
        values = np.ones(64)
        values[:3] = [0.0, -1.0, 1e-320]
        h, clipped = log_height(GridField(values=values, t=1.0, grid=small_grid))
        assert clipped == 3
        assert h.values[10] == 0.0
        assert np.all(np.isfinite(h.values))

    def test_fit_l2_growth(self):
        """Test an exact envelope is recovered."""
        t = np.array([0.5, 1.0, 2.0, 4.0])
        C, c = fit_l2_growth(t, 2.0 * np.exp(0.3 * t) / np.sqrt(t))
        assert c == pytest.approx(0.3)
        assert C == pytest.approx(2.0)

    def test_fit_l2_growth_domain(self):
        """Test non-positive data is refused."""
        with pytest.raises(LabDomainError):
            fit_l2_growth([0.0, 1.0], [1.0, 1.0])
