"""Tests for the deterministic separation-density solvers."""

import math

import numpy as np
import pytest
from scipy import integrate

from kraichnan_lab.covariance import make_scale_params
from kraichnan_lab.errors import (
    LabDivergenceError,
    LabDomainError,
    LabResolutionError,
    LabValidationError,
)
from kraichnan_lab.noise import NoiseGrid
from kraichnan_lab.qpde import (
    QPropagator,
    QSolution,
    aronson_check,
    duhamel_first_order,
    duhamel_iterate,
    heat_second_moment,
    initial_density,
    modulus_of_continuity,
    she_mass_moment,
    she_mass_moment_exact,
    she_second_moment,
    she_second_moment_exact,
    smoothing_error,
    solve_q,
    solve_q_lambda,
    solve_q_path,
    volterra_first_order,
)
from kraichnan_lab.spde import GridField, heat_kernel


@pytest.fixture
def q_grid():
    """Grid with eight cells per eps = 0.5."""
    return NoiseGrid(L=4.0, nx=128, dt=1e-3)


def _solution(grid, values, t=1.0):
    return QSolution(
        values=GridField(values=values, t=t, grid=grid), lam=0.0, t=t, q0=0.0, mass=0.0
    )


class TestGridChecks:
    """Tests for grid and time guards."""

    def test_coarse_grid(self, small_grid, triangle_cov, params):
        """Test dx > eps/8 is refused."""
        with pytest.raises(LabResolutionError):
            QPropagator(triangle_cov, params, small_grid, 0.0)

    def test_odd_grid(self, triangle_cov, params):
        """Test a grid without a node at the origin is refused."""
        with pytest.raises(LabResolutionError):
            QPropagator(triangle_cov, params, NoiseGrid(L=4.0, nx=129, dt=1e-3), 0.0)

    def test_time_before_start(self, q_grid, triangle_cov, params):
        """Test output times before the smoothed start are refused."""
        with pytest.raises(LabDomainError):
            solve_q(triangle_cov, params, 1e-3, q_grid)

    def test_initial_density(self, q_grid, params):
        """Test the smoothed delta has unit mass and variance 4 dx^2."""
        q, t0 = initial_density(q_grid, params)
        assert t0 == pytest.approx(2.0 * q_grid.dx**2 / params.nu)
        assert np.sum(q) * q_grid.dx == pytest.approx(1.0, rel=1e-12)
        var = np.sum(q_grid.x**2 * q) * q_grid.dx
        assert var == pytest.approx(4.0 * q_grid.dx**2, rel=1e-6)


class TestSolveQ:
    """Tests for solve_q and solve_q_lambda."""

    def test_no_environment_is_gaussian(self, q_grid, null_cov):
        """Test C = 0 gives the diffusivity-2 nu heat kernel."""
        p = make_scale_params(null_cov, eps=0.5, mu=0.5, sigma=1.0, lam=1.0)
        sol = solve_q(null_cov, p, 0.5, q_grid)
        expected = heat_kernel(2.0 * p.nu, 0.5, q_grid.x, q_grid.L)
        assert np.max(np.abs(sol.values.values - expected)) < 1e-3 * np.max(expected)

    def test_stiff_grid_does_not_ring(self, null_cov):
        """Test a time step far above dx^2 still gives the smooth density."""
        grid = NoiseGrid(L=4.0, nx=2048, dt=1e-2)
        p = make_scale_params(null_cov, eps=0.5, mu=0.5, sigma=1.0, lam=0.0)
        sol = solve_q(null_cov, p, 0.5, grid)
        expected = heat_kernel(2.0 * p.nu, 0.5, grid.x, grid.L)
        assert np.max(np.abs(sol.values.values - expected)) < 1e-3 * np.max(expected)
        assert sol.mass == pytest.approx(1.0, abs=1e-8)

    def test_mass_conserved(self, q_grid, triangle_cov, params):
        """Test the untilted density keeps unit mass."""
        sol = solve_q(triangle_cov, params, 1.0, q_grid)
        assert sol.mass == pytest.approx(1.0, abs=1e-8)
        assert sol.lam == 0.0
        assert np.min(sol.values.values) >= -1e-8 * np.max(sol.values.values)

    def test_zero_lambda_identical(self, q_grid, triangle_cov):
        """Test lambda = 0 reproduces the untilted density bitwise."""
        p = make_scale_params(triangle_cov, eps=0.5, mu=0.5, sigma=1.0, lam=0.0)
        plain = solve_q(triangle_cov, p, 0.3, q_grid)
        tilted = solve_q_lambda(triangle_cov, p, 0.3, q_grid)
        assert np.array_equal(plain.values.values, tilted.values.values)

    def test_monotone_in_lambda(self, q_grid, triangle_cov):
        """Test q^lambda(t, 0) and its mass grow with lambda."""
        sols = [
            solve_q_lambda(
                triangle_cov,
                make_scale_params(triangle_cov, eps=0.5, mu=0.5, sigma=1.0, lam=lam),
                0.5,
                q_grid,
            )
            for lam in (0.0, 1.0, 2.0)
        ]
        assert sols[0].q0 < sols[1].q0 < sols[2].q0
        assert sols[0].mass < sols[1].mass < sols[2].mass

    def test_path_matches_single_time(self, q_grid, triangle_cov, params):
        """Test a multi-time path agrees with separate solves."""
        path = solve_q_path(triangle_cov, params, [0.4, 0.2], q_grid, params.lam)
        assert [sol.t for sol in path] == [0.2, 0.4]
        single = solve_q_lambda(triangle_cov, params, 0.4, q_grid)
        assert np.array_equal(path[1].values.values, single.values.values)

    def test_diffuse_columns(self, q_grid, triangle_cov, params):
        """Test columns are propagated independently."""
        prop = QPropagator(triangle_cov, params, q_grid, 0.0)
        columns = np.zeros((128, 2))
        columns[60, 0] = columns[70, 1] = 1.0
        both = prop.diffuse(columns)
        assert np.allclose(both[:, 1], prop.diffuse(columns[:, 1]))


class TestDuhamel:
    """Tests for the Duhamel iteration."""

    def test_matches_split_step(self, q_grid, triangle_cov, params):
        """Test the converged iteration agrees with the split-step solver."""
        duhamel = duhamel_iterate(triangle_cov, params, 0.1, q_grid)
        strang = solve_q_lambda(triangle_cov, params, 0.1, q_grid)
        assert duhamel.q0 == pytest.approx(strang.q0, abs=1e-4)
        assert duhamel.mass == pytest.approx(strang.mass, abs=1e-4)
        assert duhamel.iterations > 1

    def test_zero_lambda_one_iteration(self, q_grid, triangle_cov):
        """Test lambda = 0 converges at once to the untilted density."""
        p = make_scale_params(triangle_cov, eps=0.5, mu=0.5, sigma=1.0, lam=0.0)
        duhamel = duhamel_iterate(triangle_cov, p, 0.1, q_grid)
        assert duhamel.iterations == 1
        plain = solve_q(triangle_cov, p, 0.1, q_grid)
        assert np.array_equal(duhamel.values.values, plain.values.values)

    def test_first_order_linear_in_lambda_squared(self, q_grid, triangle_cov):
        """Test the first correction scales with lambda^2."""
        base = solve_q(
            triangle_cov, make_scale_params(triangle_cov, 0.5, 0.5, 1.0, 0.0), 0.1, q_grid
        )
        one = duhamel_first_order(
            triangle_cov, make_scale_params(triangle_cov, 0.5, 0.5, 1.0, 1.0), 0.1, q_grid
        )
        two = duhamel_first_order(
            triangle_cov, make_scale_params(triangle_cov, 0.5, 0.5, 1.0, 2.0), 0.1, q_grid
        )
        assert two.q0 - base.q0 == pytest.approx(4.0 * (one.q0 - base.q0), rel=1e-8)

    def test_divergence(self, q_grid, triangle_cov, params):
        """Test an unmet tolerance raises with the last residual."""
        with pytest.raises(LabDivergenceError) as err:
            duhamel_iterate(triangle_cov, params, 0.1, q_grid, max_iter=1, tol=0.0)
        assert err.value.residual > 0.0

    @pytest.mark.parametrize("cov_name", ["triangle_cov", "bump_cov"])
    @pytest.mark.parametrize("eps", [0.5, 0.35, 0.25])
    @pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
    def test_matches_split_step_across_parameters(self, request, cov_name, eps, lam):
        """Test the sup-norm agreement with the split-step solver over shapes and scales."""
        cov = request.getfixturevalue(cov_name)
        grid = NoiseGrid(L=2.0, nx=128, dt=1e-3)
        p = make_scale_params(cov, eps=eps, mu=0.5, sigma=1.0, lam=lam)
        duhamel = duhamel_iterate(cov, p, 0.1, grid)
        strang = solve_q_lambda(cov, p, 0.1, grid)
        gap = np.max(np.abs(duhamel.values.values - strang.values.values))
        assert gap < 1e-4


class TestVolterra:
    """Tests for the SHE Volterra oracles."""

    def test_no_coupling(self):
        """Test kappa = 0 gives the heat kernel moment."""
        value = she_second_moment(0.0, 1.0, 0.5).value
        assert value == pytest.approx(heat_second_moment(1.0, 0.5))
        assert she_mass_moment(0.0, 1.0, 0.5).value == 1.0

    def test_small_kappa(self):
        """Test the first-order expansion for small kappa."""
        value = she_second_moment(0.1, 1.0, 1.0).value
        assert value == pytest.approx(volterra_first_order(0.1, 1.0, 1.0), abs=1e-4)

    @pytest.mark.parametrize("kappa,nu,t", [(1.0, 1.0, 1.0), (2.0, 0.5, 0.3), (0.5, 2.0, 4.0)])
    def test_matches_closed_form(self, kappa, nu, t):
        """Test product integration against the closed forms."""
        second = she_second_moment(kappa, nu, t)
        assert second.value == pytest.approx(she_second_moment_exact(kappa, nu, t), rel=5e-4)
        assert second.error < 1e-3 * second.value
        mass = she_mass_moment(kappa, nu, t)
        assert mass.value == pytest.approx(she_mass_moment_exact(kappa, nu, t), rel=5e-4)

    def test_exact_forms_consistent(self):
        """Test the closed forms reduce correctly at kappa = 0."""
        assert she_mass_moment_exact(0.0, 1.0, 1.0) == 1.0
        exact = she_second_moment_exact(0.0, 1.0, 2.0)
        assert exact == pytest.approx(heat_second_moment(1.0, 2.0))

    def test_guards(self):
        """Test t <= 0 and a coarse resolution are refused."""
        with pytest.raises(LabDomainError):
            she_second_moment(1.0, 1.0, 0.0)
        with pytest.raises(LabResolutionError):
            she_mass_moment(1.0, 1.0, 1.0, resolution=8)


class TestSmoothingError:
    """Tests for the mollification error."""

    @pytest.fixture
    def fine(self):
        """Very fine grid for interpolating test profiles."""
        return NoiseGrid(L=4.0, nx=8192, dt=1e-3)

    def test_constant(self, fine, triangle_cov):
        """Test a flat profile has no smoothing error."""
        sol = _solution(fine, np.full(fine.nx, 0.7))
        assert smoothing_error(sol, triangle_cov, 0.3) == pytest.approx(0.0, abs=1e-12)

    def test_quartic_scaling(self, fine, triangle_cov):
        """Test the error of a quartic is 3 m2^2 eps^4 and quarters twice on halving."""
        y = fine.x
        sol = _solution(fine, 1.0 - y**2 + 0.5 * y**4)
        rho = triangle_cov.rho_table / triangle_cov.rho.mass
        m2 = integrate.simpson(triangle_cov.y**2 * rho, x=triangle_cov.y)
        coarse = smoothing_error(sol, triangle_cov, 0.4)
        finer = smoothing_error(sol, triangle_cov, 0.2)
        assert coarse == pytest.approx(3.0 * m2**2 * 0.4**4, rel=0.05)
        assert coarse / finer == pytest.approx(16.0, rel=0.2)

    def test_null_mollifier(self, fine, null_cov):
        """Test a zero-mass mollifier is refused."""
        with pytest.raises(LabValidationError):
            smoothing_error(_solution(fine, np.ones(fine.nx)), null_cov, 0.3)


class TestAronson:
    """Tests for the Gaussian envelope fit."""

    def test_heat_kernel_envelope(self, null_cov):
        """Test q without environment sits under its own Gaussian envelope."""
        grid = NoiseGrid(L=8.0, nx=512, dt=1e-3)
        p = make_scale_params(null_cov, eps=0.5, mu=0.5, sigma=1.0, lam=0.0)
        sols = solve_q_path(null_cov, p, [0.25, 0.5, 1.0], grid, 0.0)
        fit = aronson_check(sols, sigma=1.0)
        assert fit.c == pytest.approx(1.0 / (2.0 * p.nu), rel=0.03)
        assert fit.c_normalized == pytest.approx(1.0, rel=0.03)
        assert fit.C == pytest.approx(1.0 / math.sqrt(4.0 * math.pi * p.nu), rel=0.15)
        assert fit.violations == 0

    def test_without_sigma(self, null_cov):
        """Test the normalized rate is NaN when sigma is not given."""
        grid = NoiseGrid(L=8.0, nx=256, dt=1e-3)
        p = make_scale_params(null_cov, eps=0.5, mu=0.5, sigma=1.0, lam=0.0)
        fit = aronson_check(solve_q_path(null_cov, p, [0.5], grid, 0.0))
        assert math.isnan(fit.c_normalized)

    def test_empty(self):
        """Test an empty list is refused."""
        with pytest.raises(LabValidationError):
            aronson_check([])

    def test_constants_uniform_in_eps(self, triangle_cov):
        """Test the fitted envelope holds with stable constants as eps shrinks."""
        grid = NoiseGrid(L=8.0, nx=1024, dt=2.5e-4)
        fits = []
        for eps in (0.5, 0.25, 0.125):
            p = make_scale_params(triangle_cov, eps=eps, mu=0.5, sigma=1.0, lam=0.0)
            sols = solve_q_path(triangle_cov, p, [0.25, 0.5, 1.0], grid, 0.0)
            fits.append(aronson_check(sols, core=4.0 * eps, sigma=1.0))
        assert all(fit.violations == 0 for fit in fits)
        rates = [fit.c for fit in fits]
        amplitudes = [fit.C for fit in fits]
        assert max(rates) / min(rates) - 1.0 < 0.1
        assert max(amplitudes) / min(amplitudes) - 1.0 < 0.1


class TestModulusOfContinuity:
    """Tests for modulus_of_continuity."""

    def test_linear_profile(self, q_grid):
        """Test a unit-slope profile has modulus delta."""
        sol = _solution(q_grid, q_grid.x.copy())
        assert modulus_of_continuity(sol, radius=1.0, delta=0.25) == pytest.approx(0.25)

    def test_flat_profile(self, q_grid):
        """Test a flat profile has modulus zero."""
        assert modulus_of_continuity(_solution(q_grid, np.ones(128))) == 0.0
