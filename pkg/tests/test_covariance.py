"""Tests for mollifier, covariance and scale parameters."""

import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from scipy import integrate

from kraichnan_lab import covariance
from kraichnan_lab.covariance import (
    MollifierSpec,
    a_eps,
    build_covariance,
    kappa2_weak_diff,
    kappa2_weak_env,
    make_scale_params,
    rho_eps_values,
    scaled_covariance,
    theorem_hypotheses,
    transformed_coordinate,
    validate_tabulation,
    weak_disorder_ratio,
)
from kraichnan_lab.errors import LabQuadratureError, LabSingularityError, LabValidationError


class TestMollifierSpec:
    """Tests for MollifierSpec."""

    def test_defaults(self):
        """Test default descriptor."""
        spec = MollifierSpec()
        assert spec.shape == "triangle-smooth"
        assert spec.mass == 1.0

    def test_unknown_shape(self):
        """Test unknown profile is rejected with its config path."""
        with pytest.raises(LabValidationError) as err:
            MollifierSpec(shape="square")
        assert err.value.issues[0][0] == "mollifier.shape"

    def test_negative_mass(self):
        """Test negative mass is rejected."""
        with pytest.raises(LabValidationError):
            MollifierSpec(mass=-1.0)

    def test_odd_samples(self):
        """Test odd sample count is rejected."""
        with pytest.raises(LabValidationError):
            MollifierSpec(samples=101)

    def test_support(self):
        """Test rho vanishes outside (-1, 1)."""
        spec = MollifierSpec("bump")
        assert np.all(spec.evaluate([-1.0, 1.0, 1.5, -3.0]) == 0.0)
        assert spec.evaluate(0.0)[0] > 0


class TestValidateTabulation:
    """Tests for the tabulation checks."""

    def test_asymmetric(self):
        """Test an asymmetric table is rejected."""
        y = np.linspace(-1, 1, 11)
        rho = np.zeros_like(y)
        rho[3] = 1.0
        with pytest.raises(LabValidationError):
            validate_tabulation(y, rho, 0.2)

    def test_negative_values(self):
        """Test negative entries are rejected."""
        y = np.linspace(-1, 1, 11)
        rho = np.zeros_like(y)
        rho[4] = rho[6] = -1.0
        with pytest.raises(LabValidationError):
            validate_tabulation(y, rho, -0.4)


class TestBuildCovariance:
    """Tests for build_covariance."""

    @pytest.mark.parametrize("shape", ["triangle-smooth", "bump", "truncated-cosine"])
    def test_functionals(self, shape):
        """Test C(0) > 0, C''(0) < 0 and int C = mass^2."""
        cov = build_covariance(MollifierSpec(shape, 1.0, 1024))
        assert cov.C0 > 0
        assert cov.C2 < 0
        assert cov.intC == pytest.approx(1.0, rel=1e-6)

    def test_mass_scaling(self):
        """Test int C scales with the squared mass."""
        cov = build_covariance(MollifierSpec("bump", 2.0, 512))
        assert cov.intC == pytest.approx(4.0, rel=1e-6)

    def test_support_and_symmetry(self, triangle_cov):
        """Test C is even, maximal at 0 and vanishes at |z| = 2."""
        assert np.allclose(triangle_cov.C, triangle_cov.C[::-1])
        assert triangle_cov.C0 == pytest.approx(triangle_cov.C.max())
        assert triangle_cov.C[0] == 0.0
        assert triangle_cov.C[-1] == 0.0

    def test_zero_mass(self, null_cov):
        """Test the zero-mass mollifier gives C identically zero."""
        assert null_cov.is_degenerate
        assert null_cov.C0 == 0.0
        assert np.all(null_cov.C == 0.0)


class TestScaleParams:
    """Tests for derived scale parameters."""

    def test_derived(self, triangle_cov):
        """Test nu and kappa_eps."""
        p = make_scale_params(triangle_cov, eps=0.25, mu=2.0, sigma=0.5, lam=3.0)
        assert p.nu == pytest.approx(0.25 + 4.0 * triangle_cov.C0)
        assert p.kappa_eps == pytest.approx(3.0 * 2.0 * 0.5)

    def test_invalid(self, triangle_cov):
        """Test every offending field is reported."""
        with pytest.raises(LabValidationError) as err:
            make_scale_params(triangle_cov, eps=1.5, mu=-1.0, sigma=0.0, lam=1.0)
        paths = [path for path, _ in err.value.issues]
        assert "schedule.eps" in paths
        assert "schedule.mu" in paths

    def test_weak_disorder_ratio(self, triangle_cov):
        """Test the weak-disorder ratio."""
        p = make_scale_params(triangle_cov, eps=0.04, mu=1.0, sigma=4.0, lam=5.0)
        assert weak_disorder_ratio(p) == pytest.approx(5.0 * 0.2 / 2.0)

    def test_theorem_hypotheses(self, triangle_cov):
        """Test the hypothesis table along a schedule."""
        params = [
            make_scale_params(triangle_cov, eps, math.sqrt(eps), 1.0, 1.0) for eps in (0.2, 0.1)
        ]
        rows = theorem_hypotheses(triangle_cov, params)
        assert [row["eps"] for row in rows] == [0.2, 0.1]
        assert rows[1]["mu_sqrt_log"] < rows[0]["mu_sqrt_log"]


class TestScaledCovariance:
    """Tests for C^eps, a_eps and rho_eps."""

    def test_scalar_and_array(self, triangle_cov, params):
        """Test scalar in gives scalar out."""
        assert isinstance(scaled_covariance(triangle_cov, params, 0.0), float)
        values = scaled_covariance(triangle_cov, params, np.array([0.0, 0.1]))
        assert values.shape == (2,)

    def test_scaling(self, triangle_cov, params):
        """Test C^eps(0) = mu^2 C(0) and support |y| < 2 eps."""
        assert scaled_covariance(triangle_cov, params, 0.0) == pytest.approx(
            params.mu**2 * triangle_cov.C0
        )
        assert scaled_covariance(triangle_cov, params, 2.0 * params.eps) == 0.0

    def test_a_eps_range(self, triangle_cov, params):
        """Test sigma^2 <= a_eps <= nu with a_eps(0) = sigma^2."""
        y = np.linspace(-3, 3, 301)
        a = a_eps(triangle_cov, params, y)
        assert a_eps(triangle_cov, params, 0.0) == pytest.approx(params.sigma**2)
        assert np.all(a >= params.sigma**2 - 1e-12)
        assert np.all(a <= params.nu + 1e-12)

    def test_rho_eps_mass(self, triangle_cov, params):
        """Test int rho_eps = mu sqrt(eps) |rho|."""
        y = np.linspace(-params.eps, params.eps, 4001)
        mass = integrate.trapezoid(rho_eps_values(triangle_cov, params, y), y)
        assert mass == pytest.approx(params.mu * math.sqrt(params.eps), rel=1e-4)

    @settings(
        max_examples=30, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture]
    )
    @given(st.floats(min_value=0.0, max_value=3.0))
    def test_even(self, triangle_cov, params, y):
        """Test C^eps is even."""
        assert scaled_covariance(triangle_cov, params, y) == scaled_covariance(
            triangle_cov, params, -y
        )

    def test_transformed_coordinate(self, triangle_cov, params):
        """Test F is odd and grows like y / nu far from the origin."""
        far = transformed_coordinate(triangle_cov, params, np.array([3.0, 4.0]))
        assert far[1] - far[0] == pytest.approx(1.0 / params.nu, rel=1e-6)
        assert transformed_coordinate(triangle_cov, params, -1.0) == pytest.approx(
            -transformed_coordinate(triangle_cov, params, 1.0)
        )


class TestKappaSquared:
    """Tests for the kappa^2 predictions."""

    def test_zero_covariance(self, null_cov):
        """Test C = 0 gives kappa^2 = 0."""
        assert kappa2_weak_env(null_cov, 1.0) == 0.0

    def test_sigma_zero_singular(self, triangle_cov):
        """Test sigma = 0 is refused."""
        with pytest.raises(LabSingularityError):
            kappa2_weak_env(triangle_cov, 0.0)

    def test_large_sigma_limit(self, triangle_cov):
        """Test kappa^2 tends to int C for large sigma."""
        sigma = 10.0 * math.sqrt(triangle_cov.C0)
        assert kappa2_weak_env(triangle_cov, sigma) == pytest.approx(triangle_cov.intC, rel=0.01)

    def test_double_resolution(self):
        """Test the quadrature is stable under doubling the tabulation."""
        coarse = build_covariance(MollifierSpec("triangle-smooth", 1.0, 2048))
        fine = build_covariance(MollifierSpec("triangle-smooth", 1.0, 4096))
        assert kappa2_weak_env(coarse, 0.5) == pytest.approx(kappa2_weak_env(fine, 0.5), abs=1e-6)

    def test_coarse_tabulation_refined(self):
        """Test a coarse tabulation is refined to the converged value."""
        coarse = build_covariance(MollifierSpec("triangle-smooth", 1.0, 64))
        fine = build_covariance(MollifierSpec("triangle-smooth", 1.0, 4096))
        assert kappa2_weak_env(coarse, 0.5) == pytest.approx(kappa2_weak_env(fine, 0.5), rel=1e-6)

    def test_unconverged_raises(self, triangle_cov, monkeypatch):
        """Test an unmet tolerance raises instead of returning a value."""
        monkeypatch.setattr(covariance, "QUADRATURE_RTOL", -1.0)
        monkeypatch.setattr(covariance, "QUADRATURE_MAX_SAMPLES", 4 * triangle_cov.rho.samples)
        with pytest.raises(LabQuadratureError) as err:
            kappa2_weak_env(triangle_cov, 0.5)
        assert err.value.change >= 0.0

    def test_monotone_in_sigma(self, triangle_cov):
        """Test kappa^2 decreases with sigma."""
        values = [kappa2_weak_env(triangle_cov, s) for s in (0.25, 0.5, 1.0, 2.0)]
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_weak_diff_linear(self, triangle_cov):
        """Test the weak-diffusivity prediction is linear in c."""
        assert kappa2_weak_diff(triangle_cov, 0.0) == 0.0
        assert kappa2_weak_diff(triangle_cov, 2.0) == pytest.approx(
            2.0 * kappa2_weak_diff(triangle_cov, 1.0)
        )

    def test_weak_diff_negative_c(self, triangle_cov):
        """Test negative c is rejected."""
        with pytest.raises(LabValidationError):
            kappa2_weak_diff(triangle_cov, -1.0)
