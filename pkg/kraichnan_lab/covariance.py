"""Mollifier, covariance and scale parameters for Kraichnan flow lab."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any

import numpy as np
from scipy import integrate

from .const import (
    DEFAULT_MASS,
    DEFAULT_SAMPLES,
    MASS_TOL,
    MOLLIFIER_SHAPES,
    QUADRATURE_MAX_SAMPLES,
    QUADRATURE_RTOL,
    SHAPE_BUMP,
    SHAPE_TRIANGLE_SMOOTH,
    SHAPE_TRUNCATED_COSINE,
    SYMMETRY_TOL,
)
from .errors import LabQuadratureError, LabSingularityError, LabValidationError

_LOGGER = logging.getLogger(__name__)


def _inside(y: np.ndarray) -> np.ndarray:
    return np.abs(y) < 1.0


def _profile_triangle_smooth(y: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    mask = _inside(y)
    out[mask] = np.exp(-4.0 * y[mask] ** 2 / (1.0 - y[mask] ** 2))
    return out


def _profile_bump(y: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    mask = _inside(y)
    out[mask] = np.exp(-1.0 / (1.0 - y[mask] ** 2))
    return out


def _profile_truncated_cosine(y: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    mask = _inside(y)
    ym = y[mask]
    out[mask] = 0.5 * (1.0 + np.cos(np.pi * ym)) * np.exp(1.0 - 1.0 / (1.0 - ym**2))
    return out


PROFILES = {
    SHAPE_TRIANGLE_SMOOTH: _profile_triangle_smooth,
    SHAPE_BUMP: _profile_bump,
    SHAPE_TRUNCATED_COSINE: _profile_truncated_cosine,
}


@dataclass(frozen=True)
class MollifierSpec:
    """Symmetric smooth mollifier supported on [-1, 1]."""

    shape: str = SHAPE_TRIANGLE_SMOOTH
    mass: float = DEFAULT_MASS
    samples: int = DEFAULT_SAMPLES

    def __post_init__(self) -> None:
        """Validate the descriptor."""
        issues = []
        if self.shape not in MOLLIFIER_SHAPES:
            issues.append(("mollifier.shape", f"unknown profile {self.shape!r}"))
        if not math.isfinite(self.mass) or self.mass < 0:
            issues.append(("mollifier.mass", "must be a finite non-negative number"))
        if self.samples < 8 or self.samples % 2:
            issues.append(("mollifier.samples", "must be an even integer >= 8"))
        if issues:
            raise LabValidationError("Invalid mollifier", issues)

    @cached_property
    def normalization(self) -> float:
        """Factor turning the raw profile into one with the requested mass."""
        raw_mass, _ = integrate.quad(
            lambda s: float(PROFILES[self.shape](np.array([s]))[0]),
            -1.0,
            1.0,
            epsabs=1e-14,
            epsrel=1e-13,
            limit=200,
        )
        return self.mass / raw_mass

    def evaluate(self, y: Any) -> np.ndarray:
        """Evaluate rho at the given points.

        Args:
            y: Points (scalar or array)

        Returns:
            Array of rho values
        """
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return self.normalization * PROFILES[self.shape](y)


@dataclass(frozen=True, eq=False)
class CovarianceSpec:
    """Tabulated covariance C = rho * rho on [-2, 2] with scalar functionals."""

    rho: MollifierSpec
    h: float
    y: np.ndarray = field(repr=False)
    rho_table: np.ndarray = field(repr=False)
    z: np.ndarray = field(repr=False)
    C: np.ndarray = field(repr=False)
    C0: float
    C2: float
    intC: float

    @property
    def is_degenerate(self) -> bool:
        """Zero-mass mollifier, i.e. no environment."""
        return self.rho.mass == 0.0


@dataclass(frozen=True)
class ScaleParams:
    """Scale-dependent parameters of one member of an epsilon sequence."""

    eps: float
    mu: float
    sigma: float
    lam: float
    nu: float
    kappa_eps: float
    alpha: float = 0.0
    beta: float = 0.0


def validate_tabulation(y: np.ndarray, rho: np.ndarray, mass: float) -> None:
    """Check the mollifier invariants on a tabulation grid.

    Args:
        y: Symmetric tabulation grid covering [-1, 1]
        rho: Tabulated mollifier values
        mass: Expected integral of rho

    Raises:
        LabValidationError: If rho is asymmetric, negative, not supported in
            [-1, 1] or has the wrong mass
    """
    issues = []
    scale = max(float(np.max(np.abs(rho))), 1.0)
    if np.max(np.abs(rho - rho[::-1])) > SYMMETRY_TOL * scale:
        issues.append(("mollifier", "tabulation is not symmetric"))
    if np.min(rho) < 0:
        issues.append(("mollifier", "tabulation has negative values"))
    if np.any(rho[np.abs(y) >= 1.0] != 0.0):
        issues.append(("mollifier", "tabulation is not supported in (-1, 1)"))
    tab_mass = float(integrate.trapezoid(rho, y))
    if abs(tab_mass - mass) > MASS_TOL * max(mass, 1.0):
        issues.append(("mollifier.mass", f"tabulated mass {tab_mass} != {mass}"))
    if issues:
        raise LabValidationError("Invalid mollifier tabulation", issues)


def _second_derivative_at_zero(C: np.ndarray, center: int, h: float) -> float:
    c = C[center - 2 : center + 3]
    return float((-c[0] + 16.0 * c[1] - 30.0 * c[2] + 16.0 * c[3] - c[4]) / (12.0 * h * h))


def build_covariance(rho: MollifierSpec) -> CovarianceSpec:
    """Tabulate C = rho * rho and its scalar functionals.

    Args:
        rho: Mollifier descriptor

    Returns:
        Immutable covariance specification

    Raises:
        LabValidationError: If the tabulation violates the mollifier
            invariants or C''(0) is not strictly negative
    """
    n = rho.samples
    h = 2.0 / n
    y = h * np.arange(-(n // 2), n // 2 + 1)
    table = rho.evaluate(y)
    validate_tabulation(y, table, rho.mass)

    z = h * np.arange(-n, n + 1)
    C = h * np.convolve(table, table)
    C = 0.5 * (C + C[::-1])
    center = n

    C0 = float(C[center])
    C2 = _second_derivative_at_zero(C, center, h)
    intC = float(integrate.trapezoid(C, z))

    if rho.mass > 0 and C2 >= 0:
        raise LabValidationError(
            "Degenerate covariance",
            [("mollifier.shape", f"C''(0) = {C2} is not negative")],
        )

    _LOGGER.debug(
        "Built %s covariance: C0=%s C2=%s intC=%s", rho.shape, C0, C2, intC
    )
    return CovarianceSpec(
        rho=rho, h=h, y=y, rho_table=table, z=z, C=C, C0=C0, C2=C2, intC=intC
    )


def make_scale_params(
    cov: CovarianceSpec,
    eps: float,
    mu: float,
    sigma: float,
    lam: float,
    alpha: float = 0.0,
    beta: float = 0.0,
) -> ScaleParams:
    """Build ScaleParams, deriving nu and kappa_eps.

    Raises:
        LabValidationError: If eps is outside (0, 1), mu or sigma is
            negative, or both vanish
    """
    issues = []
    if not 0.0 < eps < 1.0:
        issues.append(("schedule.eps", "must lie in (0, 1)"))
    if mu < 0:
        issues.append(("schedule.mu", "must be non-negative"))
    if sigma < 0:
        issues.append(("schedule.sigma", "must be non-negative"))
    if mu <= 0 and sigma <= 0:
        issues.append(("schedule", "one of sigma, mu must be positive"))
    if issues:
        raise LabValidationError("Invalid scale parameters", issues)

    nu = sigma**2 + mu**2 * cov.C0
    kappa_eps = lam * mu * math.sqrt(eps) * cov.rho.mass
    return ScaleParams(
        eps=eps,
        mu=mu,
        sigma=sigma,
        lam=lam,
        nu=nu,
        kappa_eps=kappa_eps,
        alpha=alpha,
        beta=beta,
    )


def _as_output(values: np.ndarray, like: Any) -> Any:
    if np.ndim(like) == 0:
        return float(values.reshape(-1)[0])
    return values


def scaled_covariance(cov: CovarianceSpec, p: ScaleParams, y: Any) -> Any:
    """Evaluate C^eps(y) = mu^2 C(y / eps).

    Linear interpolation on the tabulation; zero for |y| >= 2 eps.
    """
    ya = np.abs(np.asarray(y, dtype=float))
    values = p.mu**2 * np.interp(ya / p.eps, cov.z, cov.C, left=0.0, right=0.0)
    values = np.clip(values, 0.0, p.mu**2 * cov.C0)
    return _as_output(np.asarray(values), y)


def a_eps(cov: CovarianceSpec, p: ScaleParams, y: Any) -> Any:
    """Diffusion coefficient sigma^2 + C^eps(0) - C^eps(y) of the separation."""
    c = np.asarray(scaled_covariance(cov, p, y), dtype=float)
    values = p.sigma**2 + (p.mu**2 * cov.C0 - c)
    return _as_output(np.asarray(values), y)


def rho_eps_values(cov: CovarianceSpec, p: ScaleParams, y: Any) -> Any:
    """Evaluate rho_eps(y) = eps^(-1/2) mu rho(y / eps)."""
    ya = np.abs(np.asarray(y, dtype=float))
    values = (
        p.mu
        / math.sqrt(p.eps)
        * np.interp(ya / p.eps, cov.y, cov.rho_table, left=0.0, right=0.0)
    )
    return _as_output(np.asarray(values), y)


def _weak_env_integral(cov: CovarianceSpec, sigma: float) -> tuple[float, float]:
    nu = sigma**2 + cov.C0
    integrand = cov.C / (nu - cov.C)
    fine = float(integrate.simpson(integrand, x=cov.z))
    coarse = float(integrate.simpson(integrand[::2], x=cov.z[::2]))
    return nu * fine, nu * abs(fine - coarse)


def kappa2_weak_env(cov: CovarianceSpec, sigma: float) -> float:
    """Weak-environment prediction nu * int C / (sigma^2 + C(0) - C).

    The tabulation is doubled until Simpson's rule on it and on every
    other sample agree to QUADRATURE_RTOL.

    Args:
        cov: Covariance specification
        sigma: Molecular diffusivity

    Returns:
        Predicted kappa squared

    Raises:
        LabSingularityError: If sigma = 0 while C is non-trivial
        LabQuadratureError: If QUADRATURE_MAX_SAMPLES is reached first
    """
    if cov.C0 == 0.0:
        return 0.0
    if sigma <= 0:
        raise LabSingularityError(
            "Integrand C/(C(0)-C) is not integrable at the origin",
            [("schedule.sigma", "must be positive")],
        )
    value, change = _weak_env_integral(cov, sigma)
    while change > QUADRATURE_RTOL * abs(value):
        samples = 2 * cov.rho.samples
        if samples > QUADRATURE_MAX_SAMPLES:
            _LOGGER.error("kappa2_weak_env stalled with refinement change %s", change)
            raise LabQuadratureError(
                f"Weak-environment integral not converged at {cov.rho.samples} samples",
                change=change,
            )
        _LOGGER.debug("kappa2_weak_env: change %s, refining to %s samples", change, samples)
        cov = build_covariance(replace(cov.rho, samples=samples))
        value, change = _weak_env_integral(cov, sigma)
    return value


def kappa2_weak_diff(cov: CovarianceSpec, c: float) -> float:
    """Weak-diffusivity prediction sqrt(2) c nu C(0) / |C''(0)|^(1/2), nu = C(0).

    Raises:
        LabValidationError: If c is negative or C''(0) is not negative
    """
    if c < 0:
        raise LabValidationError("Invalid constant", [("c", "must be >= 0")])
    if cov.C2 >= 0:
        raise LabValidationError(
            "Degenerate covariance", [("mollifier", "C''(0) must be negative")]
        )
    nu = cov.C0
    return math.sqrt(2.0) * c * nu * cov.C0 / math.sqrt(abs(cov.C2))


def transformed_coordinate(cov: CovarianceSpec, p: ScaleParams, y: Any) -> Any:
    """Coordinate F(y) = int_0^y 1 / a_eps used to straighten the separation."""
    ya = np.abs(np.atleast_1d(np.asarray(y, dtype=float)))
    top = max(float(ya.max()), 4.0 * p.eps)
    n = max(int(math.ceil(top / (p.eps / 64.0))), 64)
    s = np.linspace(0.0, top, n + 1)
    F = integrate.cumulative_trapezoid(1.0 / a_eps(cov, p, s), s, initial=0.0)
    values = np.sign(np.atleast_1d(y)) * np.interp(ya, s, F)
    return _as_output(values, y)


def weak_disorder_ratio(p: ScaleParams) -> float:
    """lambda mu sqrt(eps) / sqrt(sigma); its vanishing gives the heat-kernel limit."""
    if p.sigma <= 0:
        return math.inf
    return p.lam * p.mu * math.sqrt(p.eps) / math.sqrt(p.sigma)


def theorem_hypotheses(
    cov: CovarianceSpec, params: list[ScaleParams]
) -> list[dict[str, float]]:
    """Report mu sqrt(log(1/eps)) and lambda mu sqrt(eps) sqrt(int C) per eps."""
    rows = []
    for p in params:
        rows.append(
            {
                "eps": p.eps,
                "mu_sqrt_log": p.mu * math.sqrt(math.log(1.0 / p.eps)),
                "kappa_ratio": p.lam * p.mu * math.sqrt(p.eps) * math.sqrt(cov.intC),
            }
        )
    return rows
