"""Phase diagram classification and epsilon schedules for Kraichnan flow lab."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .const import (
    REGIME_ARRATIA,
    REGIME_CRITICAL_CONJECTURED,
    REGIME_CRITICAL_PROVEN,
    REGIME_STICKY,
    REGIME_STRONG,
    REGIME_TOL,
    REGIME_WEAK,
    SIDE_NEUTRAL,
    SIDE_WEAK_DIFF,
    SIDE_WEAK_ENV,
)
from .covariance import CovarianceSpec, ScaleParams, make_scale_params, theorem_hypotheses
from .errors import LabValidationError

_LOGGER = logging.getLogger(__name__)


def _side_for(alpha: float) -> str:
    if alpha < -REGIME_TOL:
        return SIDE_WEAK_ENV
    if alpha > REGIME_TOL:
        return SIDE_WEAK_DIFF
    return SIDE_NEUTRAL


@dataclass(frozen=True)
class RegimePoint:
    """Point (alpha, beta) of the phase diagram."""

    alpha: float
    beta: float
    side: str

    def __post_init__(self) -> None:
        """Validate exponents and side."""
        issues = []
        if self.beta < -REGIME_TOL:
            issues.append(("schedule.beta", "must be non-negative"))
        if self.side != _side_for(self.alpha):
            issues.append(("schedule.alpha", f"side {self.side!r} inconsistent with alpha"))
        if issues:
            raise LabValidationError("Invalid phase point", issues)

    @classmethod
    def from_exponents(cls, alpha: float, beta: float) -> RegimePoint:
        """Build a point, deriving the side from the sign of alpha."""
        return cls(alpha=float(alpha), beta=float(beta), side=_side_for(alpha))

    @property
    def critical_beta(self) -> float:
        """Height of the critical line above this alpha."""
        if self.alpha <= 0:
            return 0.5 - self.alpha
        return 0.5 * (1.0 - self.alpha)

    @property
    def on_critical_line(self) -> bool:
        """Whether beta sits on the critical line."""
        return abs(self.beta - self.critical_beta) <= REGIME_TOL


def classify_regime(pt: RegimePoint) -> str:
    """Label a phase point.

    Only the open left half of the critical line is proven; the point
    (0, 1/2) and the right half are conjectured.

    Raises:
        LabValidationError: If beta is negative
    """
    if pt.beta < -REGIME_TOL:
        raise LabValidationError("Invalid phase point", [("schedule.beta", "must be non-negative")])
    if abs(pt.alpha - 1.0) <= REGIME_TOL and abs(pt.beta) <= REGIME_TOL:
        return REGIME_STICKY
    if pt.alpha > 1.0 and abs(pt.beta) <= REGIME_TOL:
        return REGIME_ARRATIA
    if pt.on_critical_line:
        if pt.alpha < -REGIME_TOL:
            return REGIME_CRITICAL_PROVEN
        return REGIME_CRITICAL_CONJECTURED
    if pt.beta < pt.critical_beta:
        return REGIME_WEAK
    return REGIME_STRONG


@dataclass(frozen=True)
class ScheduleTemplate:
    """Prefactors of the power-law schedule and optional targets."""

    mu: float = 1.0
    sigma: float = 1.0
    lam: float = 1.0
    kappa_target: float | None = None
    nu_target: float | None = None


def _check_eps_list(eps_list: list[float]) -> None:
    issues = []
    if not eps_list:
        issues.append(("schedule.eps_list", "must not be empty"))
    for i, eps in enumerate(eps_list):
        if not 0.0 < eps < 1.0:
            issues.append((f"schedule.eps_list[{i}]", "must lie in (0, 1)"))
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        issues.append(("schedule.eps_list", "must be strictly decreasing"))
    if issues:
        raise LabValidationError("Invalid epsilon list", issues)


def schedule(
    pt: RegimePoint,
    eps_list: list[float],
    base: ScheduleTemplate,
    cov: CovarianceSpec,
) -> list[ScaleParams]:
    """Realize the exponents (alpha, beta) along an epsilon sequence.

    mu = mu0 eps^max(-alpha, 0), sigma = sigma0 eps^max(alpha, 0) and
    lambda = lambda0 eps^-beta. On the proven critical line mu carries an
    extra 1/log(1/eps). On any critical line with a kappa target, lambda is
    rescaled so that lambda mu sqrt(eps) |rho| equals the target exactly.
    A nu target fixes sigma^2 = nu - mu^2 C(0).

    Args:
        pt: Phase point
        eps_list: Strictly decreasing scales in (0, 1)
        base: Prefactors and targets
        cov: Covariance specification

    Returns:
        One ScaleParams per eps

    Raises:
        LabValidationError: If the exponents cannot produce positive parameters
    """
    _check_eps_list(eps_list)
    label = classify_regime(pt)
    out = []
    for eps in eps_list:
        mu = base.mu * eps ** max(-pt.alpha, 0.0)
        if label == REGIME_CRITICAL_PROVEN:
            mu /= math.log(1.0 / eps)
        sigma = base.sigma * eps ** max(pt.alpha, 0.0)
        lam = base.lam * eps ** (-pt.beta)

        if base.nu_target is not None:
            sigma2 = base.nu_target - mu * mu * cov.C0
            if sigma2 < 0:
                raise LabValidationError(
                    "Schedule cannot reach the diffusivity target",
                    [("schedule.nu_target", f"mu^2 C(0) exceeds nu at eps={eps}")],
                )
            sigma = math.sqrt(sigma2)

        if pt.on_critical_line and base.kappa_target is not None:
            scale = mu * math.sqrt(eps) * cov.rho.mass
            if scale <= 0:
                raise LabValidationError(
                    "Kappa target needs an environment",
                    [("schedule.kappa_target", "mu and mollifier mass must be positive")],
                )
            lam = base.kappa_target / scale

        out.append(make_scale_params(cov, eps, mu, sigma, lam, pt.alpha, pt.beta))
        _LOGGER.debug("Schedule eps=%s mu=%s sigma=%s lambda=%s", eps, mu, sigma, lam)
    return out


def hypothesis_check(
    cov: CovarianceSpec, params: list[ScaleParams]
) -> tuple[list[dict[str, float]], bool]:
    """Tabulate mu sqrt(log(1/eps)) along a schedule and whether it decreases."""
    rows = theorem_hypotheses(cov, params)
    values = [row["mu_sqrt_log"] for row in rows]
    decreasing = all(b < a for a, b in zip(values, values[1:]))
    if not decreasing:
        _LOGGER.warning("mu sqrt(log(1/eps)) is not decreasing along the schedule")
    return rows, decreasing


def estimate_exponents(params: list[ScaleParams]) -> RegimePoint:
    """Recover (alpha, beta) from the end points of a schedule by log slopes."""
    if len(params) < 2:
        raise LabValidationError(
            "Need two scales to estimate exponents", [("schedule.eps_list", "too short")]
        )
    first, last = params[0], params[-1]
    if min(first.mu, first.sigma, last.mu, last.sigma, first.lam, last.lam) <= 0:
        raise LabValidationError(
            "Exponents need positive parameters", [("schedule", "zero parameter")]
        )
    d_eps = math.log(last.eps) - math.log(first.eps)
    d_ratio = math.log(last.mu / last.sigma) - math.log(first.mu / first.sigma)
    alpha = -d_ratio / d_eps
    beta = -(math.log(last.lam) - math.log(first.lam)) / d_eps
    return RegimePoint.from_exponents(alpha, max(beta, 0.0))


def phase_sweep(
    alpha_range: tuple[float, float],
    beta_range: tuple[float, float],
    grid_points: int,
) -> list[tuple[float, float, str]]:
    """Classify a rectangular grid of phase points, row-major in alpha."""
    if grid_points < 2:
        raise LabValidationError("Sweep too coarse", [("grid_points", "must be >= 2")])
    if beta_range[0] < 0:
        raise LabValidationError("Invalid sweep", [("beta_range", "must be non-negative")])
    rows = []
    for alpha in np.linspace(alpha_range[0], alpha_range[1], grid_points):
        for beta in np.linspace(beta_range[0], beta_range[1], grid_points):
            pt = RegimePoint.from_exponents(float(alpha), float(beta))
            rows.append((pt.alpha, pt.beta, classify_regime(pt)))
    _LOGGER.info("Classified %s phase points", len(rows))
    return rows
