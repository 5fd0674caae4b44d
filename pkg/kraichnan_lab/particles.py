"""Particle Monte Carlo for Kraichnan flow lab."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable

import numpy as np

from .const import (
    DEFAULT_BANDWIDTH_FACTOR,
    LOW_CONFIDENCE_RSE,
    MAX_PSD_CLAMPS,
    MIN_BANDWIDTH_FACTOR,
    MIN_KERNEL_PARTICLES,
    ORACLE_EXPONENT_GUARD,
)
from .covariance import CovarianceSpec, ScaleParams, a_eps, scaled_covariance
from .errors import (
    LabBandwidthError,
    LabClampError,
    LabValidationError,
)
from .noise import (
    FieldIncrement,
    NoiseGrid,
    counter_generator,
    mollify,
    sample_white_increments,
)
from .spde import GridField

_LOGGER = logging.getLogger(__name__)

PairFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class FlowEnsemble:
    """Particles advected by one shared field realization."""

    positions: np.ndarray = field(repr=False)
    field_seed: int
    particle_seed_base: int
    t: float
    sigma: float
    flagged: np.ndarray = field(repr=False, default=None)

    def __post_init__(self) -> None:
        """Default to no flagged particles."""
        if self.flagged is None:
            object.__setattr__(
                self, "flagged", np.zeros(len(self.positions), dtype=bool)
            )


@dataclass(frozen=True, eq=False)
class TwoPointPath:
    """Ensemble of two-point motions with Feynman-Kac accumulators."""

    y1: np.ndarray = field(repr=False)
    y2: np.ndarray = field(repr=False)
    A: np.ndarray = field(repr=False)
    t: float
    clamps: int = 0

    @classmethod
    def start(cls, replicas: int, y1: float = 0.0, y2: float = 0.0) -> TwoPointPath:
        """Replicas started at (y1, y2) with A = 0."""
        return cls(
            y1=np.full(replicas, float(y1)),
            y2=np.full(replicas, float(y2)),
            A=np.zeros(replicas),
            t=0.0,
        )


@dataclass(frozen=True, eq=False)
class DifferenceState:
    """Ensemble of the separation process D with its Feynman-Kac accumulator."""

    d: np.ndarray = field(repr=False)
    A: np.ndarray = field(repr=False)
    t: float

    @classmethod
    def start(cls, replicas: int, d0: float = 0.0) -> DifferenceState:
        """Replicas started at d0."""
        return cls(d=np.full(replicas, float(d0)), A=np.zeros(replicas), t=0.0)


@dataclass(frozen=True)
class LocalTimeEstimate:
    """Occupation-band local time estimate."""

    level: float
    h: float
    value: Any


@dataclass(frozen=True)
class MonteCarloEstimate:
    """Sample mean with standard error."""

    mean: float
    se: float
    low_confidence: bool = False

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> MonteCarloEstimate:
        """Mean and standard error of i.i.d. samples."""
        samples = np.asarray(samples, dtype=float)
        mean = float(np.mean(samples))
        se = float(np.std(samples, ddof=1) / math.sqrt(len(samples)))
        low = mean != 0.0 and se / abs(mean) > LOW_CONFIDENCE_RSE
        return cls(mean=mean, se=se, low_confidence=bool(low))


def default_time_step(p: ScaleParams, t_final: float) -> float:
    """Step resolving the width-eps well: min(eps^2 / (10 nu), 1e-4 t_final)."""
    return min(p.eps**2 / (10.0 * p.nu), 1e-4 * t_final)


def _check_time_step(p: ScaleParams, dt: float) -> None:
    if dt > p.eps**2 / (10.0 * p.nu) * (1.0 + 1e-12):
        raise LabValidationError(
            "Time step does not resolve the correlation scale",
            [("dt", f"dt={dt} > eps^2/(10 nu)={p.eps**2 / (10.0 * p.nu)}")],
        )


def step_flow(
    e: FlowEnsemble, dW: FieldIncrement, dt: float, grid: NoiseGrid
) -> FlowEnsemble:
    """Advance particles by dX = W(dt, X) + sigma dB.

    Field increments are linearly interpolated at the particle positions.
    Particles within 2 eps of the periodic seam are flagged and stay flagged.
    """
    field_part = np.interp(e.positions, grid.x, dW.values, period=2.0 * grid.L)
    rng = counter_generator(e.particle_seed_base, dW.time_index)
    noise = rng.standard_normal(len(e.positions))
    positions = e.positions + field_part + e.sigma * math.sqrt(dt) * noise
    flagged = e.flagged | (np.abs(positions) > grid.L - 2.0 * dW.eps)
    if np.any(flagged & ~e.flagged):
        _LOGGER.debug(
            "%s particles reached the seam at step %s",
            int(np.count_nonzero(flagged & ~e.flagged)),
            dW.time_index,
        )
    return replace(e, positions=positions, t=e.t + dt, flagged=flagged)


def run_flow(
    grid: NoiseGrid,
    cov: CovarianceSpec,
    p: ScaleParams,
    t: float,
    particles: int,
    particle_seed_base: int,
    x0: float = 0.0,
) -> FlowEnsemble:
    """Advect particles from x0 through the field keyed by grid.seed up to t."""
    e = FlowEnsemble(
        positions=np.full(particles, float(x0)),
        field_seed=grid.seed,
        particle_seed_base=particle_seed_base,
        t=0.0,
        sigma=p.sigma,
    )
    steps = int(round(t / grid.dt))
    for k in range(steps):
        dW = mollify(grid, sample_white_increments(grid, k), cov, p, k)
        e = step_flow(e, dW, grid.dt, grid)
    return e


def empirical_kernel(e: FlowEnsemble, grid: NoiseGrid) -> GridField:
    """Histogram density of unflagged particles on the grid cells.

    Raises:
        LabValidationError: If no unflagged particle remains
    """
    kept = e.positions[~e.flagged]
    if kept.size == 0:
        raise LabValidationError("Empty particle ensemble")
    if kept.size < MIN_KERNEL_PARTICLES:
        _LOGGER.warning(
            "Kernel estimated from %s particles, below %s",
            kept.size,
            MIN_KERNEL_PARTICLES,
        )
    dx = grid.dx
    wrapped = np.mod(kept + grid.L + 0.5 * dx, 2.0 * grid.L) - 0.5 * dx
    index = np.clip(np.floor((wrapped + 0.5 * dx) / dx).astype(int), 0, grid.nx - 1)
    counts = np.bincount(index, minlength=grid.nx).astype(float)
    return GridField(values=counts / (kept.size * dx), t=e.t, grid=grid)


def two_point_covariance(
    cov: CovarianceSpec, p: ScaleParams, y1: Any, y2: Any
) -> tuple[Any, Any]:
    """Diagonal and off-diagonal entries of the two-point diffusion matrix."""
    diag = p.sigma**2 + p.mu**2 * cov.C0
    off = scaled_covariance(cov, p, np.asarray(y1) - np.asarray(y2))
    return diag, off


def step_two_point(
    path: TwoPointPath,
    p: ScaleParams,
    cov: CovarianceSpec,
    dt: float,
    rng: np.random.Generator,
) -> TwoPointPath:
    """One Euler step of the two-point motion (Y1, Y2).

    The increment is Gaussian with covariance dt [[nu, c], [c, nu]],
    c = C^eps(Y1 - Y2), drawn by Cholesky, plus the common drift
    dt lambda c. The accumulator gains dt lambda^2 C^eps by the trapezoidal rule.

    Raises:
        LabClampError: If the covariance had to be clamped too often
    """
    _check_time_step(p, dt)
    diag, c = two_point_covariance(cov, p, path.y1, path.y2)
    c = np.asarray(c, dtype=float)
    clamps = path.clamps
    bound = diag
    bad = np.abs(c) > bound
    if np.any(bad):
        clamps += int(np.count_nonzero(bad))
        _LOGGER.warning("Clamped %s two-point covariances", int(np.count_nonzero(bad)))
        c = np.clip(c, -bound, bound)
        if clamps > MAX_PSD_CLAMPS:
            raise LabClampError(f"Too many covariance clamps ({clamps})")

    z = rng.standard_normal((2, len(path.y1)))
    l11 = math.sqrt(diag)
    l21 = c / l11
    l22 = np.sqrt(np.maximum(diag - l21 * l21, 0.0))
    root = math.sqrt(dt)
    drift = dt * p.lam * c
    y1 = path.y1 + drift + root * l11 * z[0]
    y2 = path.y2 + drift + root * (l21 * z[0] + l22 * z[1])
    c_new = np.asarray(scaled_covariance(cov, p, y1 - y2), dtype=float)
    A = path.A + 0.5 * dt * p.lam**2 * (c + c_new)
    return TwoPointPath(y1=y1, y2=y2, A=A, t=path.t + dt, clamps=clamps)


def step_difference(
    d: DifferenceState,
    cov: CovarianceSpec,
    p: ScaleParams,
    dt: float,
    rng: np.random.Generator,
) -> DifferenceState:
    """One Euler step of D with generator a_eps d^2/dx^2: D += sqrt(2 a_eps dt) N."""
    _check_time_step(p, dt)
    a = np.asarray(a_eps(cov, p, d.d), dtype=float)
    c_old = np.asarray(scaled_covariance(cov, p, d.d), dtype=float)
    new = d.d + np.sqrt(2.0 * a * dt) * rng.standard_normal(len(d.d))
    c_new = np.asarray(scaled_covariance(cov, p, new), dtype=float)
    A = d.A + 0.5 * dt * p.lam**2 * (c_old + c_new)
    return DifferenceState(d=new, A=A, t=d.t + dt)


def run_two_point(
    cov: CovarianceSpec,
    p: ScaleParams,
    t: float,
    replicas: int,
    seed: int,
    dt: float | None = None,
) -> TwoPointPath:
    """Simulate the two-point motion from (0, 0) up to time t."""
    dt = dt or default_time_step(p, t)
    steps = int(math.ceil(t / dt - 1e-9))
    dt = t / steps
    rng = np.random.default_rng(seed)
    path = TwoPointPath.start(replicas)
    for _ in range(steps):
        path = step_two_point(path, p, cov, dt, rng)
    _LOGGER.debug("Two-point run: %s steps, %s clamps", steps, path.clamps)
    return path


def run_difference(
    cov: CovarianceSpec,
    p: ScaleParams,
    t: float,
    replicas: int,
    seed: int,
    dt: float | None = None,
) -> DifferenceState:
    """Simulate the separation D from 0 up to time t."""
    dt = dt or default_time_step(p, t)
    steps = int(math.ceil(t / dt - 1e-9))
    dt = t / steps
    rng = np.random.default_rng(seed)
    state = DifferenceState.start(replicas)
    for _ in range(steps):
        state = step_difference(state, cov, p, dt, rng)
    return state


def feynman_kac_moment(
    path: TwoPointPath | DifferenceState, f: Callable[[np.ndarray], np.ndarray] | None = None
) -> MonteCarloEstimate:
    """Estimate E[e^A f(D)] with D = Y1 - Y2 (f = 1 when omitted)."""
    d = path.y1 - path.y2 if isinstance(path, TwoPointPath) else path.d
    weight = np.exp(path.A)
    if f is not None:
        weight = weight * f(d)
    return MonteCarloEstimate.from_samples(weight)


def occupation_time(path: TwoPointPath | DifferenceState) -> MonteCarloEstimate:
    """Mean Feynman-Kac exponent lambda^2 int C^eps(D_s) ds."""
    return MonteCarloEstimate.from_samples(path.A)


def default_bandwidth(diffusivity: float, dt: float) -> float:
    """Band half-width 8 sqrt(diffusivity dt)."""
    return DEFAULT_BANDWIDTH_FACTOR * math.sqrt(diffusivity * dt)


def _check_bandwidth(h: float, diffusivity: float, dt: float) -> None:
    if h < MIN_BANDWIDTH_FACTOR * math.sqrt(diffusivity * dt) * (1.0 - 1e-12):
        raise LabBandwidthError(
            "Bandwidth does not resolve the step size",
            [("h", f"h={h} < {MIN_BANDWIDTH_FACTOR} sqrt(diffusivity dt)")],
        )


def _band_local_time(counts: Any, h: float, dt: float, diffusivity: float) -> Any:
    return diffusivity * dt / (2.0 * h) * counts


def local_time(
    samples: np.ndarray,
    level: float,
    h: float,
    dt: float,
    diffusivity: float,
) -> LocalTimeEstimate:
    """Occupation-band estimate of the local time at ``level``.

    The value (dt / 2h) #{k: |Z_k - level| <= h} is the occupation density
    with respect to ds; multiplying by the diffusivity converts it to the
    semimartingale local time, for which E[L^0_t] = E|Z_t| holds for a
    Brownian Z started at 0. For the separation of two diffusivity-nu
    motions use diffusivity 2 nu.

    Args:
        samples: Path samples, shape (steps,) or (steps, replicas)
        level: Level y
        h: Band half-width
        dt: Sampling step
        diffusivity: Quadratic variation rate of Z

    Raises:
        LabBandwidthError: If h < 4 sqrt(diffusivity dt)
    """
    _check_bandwidth(h, diffusivity, dt)
    counts = np.count_nonzero(np.abs(np.asarray(samples) - level) <= h, axis=0)
    value = _band_local_time(counts, h, dt, diffusivity)
    if np.ndim(value) == 0:
        value = float(value)
    return LocalTimeEstimate(level=level, h=h, value=value)


def she_limit_oracle(
    kappa: float,
    nu: float,
    t: float,
    f: PairFunction | None = None,
    replicas: int = 10_000,
    dt: float = 1e-4,
    seed: int = 0,
    h: float | None = None,
) -> MonteCarloEstimate:
    """Monte Carlo of E[exp(kappa^2/(2 nu) L^0_t(B1 - B2)) f(B1_t, B2_t)].

    B1 and B2 are independent with diffusivity nu each, started at 0.

    Raises:
        LabValidationError: If kappa^2 sqrt(t) / (2 nu) exceeds the guard
        LabBandwidthError: If h < 4 sqrt(2 nu dt), checked before simulating
    """
    if kappa * kappa * math.sqrt(t) / (2.0 * nu) > ORACLE_EXPONENT_GUARD:
        raise LabValidationError(
            "Exponential local time moment too wide for Monte Carlo",
            [("kappa", f"kappa^2 sqrt(t)/(2 nu) > {ORACLE_EXPONENT_GUARD}")],
        )
    steps = int(math.ceil(t / dt - 1e-9))
    dt = t / steps
    h = h or default_bandwidth(2.0 * nu, dt)
    _check_bandwidth(h, 2.0 * nu, dt)
    rng = np.random.default_rng(seed)
    b1 = np.zeros(replicas)
    b2 = np.zeros(replicas)
    counts = np.zeros(replicas)
    root = math.sqrt(nu * dt)
    for _ in range(steps):
        b1 += root * rng.standard_normal(replicas)
        b2 += root * rng.standard_normal(replicas)
        counts += np.abs(b1 - b2) <= h
    lt = _band_local_time(counts, h, dt, 2.0 * nu)
    weight = np.exp(kappa * kappa / (2.0 * nu) * lt)
    if f is not None:
        weight = weight * f(b1, b2)
    estimate = MonteCarloEstimate.from_samples(weight)
    if estimate.low_confidence:
        _LOGGER.warning(
            "Low-confidence SHE oracle: mean %s, standard error %s",
            estimate.mean,
            estimate.se,
        )
    return estimate


def levy_local_time_mean(diffusivity: float, t: float) -> float:
    """E|Z_t| = sqrt(2 diffusivity t / pi) for a Brownian Z from 0."""
    return math.sqrt(2.0 * diffusivity * t / math.pi)


def gaussian_delta_proxy(h: float) -> Callable[[np.ndarray], np.ndarray]:
    """Centered Gaussian density of width h standing in for a delta at 0."""

    def proxy(d: np.ndarray) -> np.ndarray:
        return np.exp(-0.5 * (d / h) ** 2) / (h * math.sqrt(2.0 * math.pi))

    return proxy

