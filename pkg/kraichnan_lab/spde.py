"""Finite-difference SPDE solvers for Kraichnan flow lab."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import fft

from .const import (
    DEFAULT_STABILITY_FACTOR,
    FLUX_CONSERVATIVE,
    FLUX_FORMS,
    FLUX_UPWIND,
    HEAT_KERNEL_IMAGE_TOL,
    NEGATIVE_UNDERSHOOT,
)
from .covariance import CovarianceSpec, ScaleParams
from .errors import (
    LabBlowUpError,
    LabDomainError,
    LabResolutionError,
    LabValidationError,
    LabWindowError,
)
from .noise import (
    FieldIncrement,
    NoiseGrid,
    circular_convolve,
    mollify,
    sample_white_increments,
)

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class GridField:
    """Real function on the periodic grid at time t.

    ``values`` has shape (nx,) for one realization or (replicas, nx) for an
    ensemble stepped in lockstep.
    """

    values: np.ndarray = field(repr=False)
    t: float
    grid: NoiseGrid

    @property
    def mass(self) -> Any:
        """Integral sum(values) dx, per replica for ensembles."""
        return np.sum(self.values, axis=-1) * self.grid.dx

    @property
    def negative_mass(self) -> Any:
        """Integral of the negative part."""
        return np.sum(np.minimum(self.values, 0.0), axis=-1) * self.grid.dx


@dataclass(frozen=True)
class SpdeScheme:
    """Explicit Euler-Maruyama scheme settings."""

    flux_form: str = FLUX_CONSERVATIVE
    laplacian_coeff: float = 0.5
    stability_factor: float = DEFAULT_STABILITY_FACTOR

    def __post_init__(self) -> None:
        """Validate scheme settings."""
        issues = []
        if self.flux_form not in FLUX_FORMS:
            issues.append(("scheme.flux_form", f"unknown flux form {self.flux_form!r}"))
        if not 0.0 < self.stability_factor < 1.0:
            issues.append(("scheme.stability_factor", "must lie in (0, 1)"))
        if issues:
            raise LabValidationError("Invalid scheme", issues)

    @classmethod
    def for_nu(cls, nu: float, flux_form: str = FLUX_CONSERVATIVE, **kwargs) -> SpdeScheme:
        """Scheme with Laplacian coefficient nu / 2."""
        return cls(flux_form=flux_form, laplacian_coeff=0.5 * nu, **kwargs)

    def check_cfl(self, dt: float, dx: float) -> None:
        """Refuse explicit steps with dt above stability_factor dx^2 / nu.

        Raises:
            LabValidationError: If the CFL condition fails
        """
        nu = 2.0 * self.laplacian_coeff
        if nu > 0 and dt > self.stability_factor * dx * dx / nu:
            raise LabValidationError(
                "CFL condition violated",
                [
                    (
                        "grid.dt",
                        f"dt={dt} > {self.stability_factor} dx^2/nu="
                        f"{self.stability_factor * dx * dx / nu}",
                    )
                ],
            )


def heat_kernel(nu: float, t: float, y: Any, L: float | None = None) -> Any:
    """Gaussian density with variance nu t, periodized over [-L, L) if L is given.

    Raises:
        LabDomainError: If t <= 0 or nu <= 0
    """
    if t <= 0 or nu <= 0:
        raise LabDomainError(
            "Heat kernel needs positive time and diffusivity",
            [("t", f"t={t}, nu={nu}")],
        )
    ya = np.asarray(y, dtype=float)
    var = nu * t
    norm = 1.0 / math.sqrt(2.0 * math.pi * var)
    values = norm * np.exp(-(ya**2) / (2.0 * var))
    if L is not None:
        period = 2.0 * L
        n = 1
        while True:
            shift = n * period
            tail = norm * math.exp(-((shift - L) ** 2) / (2.0 * var))
            if tail < HEAT_KERNEL_IMAGE_TOL * norm or n > 1000:
                break
            values = values + norm * (
                np.exp(-((ya - shift) ** 2) / (2.0 * var))
                + np.exp(-((ya + shift) ** 2) / (2.0 * var))
            )
            n += 1
    if np.ndim(y) == 0:
        return float(values)
    return values


def init_delta(grid: NoiseGrid, nu: float, t0: float | None = None) -> GridField:
    """Heat kernel p_t0 standing in for the delta initial condition.

    Args:
        grid: Spatial grid
        nu: Diffusivity
        t0: Start time, default 4 dx^2 / nu

    Raises:
        LabResolutionError: If the standard deviation is below 2 dx
    """
    if t0 is None:
        t0 = 4.0 * grid.dx**2 / nu
    if math.sqrt(nu * t0) < 2.0 * grid.dx * (1.0 - 1e-12):
        raise LabResolutionError(
            "Initial kernel not resolved",
            [("t0", f"sqrt(nu t0)={math.sqrt(nu * t0)} < 2 dx")],
        )
    values = heat_kernel(nu, t0, grid.x, grid.L)
    return GridField(values=np.asarray(values), t=t0, grid=grid)


def laplacian(values: np.ndarray, dx: float) -> np.ndarray:
    """Periodic second difference along the last axis."""
    return (np.roll(values, -1, axis=-1) - 2.0 * values + np.roll(values, 1, axis=-1)) / (
        dx * dx
    )


def flux_divergence(
    flux: np.ndarray, velocity: np.ndarray, values: np.ndarray, flux_form: str
) -> np.ndarray:
    """Face-flux difference of values * dW in conservation form (d/dy times dx)."""
    if flux_form == FLUX_UPWIND:
        # face j+1/2 carries the average increment
        face = 0.5 * (velocity + np.roll(velocity, -1, axis=-1))
        face_flux = np.where(face > 0, face * values, face * np.roll(values, -1, axis=-1))
        return face_flux - np.roll(face_flux, 1, axis=-1)
    return 0.5 * (np.roll(flux, -1, axis=-1) - np.roll(flux, 1, axis=-1))


def _check_finite(values: np.ndarray, time_index: int) -> None:
    if not np.all(np.isfinite(values)):
        _LOGGER.error("Non-finite values at time index %s", time_index)
        raise LabBlowUpError(
            f"Blow-up detected at time index {time_index}", time_index=time_index
        )


def _count_undershoot(values: np.ndarray) -> int:
    peak = np.max(np.abs(values))
    return int(np.count_nonzero(values < -NEGATIVE_UNDERSHOOT * peak))


def step_transport(
    state: GridField,
    dW: FieldIncrement,
    p: ScaleParams,
    lambda_term: float,
    scheme: SpdeScheme,
) -> GridField:
    """One explicit Euler-Maruyama step of the (tilted) transport SPDE.

    values += dt (nu/2) Lap(values) + lambda_term values dW - D_y(values dW),
    with dW multiplying the pre-step values. With lambda_term = 0 the mass is
    conserved exactly on the periodic grid.

    Raises:
        LabValidationError: If the CFL condition fails
        LabBlowUpError: If the update is not finite
    """
    grid = state.grid
    dt, dx = grid.dt, grid.dx
    scheme.check_cfl(dt, dx)
    v = state.values
    dw = dW.values
    flux = v * dw
    update = (
        v
        + dt * (0.5 * p.nu) * laplacian(v, dx)
        - flux_divergence(flux, dw, v, scheme.flux_form) / dx
    )
    if lambda_term != 0.0:
        update = update + lambda_term * flux
    _check_finite(update, dW.time_index)
    return GridField(values=update, t=state.t + dt, grid=grid)


def step_she(
    state: GridField,
    xi: np.ndarray,
    kappa: float,
    nu: float,
    scheme: SpdeScheme,
    time_index: int = 0,
) -> GridField:
    """One explicit step of the stochastic heat equation.

    values_j += dt (nu/2) Lap_j + kappa values_j xi_j / dx.
    """
    grid = state.grid
    dt, dx = grid.dt, grid.dx
    scheme.check_cfl(dt, dx)
    v = state.values
    update = v + dt * (0.5 * nu) * laplacian(v, dx) + kappa * v * xi / dx
    _check_finite(update, time_index)
    return GridField(values=update, t=state.t + dt, grid=grid)


def spectral_shift(values: np.ndarray, shift: float, dx: float) -> np.ndarray:
    """Periodic band-limited evaluation out(y) = values(y + shift)."""
    nx = values.shape[-1]
    k = 2.0 * math.pi * fft.rfftfreq(nx, d=dx)
    spectrum = fft.rfft(values, axis=-1) * np.exp(1j * k * shift)
    return fft.irfft(spectrum, n=nx, axis=-1)


def tilt_kernel(u: GridField, lam: float, nu: float) -> GridField:
    """Tilt an original-frame kernel: e^(nu lam^2 t/2 + lam y) u(y + lam nu t).

    Raises:
        LabWindowError: If the shift exceeds half the domain
    """
    if lam == 0.0:
        return GridField(values=np.array(u.values, copy=True), t=u.t, grid=u.grid)
    grid = u.grid
    shift = lam * nu * u.t
    if abs(shift) > 0.5 * grid.L:
        raise LabWindowError(
            "Tilted window leaves the resolved region",
            [("grid.L", f"shift {shift} exceeds L/2={0.5 * grid.L}")],
        )
    y = grid.x
    shifted = spectral_shift(u.values, shift, grid.dx)
    source = y + shift
    inside = (source >= -grid.L) & (source < grid.L)
    factor = np.exp(0.5 * nu * lam * lam * u.t + lam * y)
    values = np.where(inside, factor * shifted, 0.0)
    return GridField(values=values, t=u.t, grid=grid)


def inner_products(
    f: GridField, g: GridField, rho_eps: tuple[np.ndarray, np.ndarray]
) -> dict[str, Any]:
    """Plain and mollified L2 inner products.

    Args:
        f: First field
        g: Second field on the same grid
        rho_eps: Mollifier stencil (offsets, weights) from noise.mollifier_stencil

    Returns:
        Dictionary with ``l2`` and ``l2_mollified``
    """
    if f.grid != g.grid:
        raise LabValidationError("Fields live on different grids")
    dx = f.grid.dx
    offsets, weights = rho_eps
    fm = circular_convolve(f.values, offsets, weights * dx)
    gm = circular_convolve(g.values, offsets, weights * dx)
    return {
        "l2": np.sum(f.values * g.values, axis=-1) * dx,
        "l2_mollified": np.sum(fm * gm, axis=-1) * dx,
    }


@dataclass
class EnsembleRun:
    """Snapshots and mass series of an ensemble run."""

    snapshots: dict[float, GridField] = field(default_factory=dict)
    mass_times: list[float] = field(default_factory=list)
    mass_mean: list[float] = field(default_factory=list)
    mass_var: list[float] = field(default_factory=list)
    undershoot_cells: int = 0


def _step_count(t_start: float, t_end: float, dt: float) -> int:
    return max(int(round((t_end - t_start) / dt)), 0)


def solve_transport(
    grid: NoiseGrid,
    cov: CovarianceSpec,
    p: ScaleParams,
    times: list[float],
    replicas: int,
    lambda_term: float = 0.0,
    scheme: SpdeScheme | None = None,
    t0: float | None = None,
) -> EnsembleRun:
    """Step a replica ensemble of the transport SPDE to the output times.

    Replica r of the block uses row r of each white-noise slice keyed by the
    grid seed, so the run is a pure function of (grid, replicas).

    Args:
        grid: Noise grid (its seed keys the block)
        cov: Covariance specification
        p: Scale parameters
        times: Output times, increasing
        replicas: Replicas stepped in lockstep
        lambda_term: Tilt coefficient lambda (0 for the untilted kernel)
        scheme: Explicit scheme, default conservative central with nu/2
        t0: Start time of the smoothed delta

    Returns:
        Ensemble run with snapshots at the output times
    """
    scheme = scheme or SpdeScheme.for_nu(p.nu)
    start = init_delta(grid, p.nu, t0)
    state = GridField(
        values=np.tile(start.values, (replicas, 1)), t=start.t, grid=grid
    )
    run = EnsembleRun()
    step = 0
    for t_out in sorted(times):
        for _ in range(_step_count(state.t, t_out, grid.dt)):
            xi = sample_white_increments(grid, step, replicas)
            dW = mollify(grid, xi, cov, p, step)
            state = step_transport(state, dW, p, lambda_term, scheme)
            step += 1
        run.undershoot_cells += _count_undershoot(state.values)
        mass = state.mass
        run.mass_times.append(t_out)
        run.mass_mean.append(float(np.mean(mass)))
        run.mass_var.append(float(np.var(mass, ddof=1)) if replicas > 1 else 0.0)
        run.snapshots[t_out] = GridField(values=state.values, t=t_out, grid=grid)
        _LOGGER.debug(
            "Transport ensemble reached t=%s, mean mass %s, negative mass %s",
            t_out,
            run.mass_mean[-1],
            float(np.mean(state.negative_mass)),
        )
    return run


def solve_she(
    grid: NoiseGrid,
    kappa: float,
    nu: float,
    times: list[float],
    replicas: int,
    scheme: SpdeScheme | None = None,
    t0: float | None = None,
) -> EnsembleRun:
    """Step a replica ensemble of the stochastic heat equation."""
    scheme = scheme or SpdeScheme.for_nu(nu)
    start = init_delta(grid, nu, t0)
    state = GridField(
        values=np.tile(start.values, (replicas, 1)), t=start.t, grid=grid
    )
    run = EnsembleRun()
    step = 0
    for t_out in sorted(times):
        for _ in range(_step_count(state.t, t_out, grid.dt)):
            xi = sample_white_increments(grid, step, replicas)
            state = step_she(state, xi, kappa, nu, scheme, step)
            step += 1
        mass = state.mass
        run.mass_times.append(t_out)
        run.mass_mean.append(float(np.mean(mass)))
        run.mass_var.append(float(np.var(mass, ddof=1)) if replicas > 1 else 0.0)
        run.snapshots[t_out] = GridField(values=state.values, t=t_out, grid=grid)
    return run


def log_height(z: GridField, floor: float = 1e-300) -> tuple[GridField, int]:
    """Log transform h = log Z of an SHE field with a count of clipped cells."""
    clipped = int(np.count_nonzero(z.values <= floor))
    values = np.log(np.maximum(z.values, floor))
    return GridField(values=values, t=z.t, grid=z.grid), clipped


def fit_l2_growth(times: Any, values: Any) -> tuple[float, float]:
    """Fit an envelope C t^(-1/2) e^(c t) dominating the given L2 norms.

    The rate c comes from least squares on log(v sqrt(t)); C is then the
    smallest constant making the envelope an upper bound.

    Returns:
        Tuple (C, c)
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if np.any(t <= 0) or np.any(v <= 0):
        raise LabDomainError("L2 growth fit needs positive times and values")
    target = np.log(v * np.sqrt(t))
    design = np.vstack([np.ones_like(t), t]).T
    (_, c), *_ = np.linalg.lstsq(design, target, rcond=None)
    C = float(np.max(v * np.sqrt(t) * np.exp(-c * t)))
    return C, float(c)
