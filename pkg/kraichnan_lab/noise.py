"""Seeded space-time white noise and mollified fields for Kraichnan flow lab."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft, integrate

from .const import (
    DEFAULT_SEED,
    DIRECT_CONVOLUTION_MAX,
    MIN_CELLS_PER_EPS,
    RNG_PHILOX,
    RNG_SCHEMES,
)
from .covariance import CovarianceSpec, ScaleParams, rho_eps_values
from .errors import LabResolutionError, LabValidationError

_LOGGER = logging.getLogger(__name__)

_UINT64_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class NoiseGrid:
    """Periodic space-time grid on [-L, L) carrying the white noise."""

    L: float
    nx: int
    dt: float
    seed: int = DEFAULT_SEED
    rng_scheme: str = RNG_PHILOX

    def __post_init__(self) -> None:
        """Validate grid geometry."""
        issues = []
        if not self.L > 0:
            issues.append(("grid.L", "must be positive"))
        if self.nx < 4:
            issues.append(("grid.nx", "must be at least 4"))
        if not self.dt > 0:
            issues.append(("grid.dt", "must be positive"))
        if self.rng_scheme not in RNG_SCHEMES:
            issues.append(("noise.rng_scheme", f"unknown scheme {self.rng_scheme!r}"))
        if issues:
            raise LabValidationError("Invalid noise grid", issues)

    @property
    def dx(self) -> float:
        """Spatial cell width."""
        return 2.0 * self.L / self.nx

    @property
    def x(self) -> np.ndarray:
        """Cell positions -L + j dx."""
        return -self.L + self.dx * np.arange(self.nx)

    def with_seed(self, seed: int) -> NoiseGrid:
        """Same geometry driven by another seed."""
        return NoiseGrid(self.L, self.nx, self.dt, seed, self.rng_scheme)


@dataclass(frozen=True, eq=False)
class FieldIncrement:
    """Increments W^eps(t + dt, x_j) - W^eps(t, x_j) on the grid."""

    values: np.ndarray = field(repr=False)
    eps: float
    time_index: int


def derive_seed(seed: int, *keys: int) -> int:
    """Derive an independent 64-bit key from a base seed and integer keys."""
    seq = np.random.SeedSequence(seed & _UINT64_MASK, spawn_key=tuple(keys))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def counter_generator(seed: int, counter: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, counter)."""
    key = np.array([seed & _UINT64_MASK, counter & _UINT64_MASK], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_white_increments(
    grid: NoiseGrid, time_index: int, replicas: int | None = None
) -> np.ndarray:
    """Draw the white-noise increments of step time_index.

    Increments are N(0, dt dx), a pure function of (seed, time_index, cell).
    With ``replicas`` the result has shape (replicas, nx) and row r is the
    r-th replica of the block keyed by the grid seed; row 0 equals the
    single-replica draw.

    Args:
        grid: Noise grid
        time_index: Step index k >= 0
        replicas: Optional number of replicas in the block

    Returns:
        Array of increments
    """
    if time_index < 0:
        raise LabValidationError(
            "Invalid time index", [("time_index", "must be non-negative")]
        )
    rng = counter_generator(grid.seed, time_index)
    shape = grid.nx if replicas is None else (replicas, grid.nx)
    return rng.standard_normal(shape) * math.sqrt(grid.dt * grid.dx)


def check_resolution(grid: NoiseGrid, eps: float) -> None:
    """Raise if the mollifier at scale eps is not resolved by the grid."""
    if eps < MIN_CELLS_PER_EPS * grid.dx:
        raise LabResolutionError(
            "Mollifier not resolved by the grid",
            [("grid.nx", f"eps={eps} < {MIN_CELLS_PER_EPS} dx={grid.dx}")],
        )


def mollifier_stencil(
    grid: NoiseGrid, cov: CovarianceSpec, p: ScaleParams
) -> tuple[np.ndarray, np.ndarray]:
    """Offsets and weights rho_eps(m dx) of the discrete mollifier.

    Returns:
        Tuple of (integer offsets, weights)
    """
    check_resolution(grid, p.eps)
    half = int(math.ceil(p.eps / grid.dx))
    offsets = np.arange(-half, half + 1)
    weights = np.asarray(rho_eps_values(cov, p, offsets * grid.dx), dtype=float)
    return offsets, weights


def circular_convolve(
    values: np.ndarray, offsets: np.ndarray, weights: np.ndarray
) -> np.ndarray:
    """Periodic convolution out[j] = sum_m w_m values[j - m] along the last axis."""
    nx = values.shape[-1]
    if len(offsets) <= DIRECT_CONVOLUTION_MAX:
        out = np.zeros_like(values, dtype=float)
        for m, w in zip(offsets, weights):
            if w != 0.0:
                out += w * np.roll(values, int(m), axis=-1)
        return out

    kernel = np.zeros(nx)
    kernel[np.mod(offsets, nx)] += weights
    spectrum = fft.rfft(values, axis=-1) * fft.rfft(kernel)
    return fft.irfft(spectrum, n=nx, axis=-1)


def mollify(
    grid: NoiseGrid,
    xi: np.ndarray,
    cov: CovarianceSpec,
    p: ScaleParams,
    time_index: int = 0,
) -> FieldIncrement:
    """Mollify white increments into W^eps increments, W^eps = rho_eps * W.

    Args:
        grid: Noise grid the increments live on
        xi: White increments, shape (nx,) or (replicas, nx)
        cov: Covariance specification
        p: Scale parameters
        time_index: Step index carried on the result

    Returns:
        Field increment with variance dt C^eps(0) per cell

    Raises:
        LabResolutionError: If eps < 4 dx
    """
    offsets, weights = mollifier_stencil(grid, cov, p)
    values = circular_convolve(np.asarray(xi, dtype=float), offsets, weights)
    return FieldIncrement(values=values, eps=p.eps, time_index=time_index)


def coupled_family(
    grid: NoiseGrid,
    time_index: int,
    cov: CovarianceSpec,
    params: list[ScaleParams],
    replicas: int | None = None,
) -> list[FieldIncrement]:
    """Mollify one white-noise slice at every scale in params.

    All fields come from the same increments, which couples the W^eps.
    """
    for p in params:
        check_resolution(grid, p.eps)
    xi = sample_white_increments(grid, time_index, replicas)
    return [mollify(grid, xi, cov, p, time_index) for p in params]


def cross_covariance(cov: CovarianceSpec, p1: ScaleParams, p2: ScaleParams) -> float:
    """Integral of rho_eps1 rho_eps2, the per-unit-time field cross covariance."""
    reach = min(p1.eps, p2.eps)
    value, _ = integrate.quad(
        lambda z: rho_eps_values(cov, p1, z) * rho_eps_values(cov, p2, z),
        -reach,
        reach,
        limit=400,
        epsabs=1e-13,
    )
    return float(value)


def dump_noise_slice(grid: NoiseGrid, time_index: int, path: Path) -> Path:
    """Write one white-noise slice as little-endian float64, row-major."""
    xi = sample_white_increments(grid, time_index)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    xi.astype("<f8").tofile(path)
    _LOGGER.info("Dumped noise slice %s to %s", time_index, path)
    return path
