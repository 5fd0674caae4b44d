"""Deterministic solvers for the separation density for Kraichnan flow lab."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, sparse, special
from scipy.sparse import linalg as sparse_linalg

from .const import (
    ARONSON_FLOOR,
    ARONSON_QUANTILE,
    ARONSON_SLACK,
    DEFAULT_DUHAMEL_MAX_ITER,
    DEFAULT_DUHAMEL_TOL,
    DEFAULT_VOLTERRA_RESOLUTION,
    Q_CELLS_PER_EPS,
    Q_NEGATIVE_TOL,
    Q_STARTUP_STEPS,
)
from .covariance import CovarianceSpec, ScaleParams, a_eps, scaled_covariance
from .errors import (
    LabDivergenceError,
    LabDomainError,
    LabInstabilityError,
    LabResolutionError,
    LabValidationError,
)
from .noise import NoiseGrid
from .spde import GridField, heat_kernel

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class QSolution:
    """Density of the signed separation at time t."""

    values: GridField = field(repr=False)
    lam: float
    t: float
    q0: float
    mass: float
    iterations: int = 0


@dataclass(frozen=True)
class VolterraResult:
    """Value of a Volterra oracle with its refinement error estimate."""

    value: float
    error: float


@dataclass(frozen=True)
class AronsonFit:
    """Fitted Gaussian envelope C t^(-1/2) exp(-c y^2 / 2t)."""

    c: float
    C: float
    violations: int
    c_normalized: float


def _check_grid(grid: NoiseGrid, p: ScaleParams) -> None:
    if grid.dx > p.eps / Q_CELLS_PER_EPS * (1.0 + 1e-12):
        raise LabResolutionError(
            "Grid does not resolve the potential well",
            [("grid.nx", f"dx={grid.dx} > eps/{Q_CELLS_PER_EPS}")],
        )
    if grid.nx % 2:
        raise LabResolutionError(
            "Grid must contain the origin", [("grid.nx", "must be even")]
        )


class QPropagator:
    """Crank-Nicolson propagator for dq/dt = d^2/dy^2 (a_eps q) on the periodic grid.

    The potential lambda^2 C^eps is applied as half-step exponentials
    before and after each diffusion step. Steps with index below
    Q_STARTUP_STEPS are taken as two implicit Euler half steps, so rough
    data (the narrow start density, point sources) does not ring.
    """

    def __init__(self, cov: CovarianceSpec, p: ScaleParams, grid: NoiseGrid, lam: float):
        """Initialize the propagator.

        Args:
            cov: Covariance specification
            p: Scale parameters
            grid: Periodic grid (geometry and time step)
            lam: Tilt entering the potential (0 disables it)
        """
        _check_grid(grid, p)
        self.grid = grid
        self.lam = lam
        x = grid.x
        self.potential = lam * lam * np.asarray(scaled_covariance(cov, p, x))
        self.half = np.exp(0.5 * grid.dt * self.potential)

        a = np.asarray(a_eps(cov, p, x), dtype=float)
        nx = grid.nx
        shift_up = sparse.diags([np.ones(nx - 1), [1.0]], [1, -(nx - 1)], shape=(nx, nx))
        shift_down = shift_up.T
        second = (shift_up + shift_down - 2.0 * sparse.identity(nx)) / grid.dx**2
        operator = second @ sparse.diags(a)
        identity = sparse.identity(nx, format="csc")
        self._right = (identity + 0.5 * grid.dt * operator).tocsr()
        self._lu = sparse_linalg.splu((identity - 0.5 * grid.dt * operator).tocsc())

    def diffuse(self, q: np.ndarray, index: int | None = None) -> np.ndarray:
        """One diffusion step (columns are independent states).

        Args:
            q: State, shape (nx,) or (nx, k)
            index: Step index counted from the rough data; None for a plain
                Crank-Nicolson step
        """
        if index is not None and index < Q_STARTUP_STEPS:
            return self._lu.solve(self._lu.solve(q))
        return self._lu.solve(self._right @ q)

    def step(self, q: np.ndarray, index: int | None = None) -> np.ndarray:
        """One split step: half potential, diffusion, half potential."""
        return self.half * self.diffuse(self.half * q, index)


def initial_density(grid: NoiseGrid, p: ScaleParams) -> tuple[np.ndarray, float]:
    """Smoothed delta at 0 with variance 4 dx^2 and its start time t0 = 2 dx^2 / nu."""
    t0 = 2.0 * grid.dx**2 / p.nu
    return np.asarray(heat_kernel(2.0 * p.nu, t0, grid.x, grid.L)), t0


def _center(grid: NoiseGrid) -> int:
    return grid.nx // 2


def _check_negative(values: np.ndarray, t: float) -> None:
    peak = float(np.max(np.abs(values)))
    if np.min(values) < -Q_NEGATIVE_TOL * peak:
        _LOGGER.error("Negative density %s at t=%s", float(np.min(values)), t)
        raise LabInstabilityError(f"Negative density beyond tolerance at t={t}")


def _make_solution(
    grid: NoiseGrid, values: np.ndarray, lam: float, t: float, iterations: int = 0
) -> QSolution:
    return QSolution(
        values=GridField(values=values, t=t, grid=grid),
        lam=lam,
        t=t,
        q0=float(values[_center(grid)]),
        mass=float(np.sum(values) * grid.dx),
        iterations=iterations,
    )


def _steps_to(t: float, t0: float, dt: float) -> int:
    if t <= t0:
        raise LabDomainError(
            "Output time precedes the smoothed start", [("t", f"t={t} <= t0={t0}")]
        )
    return max(int(round((t - t0) / dt)), 1)


def solve_q_path(
    cov: CovarianceSpec,
    p: ScaleParams,
    times: list[float],
    grid: NoiseGrid,
    lam: float,
) -> list[QSolution]:
    """Solve the (weighted) separation density up to each output time.

    Args:
        cov: Covariance specification
        p: Scale parameters
        times: Output times, increasing
        grid: Periodic grid; its dt is the time step
        lam: Tilt entering the potential

    Returns:
        One QSolution per output time
    """
    prop = QPropagator(cov, p, grid, lam)
    q, t0 = initial_density(grid, p)
    done = 0
    out = []
    for t in sorted(times):
        target = _steps_to(t, t0, grid.dt)
        for n in range(done, target):
            q = prop.step(q, n)
        done = target
        _check_negative(q, t)
        out.append(_make_solution(grid, q, lam, t))
    return out


def solve_q(cov: CovarianceSpec, p: ScaleParams, t: float, grid: NoiseGrid) -> QSolution:
    """Transition density q(t; 0, .) of the separation D."""
    return solve_q_path(cov, p, [t], grid, 0.0)[0]


def solve_q_lambda(
    cov: CovarianceSpec, p: ScaleParams, t: float, grid: NoiseGrid
) -> QSolution:
    """Weighted density q^lambda(t, .) with potential lambda^2 C^eps."""
    solution = solve_q_path(cov, p, [t], grid, p.lam)[0]
    _LOGGER.debug(
        "q^lambda at t=%s: q0=%s mass=%s", t, solution.q0, solution.mass
    )
    return solution


def _trapezoid_weights(n: int) -> np.ndarray:
    w = np.ones(n + 1)
    if n > 0:
        w[0] = w[-1] = 0.5
    return w


def _duhamel(
    cov: CovarianceSpec,
    p: ScaleParams,
    t: float,
    grid: NoiseGrid,
    max_iter: int,
    tol: float,
    require_convergence: bool,
) -> QSolution:
    prop = QPropagator(cov, p, grid, 0.0)
    q, t0 = initial_density(grid, p)
    steps = _steps_to(t, t0, grid.dt)
    dt = grid.dt

    potential = p.lam**2 * np.asarray(scaled_covariance(cov, p, grid.x))
    support = np.flatnonzero(potential > 0.0)
    if support.size == 0:
        support = np.array([_center(grid)])
    v_s = potential[support]

    # base[n] = (P^n q0) on the support, kernel[n] = (P^n)[S, S]
    base = np.empty((steps + 1, support.size))
    kernel = np.empty((steps + 1, support.size, support.size))
    columns = np.zeros((grid.nx, support.size))
    columns[support, np.arange(support.size)] = 1.0
    base[0] = q[support]
    kernel[0] = columns[support]
    free = q
    for n in range(1, steps + 1):
        free = prop.diffuse(free, n - 1)
        columns = prop.diffuse(columns, n - 1)
        base[n] = free[support]
        kernel[n] = columns[support]

    u = base.copy()
    residual = math.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        g = v_s * u
        new = base.copy()
        for n in range(1, steps + 1):
            w = _trapezoid_weights(n)[:, None]
            new[n] += dt * np.einsum("mij,mj->i", kernel[n::-1], w * g[: n + 1])
        residual = float(np.max(np.abs(new - u)))
        u = new
        if residual < tol:
            break
    else:
        if require_convergence:
            _LOGGER.error("Duhamel iteration stalled with residual %s", residual)
            raise LabDivergenceError(
                f"Duhamel iteration did not converge in {max_iter} iterations",
                residual=residual,
            )

    # Each source v u[m] is propagated as fresh rough data over steps - m steps
    w = _trapezoid_weights(steps)
    sources = np.zeros((grid.nx, support.size))
    sources[support, np.arange(support.size)] = 1.0
    acc = sources @ (w[steps] * v_s * u[steps])
    for k in range(1, steps + 1):
        sources = prop.diffuse(sources, k - 1)
        m = steps - k
        acc += sources @ (w[m] * v_s * u[m])
    values = free + dt * acc
    _check_negative(values, t)
    _LOGGER.debug("Duhamel converged in %s iterations (residual %s)", iterations, residual)
    return _make_solution(grid, values, p.lam, t, iterations)


def duhamel_iterate(
    cov: CovarianceSpec,
    p: ScaleParams,
    t: float,
    grid: NoiseGrid,
    max_iter: int = DEFAULT_DUHAMEL_MAX_ITER,
    tol: float = DEFAULT_DUHAMEL_TOL,
) -> QSolution:
    """Picard iteration of the Duhamel equation for q^lambda.

    The unknown is restricted to the support of C^eps, where the potential
    lives; q(.; x, y) for x in that support is propagated once and cached.

    Raises:
        LabDivergenceError: If the sup-norm change stays above tol
    """
    return _duhamel(cov, p, t, grid, max_iter, tol, require_convergence=True)


def duhamel_first_order(
    cov: CovarianceSpec, p: ScaleParams, t: float, grid: NoiseGrid
) -> QSolution:
    """q plus the first lambda^2 correction, the Duhamel term evaluated on q itself."""
    return _duhamel(cov, p, t, grid, 0, math.inf, require_convergence=False)


def _abel_weights(n: int, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Product-trapezoid moments of (t_n - s)^(-1/2) per interval distance k."""
    k = np.arange(1, n + 1, dtype=float)
    A = k * h
    B = (k - 1.0) * h
    I0 = 2.0 * (np.sqrt(A) - np.sqrt(B))
    I1 = (2.0 / 3.0) * (A**1.5 - B**1.5)
    left = (I1 - B * I0) / h
    right = I0 - left
    return left, right


def _solve_abel(forcing: float, coeff: float, t: float, n: int) -> np.ndarray:
    """Solve y(s) = forcing + coeff int_0^s (s - r)^(-1/2) y(r) dr on n panels."""
    h = t / n
    left, right = _abel_weights(n, h)
    y = np.empty(n + 1)
    y[0] = forcing
    for m in range(1, n + 1):
        j = np.arange(m)
        # node j is the left end of the panel at distance m - j
        # and the right end of the panel at distance m - j + 1
        weights = left[m - j - 1]
        weights[1:] += right[m - j[1:]]
        history = float(np.dot(weights, y[:m]))
        y[m] = (forcing + coeff * history) / (1.0 - coeff * right[0])
    return y


def _check_volterra(t: float, resolution: int) -> None:
    if t <= 0:
        raise LabDomainError("Volterra oracle needs t > 0", [("t", f"t={t}")])
    if resolution < 16:
        raise LabResolutionError(
            "Volterra resolution too coarse", [("resolution", "must be >= 16")]
        )


def she_second_moment(
    kappa: float,
    nu: float,
    t: float,
    resolution: int = DEFAULT_VOLTERRA_RESOLUTION,
) -> VolterraResult:
    """E ||Z(t)||^2 for the SHE from a delta, by product integration.

    Solves r(t) = p_t(0) + kappa^2 int_0^t p_(t-s)(0) r(s) ds with p the
    diffusivity-2nu heat kernel. The singular part is removed analytically:
    r = a t^(-1/2) + g with g bounded, a = 1 / sqrt(4 pi nu).
    """
    _check_volterra(t, resolution)
    a = 1.0 / math.sqrt(4.0 * math.pi * nu)
    forcing = kappa * kappa * a * a * math.pi
    coeff = kappa * kappa * a
    fine = _solve_abel(forcing, coeff, t, resolution)[-1]
    coarse = _solve_abel(forcing, coeff, t, resolution // 2)[-1]
    return VolterraResult(value=a / math.sqrt(t) + fine, error=abs(fine - coarse))


def she_mass_moment(
    kappa: float,
    nu: float,
    t: float,
    resolution: int = DEFAULT_VOLTERRA_RESOLUTION,
) -> VolterraResult:
    """E[exp(kappa^2 l_t)] for the ds-local time l of the separation, by product integration."""
    _check_volterra(t, resolution)
    coeff = kappa * kappa / math.sqrt(4.0 * math.pi * nu)
    fine = _solve_abel(1.0, coeff, t, resolution)[-1]
    coarse = _solve_abel(1.0, coeff, t, resolution // 2)[-1]
    return VolterraResult(value=float(fine), error=abs(fine - coarse))


def she_second_moment_exact(kappa: float, nu: float, t: float) -> float:
    """Closed form 1/sqrt(4 pi nu t) + kappa^2/(4 nu) erfcx(-b sqrt(t)).

    Here b = kappa^2/(2 sqrt(nu)).
    """
    b = kappa * kappa / (2.0 * math.sqrt(nu))
    return 1.0 / math.sqrt(4.0 * math.pi * nu * t) + kappa * kappa / (4.0 * nu) * float(
        special.erfcx(-b * math.sqrt(t))
    )


def she_mass_moment_exact(kappa: float, nu: float, t: float) -> float:
    """Closed form erfcx(-b sqrt(t)) of the mass moment."""
    b = kappa * kappa / (2.0 * math.sqrt(nu))
    return float(special.erfcx(-b * math.sqrt(t)))


def volterra_first_order(kappa: float, nu: float, t: float) -> float:
    """p_t(0) + kappa^2 int_0^t p_(t-s)(0) p_s(0) ds = 1/sqrt(4 pi nu t) + kappa^2/(4 nu)."""
    return 1.0 / math.sqrt(4.0 * math.pi * nu * t) + kappa * kappa / (4.0 * nu)


def heat_second_moment(nu: float, t: float) -> float:
    """p_2t(0) = 1/sqrt(4 pi nu t), the limit of q^lambda(t, 0) in weak disorder."""
    return 1.0 / math.sqrt(4.0 * math.pi * nu * t)


def smoothing_error(qlam: QSolution, cov: CovarianceSpec, eps: float) -> float:
    """Second moment of V - V * (normalized rho_eps) from q^lambda.

    Evaluates 2 int (q(0) - q(eps y)) rho(y) dy + int (q(eps y) - q(0)) (rho*rho)(y) dy
    with rho normalized to unit mass.
    """
    mass = cov.rho.mass
    if mass <= 0:
        raise LabValidationError(
            "Smoothing error needs a non-trivial mollifier", [("mollifier.mass", "0")]
        )
    grid = qlam.values.grid
    values = qlam.values.values
    q_at_zero = float(np.interp(0.0, grid.x, values))
    q_rho = np.interp(eps * cov.y, grid.x, values)
    q_c = np.interp(eps * cov.z, grid.x, values)
    first = integrate.simpson((q_at_zero - q_rho) * cov.rho_table / mass, x=cov.y)
    second = integrate.simpson((q_c - q_at_zero) * cov.C / mass**2, x=cov.z)
    return float(2.0 * first + second)


def aronson_check(
    solutions: list[QSolution], core: float = 0.0, sigma: float | None = None
) -> AronsonFit:
    """Fit a Gaussian upper envelope to q over a (t, y) grid.

    The rate c is the slowest Gaussian tail decay seen across times,
    fitted on |y| > core; C is the 99.9th percentile of
    q sqrt(t) exp(c y^2 / 2t). Points exceeding the envelope by more than
    the slack are counted as violations.

    Args:
        solutions: q at several times (lambda = 0)
        core: Half-width excluded from the tail fit (a few eps)
        sigma: Molecular noise level; reports 2 sigma^2 c, which lies in
            [sigma^2/nu, 1] when the bound holds with the predicted rates

    Returns:
        Fitted constants and violation count
    """
    if not solutions:
        raise LabValidationError("No solutions to fit")
    rates = []
    samples = []
    for sol in solutions:
        grid = sol.values.grid
        x = grid.x
        q = sol.values.values
        t = sol.t
        keep = (q > ARONSON_FLOOR * np.max(q)) & (np.abs(x) < 0.5 * grid.L)
        tail = keep & (np.abs(x) > core)
        slope, _ = np.polyfit(x[tail] ** 2, np.log(q[tail]), 1)
        rates.append(-2.0 * t * slope)
        samples.append((t, x[keep], q[keep]))
    c = float(min(rates))
    ratios = np.concatenate(
        [q * math.sqrt(t) * np.exp(c * x * x / (2.0 * t)) for t, x, q in samples]
    )
    C = float(np.quantile(ratios, ARONSON_QUANTILE))
    violations = int(np.count_nonzero(ratios > C * (1.0 + ARONSON_SLACK)))
    normalized = 2.0 * sigma * sigma * c if sigma else float("nan")
    _LOGGER.info("Aronson fit c=%s C=%s violations=%s", c, C, violations)
    return AronsonFit(c=c, C=C, violations=violations, c_normalized=normalized)


def modulus_of_continuity(q: QSolution, radius: float = 1.0, delta: float = 0.05) -> float:
    """max |q(y') - q(y)| over |y|, |y'| <= radius with |y - y'| <= delta."""
    grid = q.values.grid
    x = grid.x
    values = q.values.values
    inside = np.abs(x) <= radius
    window = values[inside]
    reach = max(int(delta / grid.dx), 1)
    best = 0.0
    for k in range(1, reach + 1):
        best = max(best, float(np.max(np.abs(window[k:] - window[:-k]))))
    return best
