"""Experiment runners for Kraichnan flow lab."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import partial
from pathlib import Path
from typing import Any

import numpy as np
from scipy import integrate, optimize, stats

from . import __version__
from .config import config_hash, covariance_for, load_config
from .const import (
    COMMAND_QPDE,
    COMMAND_SPDE,
    COMMAND_TWO_POINT,
    CONF_ALPHA,
    CONF_BETA,
    CONF_BLOCK_SIZE,
    CONF_DT,
    CONF_EPS,
    CONF_EPS_LIST,
    CONF_FLUX_FORM,
    CONF_KAPPA_TARGET,
    CONF_KIND,
    CONF_L,
    CONF_LAMBDA,
    CONF_MU,
    CONF_NU_TARGET,
    CONF_NX,
    CONF_REPLICAS,
    CONF_RNG_SCHEME,
    CONF_SEED,
    CONF_SIGMA,
    CONF_STABILITY_FACTOR,
    CONF_STRENGTHS,
    CONF_TIMES,
    CONF_WORKERS,
    DEFAULT_ALPHA_RANGE,
    DEFAULT_BETA_RANGE,
    DEFAULT_CRITICAL_POINT,
    DEFAULT_EPS_LIST,
    DEFAULT_GRID_POINTS,
    DEFAULT_HIST_BINS,
    DEFAULT_KAPPA_TARGET,
    DEFAULT_NU_TARGET,
    DEFAULT_PROXY_FACTOR,
    DEFAULT_WEAK_POINT,
    FIELD_QUANTILES,
    FILE_CRITICAL_LINE,
    FILE_DIFFERENCE_HIST,
    FILE_FIELD_TEMPLATE,
    FILE_MASS_SERIES,
    FILE_MOMENTS,
    FILE_OBSERVABLES,
    FILE_PHASE_SWEEP,
    FILE_Q_LAMBDA,
    FILE_STRONG_DISORDER,
    FILE_WEAK_DISORDER,
    KIND_CRITICAL_LINE,
    KIND_MEAN_KERNEL,
    KIND_PHASE_SWEEP,
    KIND_SECOND_MOMENT,
    KIND_STRONG_DISORDER,
    KIND_WEAK_DISORDER,
    MASS_ESCAPE_LEVEL,
    OBSERVABLES,
    Q_CELLS_PER_EPS,
    Q_DIFFUSION_NUMBER,
    SECTION_EXPERIMENT,
    SECTION_GRID,
    SECTION_NOISE,
    SECTION_SCHEDULE,
    SECTION_SCHEME,
)
from .coordinator import Cell, CellResult, ExperimentCoordinator
from .covariance import CovarianceSpec, ScaleParams, make_scale_params
from .errors import LabDomainError, LabPartialFailure, LabValidationError
from .noise import NoiseGrid, circular_convolve, derive_seed
from .particles import (
    MonteCarloEstimate,
    feynman_kac_moment,
    gaussian_delta_proxy,
    occupation_time,
    run_difference,
    run_two_point,
)
from .persistence import write_covariance, write_csv, write_manifest
from .qpde import heat_second_moment, she_second_moment, solve_q, solve_q_path
from .regime import (
    RegimePoint,
    ScheduleTemplate,
    classify_regime,
    hypothesis_check,
    phase_sweep,
    schedule,
)
from .spde import SpdeScheme, heat_kernel, solve_transport

_LOGGER = logging.getLogger(__name__)

# Seed streams keeping the field blocks and particle ensembles independent
STREAM_FIELD = 0
STREAM_TWO_POINT = 1
STREAM_DIFFERENCE = 2


@dataclass(frozen=True)
class Observable:
    """Named estimate with its standard error."""

    name: str
    value: float
    se: float
    eps: float | None = None
    t: float | None = None
    strength: float | None = None


@dataclass
class Table:
    """Rows of one CSV output."""

    header: list[str]
    rows: list[list[Any]] = field(default_factory=list)


@dataclass
class RunResult:
    """What a kind runner hands back to the record."""

    observables: list[Observable] = field(default_factory=list)
    tables: dict[str, Table] = field(default_factory=dict)
    failed: list[str] = field(default_factory=list)


@dataclass
class ExperimentRecord:
    """Outcome of one experiment run."""

    config_hash: str
    seed: int
    kind: str
    regime_label: str
    observables: list[Observable] = field(default_factory=list)
    tables: dict[str, Table] = field(default_factory=dict)
    started: str = ""
    finished: str = ""
    failed: list[str] = field(default_factory=list)

    def observable(
        self,
        name: str,
        eps: float | None = None,
        t: float | None = None,
        strength: float | None = None,
    ) -> Observable:
        """First observable matching name and, when given, eps, t and strength.

        Raises:
            KeyError: If nothing matches
        """
        for obs in self.observables:
            if obs.name != name:
                continue
            if eps is not None and (obs.eps is None or not math.isclose(obs.eps, eps)):
                continue
            if t is not None and (obs.t is None or not math.isclose(obs.t, t)):
                continue
            if strength is not None and (
                obs.strength is None or not math.isclose(obs.strength, strength)
            ):
                continue
            return obs
        raise KeyError(f"No observable {name} (eps={eps}, t={t}, strength={strength})")

    def summary(self) -> dict[str, Any]:
        """Manifest fields of the record."""
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "kind": self.kind,
            "regime_label": self.regime_label,
            "started": self.started,
            "finished": self.finished,
            "failed": list(self.failed),
        }


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def grid_of(config: dict[str, dict[str, Any]]) -> NoiseGrid:
    """Noise grid described by the grid and noise sections."""
    grid = config[SECTION_GRID]
    noise = config[SECTION_NOISE]
    return NoiseGrid(
        L=grid[CONF_L],
        nx=grid[CONF_NX],
        dt=grid[CONF_DT],
        seed=noise[CONF_SEED],
        rng_scheme=noise[CONF_RNG_SCHEME],
    )


def q_grid(config: dict[str, dict[str, Any]], p: ScaleParams) -> NoiseGrid:
    """Grid for the deterministic solvers, refined to at least 8 cells per eps.

    The configured dt is divided by the smallest integer that keeps
    nu dt / dx^2 at or below Q_DIFFUSION_NUMBER, so configured output
    times stay on whole steps.
    """
    grid = grid_of(config)
    needed = int(math.ceil(2.0 * grid.L * Q_CELLS_PER_EPS / p.eps))
    nx = max(grid.nx, needed + needed % 2)
    dx = 2.0 * grid.L / nx
    substeps = max(int(math.ceil(grid.dt * p.nu / (Q_DIFFUSION_NUMBER * dx * dx))), 1)
    if substeps > 1:
        _LOGGER.debug("q grid eps=%s: nx=%s, dt split into %s substeps", p.eps, nx, substeps)
    return NoiseGrid(
        L=grid.L, nx=nx, dt=grid.dt / substeps, seed=grid.seed, rng_scheme=grid.rng_scheme
    )


def scheme_of(config: dict[str, dict[str, Any]], p: ScaleParams) -> SpdeScheme:
    """Explicit scheme from the scheme section."""
    section = config[SECTION_SCHEME]
    return SpdeScheme.for_nu(
        p.nu,
        flux_form=section[CONF_FLUX_FORM],
        stability_factor=section[CONF_STABILITY_FACTOR],
    )


def fixed_params(
    config: dict[str, dict[str, Any]], cov: CovarianceSpec, eps: float | None = None
) -> ScaleParams:
    """Scale parameters taken literally from the schedule section."""
    section = config[SECTION_SCHEDULE]
    return make_scale_params(
        cov,
        section[CONF_EPS] if eps is None else eps,
        section[CONF_MU],
        section[CONF_SIGMA],
        section[CONF_LAMBDA],
        section[CONF_ALPHA] or 0.0,
        section[CONF_BETA] or 0.0,
    )


def point_of(
    config: dict[str, dict[str, Any]], default: tuple[float, float] = (0.0, 0.0)
) -> RegimePoint:
    """Phase point of the schedule section, or the given default."""
    section = config[SECTION_SCHEDULE]
    if section[CONF_ALPHA] is None:
        return RegimePoint.from_exponents(*default)
    return RegimePoint.from_exponents(section[CONF_ALPHA], section[CONF_BETA])


def scheduled_params(
    config: dict[str, dict[str, Any]],
    cov: CovarianceSpec,
    default_point: tuple[float, float],
    eps_list: list[float] | None = None,
    kappa_target: float | None = None,
    nu_target: float | None = None,
) -> list[ScaleParams]:
    """Schedule along the configured (or default) eps list and phase point."""
    section = config[SECTION_SCHEDULE]
    eps_list = eps_list or section[CONF_EPS_LIST] or list(DEFAULT_EPS_LIST)
    template = ScheduleTemplate(
        mu=section[CONF_MU],
        sigma=section[CONF_SIGMA],
        lam=section[CONF_LAMBDA],
        kappa_target=section[CONF_KAPPA_TARGET] if kappa_target is None else kappa_target,
        nu_target=section[CONF_NU_TARGET] if nu_target is None else nu_target,
    )
    return schedule(point_of(config, default_point), eps_list, template, cov)


def _blocks(replicas: int, block_size: int) -> list[int]:
    full, rest = divmod(replicas, block_size)
    return [block_size] * full + ([rest] if rest else [])


def _transport_block(
    grid: NoiseGrid,
    cov: CovarianceSpec,
    p: ScaleParams,
    times: list[float],
    replicas: int,
    lambda_term: float,
    scheme: SpdeScheme,
) -> dict[float, np.ndarray]:
    run = solve_transport(grid, cov, p, times, replicas, lambda_term, scheme)
    return {t: run.snapshots[t].values for t in times}


def _raise_if_all_failed(results: list[CellResult]) -> None:
    if results and not any(result.ok for result in results):
        raise results[0].error


def transport_ensemble(
    config: dict[str, dict[str, Any]],
    cov: CovarianceSpec,
    p: ScaleParams,
    lambda_term: float,
    coordinator: ExperimentCoordinator,
    times: list[float] | None = None,
    replicas: int | None = None,
) -> tuple[dict[float, np.ndarray], list[str], int]:
    """Run the SPDE ensemble in replica blocks on the worker pool.

    Block b is driven by the seed derived from (seed, field stream, b), so the
    merged ensemble does not depend on the number of workers.

    Returns:
        Tuple (per-time stacks of shape (replicas_ok, nx), failed block keys,
        excluded replica count)
    """
    grid = grid_of(config)
    scheme = scheme_of(config, p)
    times = sorted(times or config[SECTION_EXPERIMENT][CONF_TIMES])
    replicas = replicas or config[SECTION_EXPERIMENT][CONF_REPLICAS]
    sizes = _blocks(replicas, config[SECTION_NOISE][CONF_BLOCK_SIZE])
    cells = [
        Cell(
            index=b,
            key=f"eps={p.eps}:lambda={lambda_term}:block={b}",
            func=partial(
                _transport_block,
                grid.with_seed(derive_seed(grid.seed, STREAM_FIELD, b)),
                cov,
                p,
                times,
                size,
                lambda_term,
                scheme,
            ),
        )
        for b, size in enumerate(sizes)
    ]
    results = coordinator.run(cells)
    _raise_if_all_failed(results)
    ok = [result.value for result in results if result.ok]
    failed = [result.key for result in results if not result.ok]
    excluded = sum(sizes[result.index] for result in results if not result.ok)
    if excluded:
        _LOGGER.warning("Excluded %s replicas from %s failed blocks", excluded, len(failed))
    stacks = {t: np.vstack([block[t] for block in ok]) for t in times}
    return stacks, failed, excluded


def _field_table(grid: NoiseGrid, values: np.ndarray) -> Table:
    quantiles = np.quantile(values, FIELD_QUANTILES, axis=0)
    variance = values.var(axis=0, ddof=1) if len(values) > 1 else np.zeros(grid.nx)
    header = ["y", "mean", "variance", *(f"q{int(round(100 * q)):02d}" for q in FIELD_QUANTILES)]
    rows = [
        [x, m, v, *qs]
        for x, m, v, qs in zip(grid.x, values.mean(axis=0), variance, quantiles.T)
    ]
    return Table(header, rows)


def _mass_table(grid: NoiseGrid, stacks: dict[float, np.ndarray]) -> Table:
    table = Table(["t", "mean_mass", "var_mass"])
    for t, values in stacks.items():
        mass = values.sum(axis=1) * grid.dx
        var = float(np.var(mass, ddof=1)) if len(mass) > 1 else 0.0
        table.rows.append([t, float(np.mean(mass)), var])
    return table


def smoothed_square_norm(values: np.ndarray, grid: NoiseGrid, h: float) -> np.ndarray:
    """int int V(y) V(y') phi_h(y - y') dy dy' with phi_h a Gaussian of width h."""
    reach = int(math.ceil(6.0 * h / grid.dx))
    offsets = np.arange(-reach, reach + 1)
    weights = gaussian_delta_proxy(h)(offsets * grid.dx) * grid.dx
    smoothed = circular_convolve(values, offsets, weights)
    return np.sum(values * smoothed, axis=-1) * grid.dx


def run_mean_kernel(
    config: dict[str, dict[str, Any]], cov: CovarianceSpec, coordinator: ExperimentCoordinator
) -> RunResult:
    """Ensemble mean of the untilted kernel against the heat kernel."""
    p = fixed_params(config, cov)
    grid = grid_of(config)
    stacks, failed, _ = transport_ensemble(config, cov, p, 0.0, coordinator)
    result = RunResult(failed=failed)
    for t, values in stacks.items():
        n = len(values)
        mean = values.mean(axis=0)
        se = values.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(grid.nx)
        exact = np.asarray(heat_kernel(p.nu, t, grid.x, grid.L))
        error = np.abs(mean - exact)
        result.observables.append(
            Observable("sup_error", float(error.max()), float(se.max()), p.eps, t)
        )
        result.tables[FILE_FIELD_TEMPLATE.format(t=t)] = _field_table(grid, values)
    result.tables[FILE_MASS_SERIES] = _mass_table(grid, stacks)
    return result


def run_second_moment(
    config: dict[str, dict[str, Any]], cov: CovarianceSpec, coordinator: ExperimentCoordinator
) -> RunResult:
    """E||V(t)||^2 three ways: SPDE ensemble, two-point Feynman-Kac and the q^lambda PDE.

    The delta at zero separation is replaced by a Gaussian of width eps/2 in
    all three estimators.
    """
    p = fixed_params(config, cov)
    grid = grid_of(config)
    seed = grid.seed
    replicas = config[SECTION_EXPERIMENT][CONF_REPLICAS]
    times = sorted(config[SECTION_EXPERIMENT][CONF_TIMES])
    h = DEFAULT_PROXY_FACTOR * p.eps
    proxy = gaussian_delta_proxy(h)

    stacks, failed, _ = transport_ensemble(config, cov, p, p.lam, coordinator)
    qgrid = q_grid(config, p)
    solutions = solve_q_path(cov, p, times, qgrid, p.lam)
    result = RunResult(failed=failed)
    for i, (t, sol) in enumerate(zip(times, solutions)):
        spde = MonteCarloEstimate.from_samples(smoothed_square_norm(stacks[t], grid, h))
        path = run_two_point(cov, p, t, replicas, derive_seed(seed, STREAM_TWO_POINT, i))
        two_point = feynman_kac_moment(path, proxy)
        pde = float(np.sum(sol.values.values * proxy(qgrid.x)) * qgrid.dx)
        result.observables += [
            Observable("second_moment_spde", spde.mean, spde.se, p.eps, t),
            Observable("second_moment_twopoint", two_point.mean, two_point.se, p.eps, t),
            Observable("second_moment_pde", pde, 0.0, p.eps, t),
        ]
        _LOGGER.info(
            "Second moment at t=%s: spde %s, two-point %s, pde %s",
            t,
            spde.mean,
            two_point.mean,
            pde,
        )
    return result


def _critical_cell(
    cov: CovarianceSpec,
    p: ScaleParams,
    times: list[float],
    grid: NoiseGrid,
    kappa: float,
) -> list[list[Any]]:
    rows = []
    for sol in solve_q_path(cov, p, times, grid, p.lam):
        oracle = she_second_moment(kappa, p.nu, sol.t)
        rows.append([sol.t, sol.q0, oracle.value, abs(sol.q0 - oracle.value), oracle.error])
    return rows


def _collect_cells(
    coordinator: ExperimentCoordinator, cells: list[Cell]
) -> tuple[list[CellResult], list[str]]:
    results = coordinator.run(cells)
    _raise_if_all_failed(results)
    return results, [result.key for result in results if not result.ok]


def run_critical_line(
    config: dict[str, dict[str, Any]], cov: CovarianceSpec, coordinator: ExperimentCoordinator
) -> RunResult:
    """q^lambda(t, 0) against the SHE second moment along a critical schedule."""
    kappa = config[SECTION_SCHEDULE][CONF_KAPPA_TARGET] or DEFAULT_KAPPA_TARGET
    nu_target = config[SECTION_SCHEDULE][CONF_NU_TARGET] or DEFAULT_NU_TARGET
    pt = point_of(config, DEFAULT_CRITICAL_POINT)
    if not pt.on_critical_line:
        raise LabValidationError(
            "Critical-line experiment needs a critical phase point",
            [("schedule.beta", f"beta={pt.beta} off the line at alpha={pt.alpha}")],
        )
    params = scheduled_params(config, cov, DEFAULT_CRITICAL_POINT, None, kappa, nu_target)
    rows, decreasing = hypothesis_check(cov, params)
    times = sorted(config[SECTION_EXPERIMENT][CONF_TIMES])
    cells = [
        Cell(i, f"eps={p.eps}", partial(_critical_cell, cov, p, times, q_grid(config, p), kappa))
        for i, p in enumerate(params)
    ]
    results, failed = _collect_cells(coordinator, cells)
    table = Table(
        ["eps", "t", "mu", "lambda", "kappa_eps", "mu_sqrt_log", "q0", "she_oracle", "abs_err"]
    )
    result = RunResult(failed=failed)
    for res, p, hyp in zip(results, params, rows):
        if not res.ok:
            continue
        for t, q0, oracle, err, oracle_err in res.value:
            table.rows.append(
                [p.eps, t, p.mu, p.lam, p.kappa_eps, hyp["mu_sqrt_log"], q0, oracle, err]
            )
            result.observables.append(Observable("critical_abs_err", err, oracle_err, p.eps, t))
    if not decreasing:
        _LOGGER.warning("Schedule violates the log-correction hypothesis")
    result.tables[FILE_CRITICAL_LINE] = table
    return result


def _weak_cell(
    cov: CovarianceSpec, p: ScaleParams, times: list[float], grid: NoiseGrid
) -> list[list[Any]]:
    rows = []
    for sol in solve_q_path(cov, p, times, grid, p.lam):
        p2t = heat_second_moment(p.nu, sol.t)
        rows.append([sol.t, sol.q0, p2t, abs(sol.q0 - p2t)])
    return rows


def run_weak_disorder(
    config: dict[str, dict[str, Any]], cov: CovarianceSpec, coordinator: ExperimentCoordinator
) -> RunResult:
    """q^lambda(t, 0) against p_2t(0) along a schedule below the critical line."""
    params = scheduled_params(config, cov, DEFAULT_WEAK_POINT)
    times = sorted(config[SECTION_EXPERIMENT][CONF_TIMES])
    cells = [
        Cell(i, f"eps={p.eps}", partial(_weak_cell, cov, p, times, q_grid(config, p)))
        for i, p in enumerate(params)
    ]
    results, failed = _collect_cells(coordinator, cells)
    table = Table(["eps", "t", "kappa_eps", "q0", "p2t0", "rel_err"])
    result = RunResult(failed=failed)
    for res, p in zip(results, params):
        if not res.ok:
            continue
        for t, q0, p2t, err in res.value:
            table.rows.append([p.eps, t, p.kappa_eps, q0, p2t, err / p2t])
            result.observables.append(Observable("weak_abs_err", err, 0.0, p.eps, t))
    result.tables[FILE_WEAK_DISORDER] = table
    return result


def mass_escape_level(
    s: float, eps: float, nu: float, cov: CovarianceSpec, level: float = MASS_ESCAPE_LEVEL
) -> float:
    """Smallest a with P(|sqrt(s) Z + eps W| > a) < level.

    Z ~ N(0, nu) and W has density rho / |rho| (W = 0 without environment).

    Raises:
        LabDomainError: If s or nu is not positive
    """
    if s <= 0 or nu <= 0:
        raise LabDomainError("Mass escape level needs s, nu > 0", [("t", f"s={s}, nu={nu}")])
    scale = math.sqrt(s * nu)
    mass = cov.rho.mass
    w = cov.y
    density = cov.rho_table / mass if mass > 0 else None

    def tail(a: float) -> float:
        if density is None:
            return float(2.0 * stats.norm.sf(a / scale))
        upper = stats.norm.sf((a - eps * w) / scale)
        lower = stats.norm.cdf((-a - eps * w) / scale)
        return float(integrate.simpson(density * (upper + lower), x=w))

    return float(optimize.brentq(lambda a: tail(a) - level, 0.0, eps + 10.0 * scale))


def predicted_decay_rate(p: ScaleParams, a: float) -> float:
    """Rate lambda^2 kappa_eps^2 / (8 a) bounding the decay of E[v_t^(1/2)]."""
    return p.lam**2 * p.kappa_eps**2 / (8.0 * a)


def fit_decay_rate(times: list[float], means: list[float], ses: list[float]) -> tuple[float, float]:
    """Least-squares rate r of E[v_t^(1/2)] ~ exp(-r t) through v_0 = 1, with its SE."""
    t = np.asarray(times, dtype=float)
    m = np.maximum(np.asarray(means, dtype=float), 1e-300)
    rel = np.asarray(ses, dtype=float) / m
    denom = float(np.sum(t * t))
    rate = -float(np.sum(t * np.log(m))) / denom
    se = math.sqrt(float(np.sum(t * t * rel * rel))) / denom
    return rate, se


def strong_disorder_diagnostic(
    config: dict[str, dict[str, Any]],
    cov: CovarianceSpec,
    coordinator: ExperimentCoordinator,
    replicas: int | None = None,
    times: list[float] | None = None,
) -> RunResult:
    """Square-root mass E[v_t^(1/2)] of the tilted kernel for growing lambda mu sqrt(eps).

    Each configured strength s sets lambda = s / (mu sqrt(eps) |rho|). The
    decay rate of E[v_t^(1/2)] is fitted and reported next to the
    lambda^2 kappa_eps^2 / (8a) prediction with a from the mass-escape
    criterion at the last output time.
    """
    section = config[SECTION_SCHEDULE]
    eps, mu, sigma = section[CONF_EPS], section[CONF_MU], section[CONF_SIGMA]
    scale = mu * math.sqrt(eps) * cov.rho.mass
    if scale <= 0:
        raise LabValidationError(
            "Strong disorder needs an environment",
            [("schedule.mu", "mu and mass must be positive")],
        )
    times = sorted(times or config[SECTION_EXPERIMENT][CONF_TIMES])
    grid = grid_of(config)
    table = Table(
        [
            "strength",
            "eps",
            "lambda",
            "kappa_eps",
            "t",
            "mean_sqrt_mass",
            "se",
            "excluded",
            "a",
            "predicted_rate",
            "fitted_rate",
        ]
    )
    result = RunResult()
    for strength in config[SECTION_EXPERIMENT][CONF_STRENGTHS]:
        p = make_scale_params(cov, eps, mu, sigma, strength / scale)
        stacks, failed, excluded = transport_ensemble(
            config, cov, p, p.lam, coordinator, times, replicas
        )
        result.failed += failed
        estimates = []
        for t in times:
            mass = stacks[t].sum(axis=1) * grid.dx
            est = MonteCarloEstimate.from_samples(np.sqrt(np.maximum(mass, 0.0)))
            if est.mean > 1.0 + 3.0 * est.se:
                _LOGGER.warning("E[v^1/2]=%s exceeds the Jensen bound at t=%s", est.mean, t)
            estimates.append(est)
            result.observables.append(
                Observable("mean_sqrt_mass", est.mean, est.se, eps, t, strength)
            )
        means, ses = [e.mean for e in estimates], [e.se for e in estimates]
        rate, rate_se = fit_decay_rate(times, means, ses)
        a = mass_escape_level(times[-1], eps, p.nu, cov)
        predicted = predicted_decay_rate(p, a)
        result.observables.append(Observable("decay_rate", rate, rate_se, eps, None, strength))
        for t, est in zip(times, estimates):
            row = [strength, eps, p.lam, p.kappa_eps, t, est.mean, est.se, excluded]
            table.rows.append([*row, a, predicted, rate])
        _LOGGER.info(
            "Strength %s: fitted rate %s, predicted %s (a=%s)", strength, rate, predicted, a
        )
    result.tables[FILE_STRONG_DISORDER] = table
    return result


def run_phase_sweep(
    config: dict[str, dict[str, Any]], cov: CovarianceSpec, coordinator: ExperimentCoordinator
) -> RunResult:
    """Classify the default (alpha, beta) grid."""
    return sweep_result(DEFAULT_ALPHA_RANGE, DEFAULT_BETA_RANGE, DEFAULT_GRID_POINTS)


def sweep_result(
    alpha_range: tuple[float, float], beta_range: tuple[float, float], grid_points: int
) -> RunResult:
    """Phase sweep as a table plus a point count."""
    rows = phase_sweep(alpha_range, beta_range, grid_points)
    table = Table(["alpha", "beta", "label"], [list(row) for row in rows])
    return RunResult(
        observables=[Observable("sweep_points", float(len(rows)), 0.0)],
        tables={FILE_PHASE_SWEEP: table},
    )


KIND_RUNNERS: dict[str, Callable[..., RunResult]] = {
    KIND_MEAN_KERNEL: run_mean_kernel,
    KIND_SECOND_MOMENT: run_second_moment,
    KIND_CRITICAL_LINE: run_critical_line,
    KIND_WEAK_DISORDER: run_weak_disorder,
    KIND_STRONG_DISORDER: strong_disorder_diagnostic,
    KIND_PHASE_SWEEP: run_phase_sweep,
}

KIND_DEFAULT_POINTS = {
    KIND_CRITICAL_LINE: DEFAULT_CRITICAL_POINT,
    KIND_WEAK_DISORDER: DEFAULT_WEAK_POINT,
}


def _record(
    config: dict[str, dict[str, Any]], kind: str, result: RunResult, started: str
) -> ExperimentRecord:
    return ExperimentRecord(
        config_hash=config_hash(config),
        seed=config[SECTION_NOISE][CONF_SEED],
        kind=kind,
        regime_label=classify_regime(point_of(config, KIND_DEFAULT_POINTS.get(kind, (0.0, 0.0)))),
        observables=result.observables,
        tables=result.tables,
        started=started,
        finished=_now(),
        failed=result.failed,
    )


def persist_record(record: ExperimentRecord, cov: CovarianceSpec, out: Path) -> list[Path]:
    """Write covariance, observables, tables and the manifest to out."""
    out = Path(out)
    files = [write_covariance(out, cov)]
    header = ["kind", "observable", "unit", "eps", "t", "strength", "value", "se"]
    rows = []
    for obs in record.observables:
        unit = OBSERVABLES.get(obs.name, {}).get("unit", "")
        rows.append(
            [record.kind, obs.name, unit, obs.eps, obs.t, obs.strength, obs.value, obs.se]
        )
    files.append(write_csv(out / FILE_OBSERVABLES, header, rows))
    for name, table in record.tables.items():
        files.append(write_csv(out / name, table.header, table.rows))
    write_manifest(out, record.summary(), files, __version__)
    return files


def _finish(record: ExperimentRecord, cov: CovarianceSpec, out: Path | None) -> ExperimentRecord:
    if out is not None:
        persist_record(record, cov, out)
    if record.failed:
        _LOGGER.error("Run finished with %s failed cells", len(record.failed))
        raise LabPartialFailure(
            f"{len(record.failed)} cells failed; completed results were kept", record.failed
        )
    return record


def execute(config: dict[str, dict[str, Any]], out: Path | None = None) -> ExperimentRecord:
    """Run a resolved config and persist its outputs.

    Raises:
        LabPartialFailure: After persisting, if some cells failed
    """
    started = _now()
    kind = config[SECTION_EXPERIMENT][CONF_KIND]
    cov = covariance_for(config)
    coordinator = ExperimentCoordinator(config[SECTION_EXPERIMENT][CONF_WORKERS])
    _LOGGER.info("Running %s experiment (hash %s)", kind, config_hash(config)[:12])
    result = KIND_RUNNERS[kind](config, cov, coordinator)
    return _finish(_record(config, kind, result, started), cov, out)


def run_experiment(
    config_path: Path,
    replicas: int | None = None,
    seed: int | None = None,
    out: Path | None = None,
) -> ExperimentRecord:
    """Load a config file, run the experiment it names and persist the outputs.

    Args:
        config_path: JSON or INI config
        replicas: Optional replica override
        seed: Optional seed override
        out: Output directory (nothing is written when omitted)

    Returns:
        The experiment record

    Raises:
        LabValidationError: If the config is invalid
        LabBlowUpError: If every cell blew up
        LabPartialFailure: If some cells failed
    """
    return execute(load_config(config_path, replicas, seed), out)


def run_spde_command(
    config: dict[str, dict[str, Any]], out: Path | None = None
) -> ExperimentRecord:
    """Transport SPDE ensemble with the configured (possibly tilted) parameters."""
    started = _now()
    cov = covariance_for(config)
    p = fixed_params(config, cov)
    grid = grid_of(config)
    coordinator = ExperimentCoordinator(config[SECTION_EXPERIMENT][CONF_WORKERS])
    stacks, failed, _ = transport_ensemble(config, cov, p, p.lam, coordinator)
    result = RunResult(failed=failed)
    for t, values in stacks.items():
        if len(values) > 1:
            mass = MonteCarloEstimate.from_samples(values.sum(axis=1) * grid.dx)
            result.observables.append(Observable("mean_mass", mass.mean, mass.se, p.eps, t))
        result.tables[FILE_FIELD_TEMPLATE.format(t=t)] = _field_table(grid, values)
    result.tables[FILE_MASS_SERIES] = _mass_table(grid, stacks)
    return _finish(_record(config, COMMAND_SPDE, result, started), cov, out)


def run_twopoint_command(
    config: dict[str, dict[str, Any]], out: Path | None = None
) -> ExperimentRecord:
    """Two-point Feynman-Kac moments and the separation histogram."""
    started = _now()
    cov = covariance_for(config)
    p = fixed_params(config, cov)
    seed = config[SECTION_NOISE][CONF_SEED]
    replicas = config[SECTION_EXPERIMENT][CONF_REPLICAS]
    times = sorted(config[SECTION_EXPERIMENT][CONF_TIMES])
    proxy = gaussian_delta_proxy(DEFAULT_PROXY_FACTOR * p.eps)
    result = RunResult()
    moments = Table(["t", "E_weight", "SE", "E_weight_f", "SE_f"])
    for i, t in enumerate(times):
        path = run_two_point(cov, p, t, replicas, derive_seed(seed, STREAM_TWO_POINT, i))
        weight = feynman_kac_moment(path)
        weight_f = feynman_kac_moment(path, proxy)
        exponent = occupation_time(path)
        moments.rows.append([t, weight.mean, weight.se, weight_f.mean, weight_f.se])
        result.observables += [
            Observable("fk_weight", weight.mean, weight.se, p.eps, t),
            Observable("fk_weight_delta", weight_f.mean, weight_f.se, p.eps, t),
            Observable("occupation_time", exponent.mean, exponent.se, p.eps, t),
        ]
    result.tables[FILE_MOMENTS] = moments

    t_last = times[-1]
    state = run_difference(cov, p, t_last, replicas, derive_seed(seed, STREAM_DIFFERENCE))
    reach = 4.0 * math.sqrt(2.0 * p.nu * t_last)
    density, edges = np.histogram(
        state.d, bins=DEFAULT_HIST_BINS, range=(-reach, reach), density=True
    )
    centers = 0.5 * (edges[:-1] + edges[1:])
    qgrid = q_grid(config, p)
    q = solve_q(cov, p, t_last, qgrid)
    q_values = np.interp(centers, qgrid.x, q.values.values)
    result.tables[FILE_DIFFERENCE_HIST] = Table(
        ["y", "density", "q_pde"], [list(row) for row in zip(centers, density, q_values)]
    )
    return _finish(_record(config, COMMAND_TWO_POINT, result, started), cov, out)


def _qpde_cell(
    cov: CovarianceSpec, p: ScaleParams, times: list[float], grid: NoiseGrid
) -> list[list[Any]]:
    rows = []
    for sol in solve_q_path(cov, p, times, grid, p.lam):
        oracle = she_second_moment(p.kappa_eps, p.nu, sol.t)
        rows.append(
            [sol.t, p.eps, p.lam, sol.q0, sol.mass, oracle.value, heat_second_moment(p.nu, sol.t)]
        )
    return rows


def run_qpde_command(
    config: dict[str, dict[str, Any]],
    eps_list: list[float] | None = None,
    out: Path | None = None,
) -> ExperimentRecord:
    """q^lambda convergence table over an eps list.

    With alpha and beta configured the parameters follow the schedule;
    otherwise mu, sigma and lambda are held fixed across eps.
    """
    started = _now()
    cov = covariance_for(config)
    section = config[SECTION_SCHEDULE]
    eps_list = eps_list or section[CONF_EPS_LIST] or [section[CONF_EPS]]
    if section[CONF_ALPHA] is not None:
        params = scheduled_params(config, cov, (0.0, 0.0), eps_list)
    else:
        params = [fixed_params(config, cov, eps) for eps in eps_list]
    times = sorted(config[SECTION_EXPERIMENT][CONF_TIMES])
    coordinator = ExperimentCoordinator(config[SECTION_EXPERIMENT][CONF_WORKERS])
    cells = [
        Cell(i, f"eps={p.eps}", partial(_qpde_cell, cov, p, times, q_grid(config, p)))
        for i, p in enumerate(params)
    ]
    results, failed = _collect_cells(coordinator, cells)
    table = Table(["t", "eps", "lambda", "q0", "mass", "she_oracle", "p2t0"])
    result = RunResult(failed=failed)
    for res in results:
        if not res.ok:
            continue
        for row in res.value:
            table.rows.append(row)
            result.observables.append(Observable("q0", row[3], 0.0, row[1], row[0]))
    result.tables[FILE_Q_LAMBDA] = table
    return _finish(_record(config, COMMAND_QPDE, result, started), cov, out)


def run_sweep_command(
    alpha_range: tuple[float, float],
    beta_range: tuple[float, float],
    grid_points: int,
    out: Path | None = None,
) -> list[list[Any]]:
    """Classify a phase grid and optionally write phase_sweep.csv."""
    table = sweep_result(alpha_range, beta_range, grid_points).tables[FILE_PHASE_SWEEP]
    if out is not None:
        write_csv(Path(out) / FILE_PHASE_SWEEP, table.header, table.rows)
    return table.rows
