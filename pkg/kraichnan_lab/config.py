"""Experiment configuration for Kraichnan flow lab."""

from __future__ import annotations

import configparser
import copy
import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Any

import voluptuous as vol

from .const import (
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
    CONF_MASS,
    CONF_MU,
    CONF_NU_TARGET,
    CONF_NX,
    CONF_REPLICAS,
    CONF_RNG_SCHEME,
    CONF_SAMPLES,
    CONF_SEED,
    CONF_SHAPE,
    CONF_SIGMA,
    CONF_STABILITY_FACTOR,
    CONF_STRENGTHS,
    CONF_TIMES,
    CONF_WINDOW,
    CONF_WORKERS,
    DEFAULT_BLOCK_SIZE,
    DEFAULT_DT,
    DEFAULT_HALF_WIDTH,
    DEFAULT_MASS,
    DEFAULT_NX,
    DEFAULT_REPLICAS,
    DEFAULT_SAMPLES,
    DEFAULT_SEED,
    DEFAULT_STABILITY_FACTOR,
    DEFAULT_STRENGTHS,
    DEFAULT_TIMES,
    DEFAULT_WINDOW,
    DEFAULT_WORKERS,
    EXPERIMENT_KINDS,
    FLUX_CONSERVATIVE,
    FLUX_FORMS,
    KIND_MEAN_KERNEL,
    KIND_SECOND_MOMENT,
    KIND_STRONG_DISORDER,
    MIN_CELLS_PER_EPS,
    MOLLIFIER_SHAPES,
    NOISE_STABILITY_DIVISOR,
    RNG_PHILOX,
    RNG_SCHEMES,
    SECTION_EXPERIMENT,
    SECTION_GRID,
    SECTION_MOLLIFIER,
    SECTION_NOISE,
    SECTION_SCHEDULE,
    SECTION_SCHEME,
    SHAPE_TRIANGLE_SMOOTH,
)
from .covariance import CovarianceSpec, MollifierSpec, build_covariance
from .errors import LabError, LabValidationError

_LOGGER = logging.getLogger(__name__)

# Kinds that step the explicit SPDE scheme
EXPLICIT_KINDS = (KIND_MEAN_KERNEL, KIND_SECOND_MOMENT, KIND_STRONG_DISORDER)


def float_list(value: Any) -> list[float]:
    """Coerce "0.2,0.1" or a sequence into a list of floats."""
    if isinstance(value, str):
        parts = [part.strip() for part in value.split(",") if part.strip()]
    elif isinstance(value, (list, tuple)):
        parts = list(value)
    else:
        parts = [value]
    try:
        return [float(part) for part in parts]
    except (TypeError, ValueError) as err:
        raise vol.Invalid(f"expected a list of numbers, got {value!r}") from err


def _optional_float(value: Any) -> float | None:
    if value is None or (isinstance(value, str) and value.strip().lower() in ("", "none")):
        return None
    return float(value)


POSITIVE_FLOAT = vol.All(vol.Coerce(float), vol.Range(min=0, min_included=False))
NON_NEGATIVE_FLOAT = vol.All(vol.Coerce(float), vol.Range(min=0))
POSITIVE_INT = vol.All(vol.Coerce(int), vol.Range(min=1))
OPTIONAL_FLOAT = _optional_float

MOLLIFIER_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_SHAPE, default=SHAPE_TRIANGLE_SMOOTH): vol.In(MOLLIFIER_SHAPES),
        vol.Optional(CONF_MASS, default=DEFAULT_MASS): NON_NEGATIVE_FLOAT,
        vol.Optional(CONF_SAMPLES, default=DEFAULT_SAMPLES): vol.All(
            vol.Coerce(int), vol.Range(min=8)
        ),
    }
)

GRID_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_L, default=DEFAULT_HALF_WIDTH): POSITIVE_FLOAT,
        vol.Optional(CONF_NX, default=DEFAULT_NX): vol.All(vol.Coerce(int), vol.Range(min=4)),
        vol.Optional(CONF_DT, default=DEFAULT_DT): POSITIVE_FLOAT,
    }
)

NOISE_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_SEED, default=DEFAULT_SEED): vol.All(vol.Coerce(int), vol.Range(min=0)),
        vol.Optional(CONF_RNG_SCHEME, default=RNG_PHILOX): vol.In(RNG_SCHEMES),
        vol.Optional(CONF_BLOCK_SIZE, default=DEFAULT_BLOCK_SIZE): POSITIVE_INT,
    }
)

SCHEDULE_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_EPS, default=0.1): vol.All(
            vol.Coerce(float), vol.Range(min=0, max=1, min_included=False, max_included=False)
        ),
        vol.Optional(CONF_EPS_LIST, default=list): float_list,
        vol.Optional(CONF_MU, default=1.0): NON_NEGATIVE_FLOAT,
        vol.Optional(CONF_SIGMA, default=1.0): NON_NEGATIVE_FLOAT,
        vol.Optional(CONF_LAMBDA, default=1.0): vol.Coerce(float),
        vol.Optional(CONF_ALPHA, default=None): OPTIONAL_FLOAT,
        vol.Optional(CONF_BETA, default=None): OPTIONAL_FLOAT,
        vol.Optional(CONF_KAPPA_TARGET, default=None): OPTIONAL_FLOAT,
        vol.Optional(CONF_NU_TARGET, default=None): OPTIONAL_FLOAT,
    }
)

SCHEME_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_FLUX_FORM, default=FLUX_CONSERVATIVE): vol.In(FLUX_FORMS),
        vol.Optional(CONF_STABILITY_FACTOR, default=DEFAULT_STABILITY_FACTOR): vol.All(
            vol.Coerce(float), vol.Range(min=0, max=1, min_included=False, max_included=False)
        ),
    }
)

EXPERIMENT_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_KIND, default=KIND_MEAN_KERNEL): vol.In(EXPERIMENT_KINDS),
        vol.Optional(CONF_REPLICAS, default=DEFAULT_REPLICAS): POSITIVE_INT,
        vol.Optional(CONF_TIMES, default=list(DEFAULT_TIMES)): float_list,
        vol.Optional(CONF_WORKERS, default=DEFAULT_WORKERS): POSITIVE_INT,
        vol.Optional(CONF_WINDOW, default=DEFAULT_WINDOW): POSITIVE_FLOAT,
        vol.Optional(CONF_STRENGTHS, default=list(DEFAULT_STRENGTHS)): float_list,
    }
)

SECTION_SCHEMAS = {
    SECTION_MOLLIFIER: MOLLIFIER_SCHEMA,
    SECTION_GRID: GRID_SCHEMA,
    SECTION_NOISE: NOISE_SCHEMA,
    SECTION_SCHEDULE: SCHEDULE_SCHEMA,
    SECTION_SCHEME: SCHEME_SCHEMA,
    SECTION_EXPERIMENT: EXPERIMENT_SCHEMA,
}


def _issue_path(section: str, err: vol.Invalid) -> str:
    return ".".join([section, *(str(part) for part in err.path)])


def read_config_file(path: Path) -> dict[str, dict[str, Any]]:
    """Read raw sections from a JSON or INI config file.

    Raises:
        LabValidationError: If the file is missing or unparsable
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise LabValidationError(
            f"Cannot read config {path}", [("config", str(err))]
        ) from err

    if path.suffix.lower() == ".json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as err:
            raise LabValidationError(
                f"Invalid JSON in {path}", [("config", str(err))]
            ) from err
        if not isinstance(raw, dict):
            raise LabValidationError(f"Invalid config {path}", [("config", "not a mapping")])
        return raw

    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as err:
        raise LabValidationError(
            f"Invalid config text in {path}", [("config", str(err))]
        ) from err
    return {section: dict(parser[section]) for section in parser.sections()}


def resolve_config(raw: dict[str, Any]) -> dict[str, dict[str, Any]]:
    """Validate raw sections against the schemas, filling defaults.

    Raises:
        LabValidationError: Listing every offending dotted config path
    """
    issues = [
        (section, "unknown section") for section in raw if section not in SECTION_SCHEMAS
    ]
    resolved: dict[str, dict[str, Any]] = {}
    for section, schema in SECTION_SCHEMAS.items():
        values = raw.get(section) or {}
        if not isinstance(values, dict):
            issues.append((section, "must be a mapping"))
            continue
        try:
            resolved[section] = schema(dict(values))
        except vol.MultipleInvalid as err:
            issues.extend((_issue_path(section, e), e.msg) for e in err.errors)
    if issues:
        raise LabValidationError("Invalid configuration", issues)
    return resolved


def apply_overrides(
    config: dict[str, dict[str, Any]],
    replicas: int | None = None,
    seed: int | None = None,
) -> dict[str, dict[str, Any]]:
    """Return a copy with command-line overrides applied."""
    out = copy.deepcopy(config)
    if replicas is not None:
        out[SECTION_EXPERIMENT][CONF_REPLICAS] = int(replicas)
    if seed is not None:
        out[SECTION_NOISE][CONF_SEED] = int(seed)
    return resolve_config(out)


def covariance_for(config: dict[str, dict[str, Any]]) -> CovarianceSpec:
    """Build the covariance described by the mollifier section."""
    section = config[SECTION_MOLLIFIER]
    try:
        return build_covariance(
            MollifierSpec(
                shape=section[CONF_SHAPE],
                mass=section[CONF_MASS],
                samples=section[CONF_SAMPLES],
            )
        )
    except LabValidationError:
        raise
    except LabError as err:
        raise LabValidationError(
            "Mollifier rejected", [(SECTION_MOLLIFIER, str(err))]
        ) from err


def scales_of(config: dict[str, dict[str, Any]]) -> list[float]:
    """Every epsilon the experiment will touch."""
    schedule = config[SECTION_SCHEDULE]
    return list(schedule[CONF_EPS_LIST]) or [schedule[CONF_EPS]]


def validate_config(
    config: dict[str, dict[str, Any]], cov: CovarianceSpec | None = None
) -> list[tuple[str, str]]:
    """Cross-field checks the section schemas cannot express.

    Checks grid resolution of every eps, and for kinds stepping the explicit
    SPDE the CFL bound dt <= factor dx^2 / nu and the noise heuristic
    dt <= dx / (10 lambda mu sqrt(C(0) / eps)).

    Returns:
        List of (config path, problem); empty when the config is consistent
    """
    grid = config[SECTION_GRID]
    schedule = config[SECTION_SCHEDULE]
    kind = config[SECTION_EXPERIMENT][CONF_KIND]
    dx = 2.0 * grid[CONF_L] / grid[CONF_NX]
    dt = grid[CONF_DT]
    issues = []

    if grid[CONF_NX] % 2:
        issues.append(("grid.nx", "must be even"))
    for eps in scales_of(config):
        if eps < MIN_CELLS_PER_EPS * dx:
            issues.append(("grid.nx", f"eps={eps} not resolved: needs >= {MIN_CELLS_PER_EPS} dx"))
        if not 0.0 < eps < 1.0:
            issues.append(("schedule.eps_list", f"eps={eps} outside (0, 1)"))
    if (schedule[CONF_ALPHA] is None) != (schedule[CONF_BETA] is None):
        issues.append(("schedule", "alpha and beta must be given together"))
    if schedule[CONF_MU] <= 0 and schedule[CONF_SIGMA] <= 0:
        issues.append(("schedule", "one of sigma, mu must be positive"))

    if kind in EXPLICIT_KINDS and not issues:
        cov = cov or covariance_for(config)
        mu = schedule[CONF_MU]
        nu = schedule[CONF_SIGMA] ** 2 + mu * mu * cov.C0
        factor = config[SECTION_SCHEME][CONF_STABILITY_FACTOR]
        if nu > 0 and dt > factor * dx * dx / nu:
            issues.append(("grid.dt", f"CFL violated: dt={dt} > {factor * dx * dx / nu}"))
        strengths = [max(abs(schedule[CONF_LAMBDA]), 1.0)]
        if kind == KIND_STRONG_DISORDER:
            eps = schedule[CONF_EPS]
            mass = cov.rho.mass
            if mu > 0 and mass > 0:
                strengths += [
                    s / (mu * math.sqrt(eps) * mass)
                    for s in config[SECTION_EXPERIMENT][CONF_STRENGTHS]
                ]
        noise = max(strengths) * mu * math.sqrt(cov.C0 / schedule[CONF_EPS])
        if noise > 0 and dt > dx / (NOISE_STABILITY_DIVISOR * noise):
            bound = dx / (NOISE_STABILITY_DIVISOR * noise)
            issues.append(("grid.dt", f"noise step too large: dt={dt} > {bound}"))
    return issues


def load_config(
    path: Path,
    replicas: int | None = None,
    seed: int | None = None,
) -> dict[str, dict[str, Any]]:
    """Read, resolve and cross-check a config file.

    Args:
        path: JSON or INI config
        replicas: Optional override of experiment.replicas
        seed: Optional override of noise.seed

    Returns:
        Fully resolved config

    Raises:
        LabValidationError: With every offending config path
    """
    config = resolve_config(read_config_file(path))
    config = apply_overrides(config, replicas, seed)
    issues = validate_config(config)
    if issues:
        _LOGGER.error("Config %s failed validation with %s issue(s)", path, len(issues))
        raise LabValidationError(f"Config {path} failed validation", issues)
    _LOGGER.info("Loaded config %s (hash %s)", path, config_hash(config)[:12])
    return config


def canonical_json_bytes(value: Any) -> bytes:
    """Canonical JSON: sorted keys, no whitespace, UTF-8."""
    return json.dumps(
        value, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")


def config_hash(config: dict[str, dict[str, Any]]) -> str:
    """sha256 hex digest of the canonical JSON of a resolved config."""
    return hashlib.sha256(canonical_json_bytes(config)).hexdigest()
