"""Fixtures for Kraichnan flow lab tests."""

import json
from pathlib import Path

import pytest

from kraichnan_lab.covariance import MollifierSpec, build_covariance, make_scale_params
from kraichnan_lab.noise import NoiseGrid

FIXTURES_DIR = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def triangle_cov():
    """Covariance of the default triangle-smooth mollifier."""
    return build_covariance(MollifierSpec("triangle-smooth", 1.0, 1024))


@pytest.fixture(scope="session")
def bump_cov():
    """Covariance of the bump mollifier."""
    return build_covariance(MollifierSpec("bump", 1.0, 1024))


@pytest.fixture(scope="session")
def null_cov():
    """Zero-mass mollifier: no environment, C identically zero."""
    return build_covariance(MollifierSpec("triangle-smooth", 0.0, 256))


@pytest.fixture
def small_grid():
    """Coarse periodic grid resolving eps = 0.5."""
    return NoiseGrid(L=4.0, nx=64, dt=1e-3, seed=11)


@pytest.fixture
def params(triangle_cov):
    """Moderate parameters at eps = 0.5."""
    return make_scale_params(triangle_cov, eps=0.5, mu=0.5, sigma=1.0, lam=1.0)


@pytest.fixture
def mean_kernel_config_path():
    """Path of the tiny mean-kernel config."""
    return FIXTURES_DIR / "mean_kernel_tiny.json"


@pytest.fixture
def critical_config_path():
    """Path of the small critical-line config."""
    return FIXTURES_DIR / "critical_line_small.json"


@pytest.fixture
def invalid_config_path():
    """Path of a config with several schema errors."""
    return FIXTURES_DIR / "invalid.json"


@pytest.fixture
def sweep_config_path():
    """Path of the INI phase-sweep config."""
    return FIXTURES_DIR / "phase_sweep.cfg"


@pytest.fixture
def mean_kernel_raw():
    """Raw sections of the tiny mean-kernel config."""
    with open(FIXTURES_DIR / "mean_kernel_tiny.json") as f:
        return json.load(f)


@pytest.fixture
def write_config(tmp_path):
    """Write a raw config mapping to a JSON file and return its path."""

    def _write(raw, name="config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(raw))
        return path

    return _write
