"""CSV and manifest persistence for Kraichnan flow lab."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import platform
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any

import numpy as np
import scipy

from .const import CSV_FLOAT_FORMAT, FILE_COVARIANCE, FILE_MANIFEST
from .covariance import CovarianceSpec
from .errors import LabError

_LOGGER = logging.getLogger(__name__)


def format_cell(value: Any) -> str:
    """Render one CSV cell; floats use a fixed significant-digit format."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), CSV_FLOAT_FORMAT)
    if value is None:
        return ""
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Write a CSV with LF line endings and deterministic number formatting.

    Raises:
        LabError: If the file cannot be written
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([format_cell(value) for value in row])
    except OSError as err:
        raise LabError(f"Cannot write {path}: {err}") from err
    _LOGGER.debug("Wrote %s", path)
    return path


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    """Read back a CSV written by write_csv as (header, rows)."""
    with Path(path).open(newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    return rows[0], rows[1:]


def write_covariance(out: Path, cov: CovarianceSpec) -> Path:
    """Export C(y) on its tabulation grid."""
    return write_csv(Path(out) / FILE_COVARIANCE, ["y", "C"], zip(cov.z, cov.C))


def file_digest(path: Path) -> str:
    """sha256 hex digest of a file."""
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(
    out: Path,
    record: dict[str, Any],
    files: Sequence[Path],
    version: str,
) -> Path:
    """Write manifest.json next to the outputs.

    Args:
        out: Output directory
        record: Record summary (config hash, seed, kind, label, timestamps)
        files: Files produced by the run
        version: Package version

    Returns:
        Path of the manifest
    """
    out = Path(out)
    manifest = {
        **record,
        "versions": {
            "kraichnan_lab": version,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "files": {Path(f).name: file_digest(f) for f in sorted(files, key=lambda f: Path(f).name)},
    }
    path = out / FILE_MANIFEST
    try:
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as err:
        raise LabError(f"Cannot write {path}: {err}") from err
    _LOGGER.info("Wrote manifest with %s files to %s", len(files), path)
    return path
