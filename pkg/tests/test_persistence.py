"""Tests for CSV and manifest persistence."""

import json

import numpy as np
import pytest

from kraichnan_lab.errors import LabError
from kraichnan_lab.persistence import (
    file_digest,
    format_cell,
    read_csv,
    write_covariance,
    write_csv,
    write_manifest,
)


class TestFormatCell:
    """Tests for format_cell."""

    @pytest.mark.parametrize(
        "value,text",
        [
            (True, "true"),
            (np.bool_(False), "false"),
            (3, "3"),
            (np.int64(7), "7"),
            (0.1, "0.1"),
            (np.float64(1.0 / 3.0), "0.333333333333"),
            (1e-20, "1e-20"),
            (None, ""),
            ("weak-disorder", "weak-disorder"),
        ],
    )
    def test_values(self, value, text):
        """Test each supported cell type."""
        assert format_cell(value) == text


class TestWriteCsv:
    """Tests for write_csv and read_csv."""

    def test_line_endings(self, tmp_path):
        """Test rows end with a bare LF."""
        path = write_csv(tmp_path / "sub" / "t.csv", ["a", "b"], [(1, 0.5), (2, 0.25)])
        assert path.read_bytes() == b"a,b\n1,0.5\n2,0.25\n"

    def test_read_back(self, tmp_path):
        """Test the header and rows are read back as text."""
        path = write_csv(tmp_path / "t.csv", ["eps", "ok"], [(0.1, True)])
        header, rows = read_csv(path)
        assert header == ["eps", "ok"]
        assert rows == [["0.1", "true"]]

    def test_unwritable(self, tmp_path):
        """Test an unwritable target raises LabError."""
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(LabError):
            write_csv(blocker / "t.csv", ["a"], [])

    def test_covariance_export(self, tmp_path, bump_cov):
        """Test C(y) is exported on its tabulation grid."""
        path = write_covariance(tmp_path, bump_cov)
        header, rows = read_csv(path)
        assert header == ["y", "C"]
        assert len(rows) == len(bump_cov.z)
        assert float(rows[0][0]) == pytest.approx(-2.0)


class TestManifest:
    """Tests for write_manifest."""

    def test_contents(self, tmp_path):
        """Test versions, record fields and file digests."""
        a = write_csv(tmp_path / "b.csv", ["x"], [(1,)])
        b = write_csv(tmp_path / "a.csv", ["x"], [(2,)])
        path = write_manifest(tmp_path, {"kind": "mean-kernel", "seed": 7}, [a, b], "1.2.3")
        manifest = json.loads(path.read_text())
        assert manifest["kind"] == "mean-kernel"
        assert manifest["versions"]["kraichnan_lab"] == "1.2.3"
        assert list(manifest["files"]) == ["a.csv", "b.csv"]
        assert manifest["files"]["b.csv"] == file_digest(a)

    def test_digest_changes_with_content(self, tmp_path):
        """Test the digest tracks file content."""
        path = write_csv(tmp_path / "t.csv", ["x"], [(1,)])
        before = file_digest(path)
        write_csv(path, ["x"], [(2,)])
        assert file_digest(path) != before
