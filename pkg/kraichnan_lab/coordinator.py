"""Bounded worker pool for experiment cells in Kraichnan flow lab."""

from __future__ import annotations

import asyncio
import logging
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any

import numpy as np

from .const import DEFAULT_WORKERS
from .errors import LabError, LabPartialFailure

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class Cell:
    """Independent unit of work, e.g. one (eps, replica block) pair."""

    index: int
    key: str
    func: Callable[[], Any]


@dataclass(frozen=True)
class CellResult:
    """Outcome of a cell: a value or the error that stopped it."""

    index: int
    key: str
    value: Any = None
    error: LabError | None = None

    @property
    def ok(self) -> bool:
        """Whether the cell finished."""
        return self.error is None


class ExperimentCoordinator:
    """Run cells on a bounded pool and merge results by cell index."""

    def __init__(self, workers: int = DEFAULT_WORKERS):
        """Initialize coordinator.

        Args:
            workers: Maximum number of cells running at once
        """
        if workers < 1:
            raise ValueError("workers must be positive")
        self.workers = workers

    async def _run_cell(
        self,
        cell: Cell,
        executor: ThreadPoolExecutor,
        semaphore: asyncio.Semaphore,
    ) -> CellResult:
        async with semaphore:
            loop = asyncio.get_running_loop()
            try:
                value = await loop.run_in_executor(executor, cell.func)
            except LabError as err:
                _LOGGER.warning("Cell %s (%s) failed: %s", cell.index, cell.key, err)
                return CellResult(cell.index, cell.key, error=err)
            except (ArithmeticError, np.linalg.LinAlgError) as err:
                _LOGGER.warning("Cell %s (%s) raised %s", cell.index, cell.key, err)
                wrapped = LabError(f"Cell {cell.key} raised {type(err).__name__}: {err}")
                wrapped.__cause__ = err
                return CellResult(cell.index, cell.key, error=wrapped)
        _LOGGER.debug("Cell %s (%s) done", cell.index, cell.key)
        return CellResult(cell.index, cell.key, value=value)

    async def async_run(self, cells: Sequence[Cell]) -> list[CellResult]:
        """Run every cell, returning results ordered by cell index.

        Args:
            cells: Independent cells

        Returns:
            One result per cell; failed cells carry their error
        """
        semaphore = asyncio.Semaphore(self.workers)
        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            results = await asyncio.gather(
                *(self._run_cell(cell, executor, semaphore) for cell in cells)
            )
        return sorted(results, key=lambda result: result.index)

    def run(self, cells: Sequence[Cell]) -> list[CellResult]:
        """Blocking wrapper around async_run."""
        return asyncio.run(self.async_run(cells))


def collect(results: Sequence[CellResult]) -> list[Any]:
    """Values of a fully successful run.

    Raises:
        LabPartialFailure: If any cell failed, listing the failed keys
    """
    failed = [result.key for result in results if not result.ok]
    if failed:
        raise LabPartialFailure(f"{len(failed)} of {len(results)} cells failed", failed)
    return [result.value for result in results]
