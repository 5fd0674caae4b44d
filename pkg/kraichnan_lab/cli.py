"""Command line interface for Kraichnan flow lab."""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

import voluptuous as vol

from . import __version__
from .config import float_list, load_config
from .const import (
    DEFAULT_ALPHA_RANGE,
    DEFAULT_BETA_RANGE,
    DEFAULT_GRID_POINTS,
    EXIT_BLOW_UP,
    EXIT_ERROR,
    EXIT_OK,
    EXIT_PARTIAL,
    EXIT_VALIDATION,
)
from .errors import LabBlowUpError, LabError, LabPartialFailure, LabValidationError
from .experiments import (
    ExperimentRecord,
    execute,
    run_qpde_command,
    run_spde_command,
    run_sweep_command,
    run_twopoint_command,
)
from .regime import RegimePoint, classify_regime

_LOGGER = logging.getLogger(__name__)


def _eps_list(text: str) -> list[float]:
    try:
        return float_list(text)
    except vol.Invalid as err:
        raise argparse.ArgumentTypeError(str(err)) from err


def _pair(text: str) -> tuple[float, float]:
    values = _eps_list(text)
    if len(values) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}")
    return values[0], values[1]


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, required=True, help="JSON or INI config file")
    parser.add_argument("--replicas", type=int, default=None, help="override experiment.replicas")
    parser.add_argument("--seed", type=int, default=None, help="override noise.seed")
    parser.add_argument("--out", type=Path, default=None, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    """Argument parser of the ``lab`` command."""
    parser = argparse.ArgumentParser(
        prog="lab", description="Brownian particles in a mollified Gaussian environment."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_config_args(sub.add_parser("run", help="run the experiment named in the config"))
    _add_config_args(sub.add_parser("spde", help="transport SPDE ensemble"))
    _add_config_args(sub.add_parser("twopoint", help="two-point Feynman-Kac moments"))

    qpde = sub.add_parser("qpde", help="q^lambda convergence table")
    _add_config_args(qpde)
    qpde.add_argument("--eps-list", type=_eps_list, default=None, help="e.g. 0.2,0.1,0.05")

    sweep = sub.add_parser("sweep", help="classify a grid of phase points")
    sweep.add_argument("--alpha-range", type=_pair, default=DEFAULT_ALPHA_RANGE)
    sweep.add_argument("--beta-range", type=_pair, default=DEFAULT_BETA_RANGE)
    sweep.add_argument("--grid-points", type=int, default=DEFAULT_GRID_POINTS)
    sweep.add_argument("--out", type=Path, default=None)

    classify = sub.add_parser("classify", help="label one phase point")
    classify.add_argument("--alpha", type=float, required=True)
    classify.add_argument("--beta", type=float, required=True)
    return parser


def _report(record: ExperimentRecord) -> None:
    print(f"{record.kind} {record.regime_label} {record.config_hash}")
    for obs in record.observables:
        print(f"  {obs.name} eps={obs.eps} t={obs.t}: {obs.value:.6g} +- {obs.se:.2g}")


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "classify":
        print(classify_regime(RegimePoint.from_exponents(args.alpha, args.beta)))
        return EXIT_OK
    if args.command == "sweep":
        for alpha, beta, label in run_sweep_command(
            args.alpha_range, args.beta_range, args.grid_points, args.out
        ):
            print(f"{alpha:.6g} {beta:.6g} {label}")
        return EXIT_OK

    config = load_config(args.config, args.replicas, args.seed)
    if args.command == "run":
        record = execute(config, args.out)
    elif args.command == "spde":
        record = run_spde_command(config, args.out)
    elif args.command == "twopoint":
        record = run_twopoint_command(config, args.out)
    else:
        record = run_qpde_command(config, args.eps_list, args.out)
    _report(record)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    """Run the ``lab`` command and return its exit code.

    0 success, 2 validation, 3 numerical blow-up, 4 partial failure.
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return _dispatch(args)
    except LabValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except LabBlowUpError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_BLOW_UP
    except LabPartialFailure as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_PARTIAL
    except LabError as err:
        _LOGGER.error("Run failed: %s", err)
        return EXIT_ERROR
