"""Kraichnan flow lab."""

import json
import logging
from pathlib import Path
from typing import Final

_LOGGER = logging.getLogger(__name__)

MANIFEST_PATH: Final = Path(__file__).with_name("manifest.json")


def _read_version() -> str:
    try:
        return json.loads(MANIFEST_PATH.read_text(encoding="utf-8"))["version"]
    except (OSError, KeyError, json.JSONDecodeError) as err:
        _LOGGER.debug("Could not read package manifest: %s", err)
        return "0.0.0"


__version__: Final = _read_version()
