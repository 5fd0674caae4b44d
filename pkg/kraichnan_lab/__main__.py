"""Entry point for ``python -m kraichnan_lab``."""

import sys

from .cli import main

sys.exit(main())
