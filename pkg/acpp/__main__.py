"""Entry point for ``python -m acpp``."""

import sys

from .main import main

sys.exit(main())
