"""Allow ``python -m fedfg``."""
import sys

from .cli import main

sys.exit(main())
