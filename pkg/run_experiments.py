#!/usr/bin/env python3
"""
Runs the rnnrecon command line from a source checkout.
"""

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from rnnrecon import __version__  # noqa: E402
from rnnrecon.app.main import main  # noqa: E402

if __name__ == "__main__":
    print(f"rnnrecon {__version__}: generate | train | eval | sweep | calibrate | verify-report", file=sys.stderr)
    sys.exit(main())
