#!/usr/bin/env python3
from __future__ import annotations

"""
Launch the ObstaclePricer command line:

  python3 -m ObstaclePricer.launch price --config data/configs/gbm_put.json
  ./launch.sh verify-measure --config data/configs/heston_put.json

Everything after the launcher is handed to ObstaclePricer.tools.cli.
"""

import os
from pathlib import Path
import sys

# Make the package importable whether we run as `python3 launch.py` or `python3 -m ObstaclePricer.launch`
HERE = Path(__file__).resolve().parent
PARENT = HERE.parent
if str(PARENT) not in sys.path:
    sys.path.insert(0, str(PARENT))

# Ensure data dir points to repo ./data by default BEFORE importing config
os.environ.setdefault("OBSTACLEPRICER_DATA_DIR", str((PARENT / "data").resolve()))

from ObstaclePricer.tools.cli import main  # noqa: E402


if __name__ == "__main__":
    raise SystemExit(main())
