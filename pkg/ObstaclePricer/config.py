from __future__ import annotations

from pathlib import Path
import os


"""
Configuration for ObstaclePricer. Every setting below can be overridden with
an OBSTACLEPRICER_* environment variable, e.g.

  OBSTACLEPRICER_DATA_DIR=/tmp/op      -> configs and runs live elsewhere
  OBSTACLEPRICER_LINEAR_TOL=1e-12      -> tighter linear solves
  OBSTACLEPRICER_STATUS=/tmp/st.json   -> long runs write progress JSON here
"""


def _env_float(name: str, default: float) -> float:
    raw = os.environ.get(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return float(raw)
    except ValueError:
        return default


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        return default


# Base directories
BASE_DIR = Path(__file__).resolve().parent
REPO_DIR = BASE_DIR.parent

_DATA_DIR_OVERRIDE = os.environ.get("OBSTACLEPRICER_DATA_DIR")
if _DATA_DIR_OVERRIDE:
    DATA_DIR = Path(_DATA_DIR_OVERRIDE).expanduser().resolve()
else:
    DATA_DIR = REPO_DIR / "data"

CONFIGS_DIR = DATA_DIR / "configs"
RUNS_DIR = Path(os.environ.get("OBSTACLEPRICER_RUNS_DIR", str(DATA_DIR / "runs")))

# Linear algebra
DIRECT_SOLVE_MAX = _env_int("OBSTACLEPRICER_DIRECT_SOLVE_MAX", 200_000)
LINEAR_TOL = _env_float("OBSTACLEPRICER_LINEAR_TOL", 1e-10)
DENSE_EIG_MAX = _env_int("OBSTACLEPRICER_DENSE_EIG_MAX", 2500)

# Density certificates
RATIO_CAP = _env_float("OBSTACLEPRICER_RATIO_CAP", 1e6)
FD_REL_STEP = _env_float("OBSTACLEPRICER_FD_REL_STEP", 1e-3)
FD_ABS_FLOOR = _env_float("OBSTACLEPRICER_FD_ABS_FLOOR", 1e-2)

# Models
V_MIN = _env_float("OBSTACLEPRICER_V_MIN", 1e-4)

# Obstacle solver
TOL_CONTACT_REL = _env_float("OBSTACLEPRICER_TOL_CONTACT_REL", 1e-6)
NEWTON_MAX_DAMPS = _env_int("OBSTACLEPRICER_NEWTON_MAX_DAMPS", 30)

# Monte Carlo
LSMC_BATCH = _env_int("OBSTACLEPRICER_LSMC_BATCH", 50_000)

# CLI
LOG_LEVEL = os.environ.get("OBSTACLEPRICER_LOG_LEVEL", "WARNING")
STATUS_ENV = "OBSTACLEPRICER_STATUS"
