#!/usr/bin/env python3
from __future__ import annotations

"""
price: certify -> assemble -> backward_solve -> oracles, then write slice
CSVs, free_boundary.csv (1D/2D grids) and manifest.json.

Usage:
  python3 -m ObstaclePricer.tools.price --config data/configs/gbm_put.json --out /tmp/run
"""

from dataclasses import dataclass
import logging
import math
from pathlib import Path
import sys
import time
from typing import Any, Dict, List, Optional

# Ensure package import works when run as a script
_HERE = Path(__file__).resolve().parent
_PARENT = _HERE.parent.parent
if str(_PARENT) not in sys.path:
    sys.path.insert(0, str(_PARENT))

import numpy as np

from ObstaclePricer.discretization import DiscreteOperator, assemble
from ObstaclePricer.errors import ConstraintViolated
from ObstaclePricer.grid import Grid
from ObstaclePricer.models import ModelName, ModelSpec, ObstacleSpec, certify_excessive
from ObstaclePricer.oracles import OracleResult, binomial_american, bs_european, lsmc_american, mc_european
from ObstaclePricer.tools import outputs
from ObstaclePricer.tools.run_config import (
    RunConfig,
    build_density,
    build_grid,
    build_model,
    build_obstacle,
    resolve_probe,
)
from ObstaclePricer.vi_solver import SolutionField, backward_solve, free_boundary

logger = logging.getLogger(__name__)


@dataclass
class SolvedRun:
    model: ModelSpec
    obstacle: ObstacleSpec
    grid: Grid
    op: DiscreteOperator
    sol: SolutionField
    probe: List[float]
    value: float
    timings: Dict[str, float]


def solve_run(rc: RunConfig, sizes=None, steps: Optional[int] = None, epsilon: Optional[float] = None, progress=None) -> SolvedRun:
    """Build and solve the configured problem, optionally with ladder overrides."""
    solver = dict(rc["solver"])
    if steps is not None:
        solver["steps"] = int(steps)
    if epsilon is not None:
        solver["epsilon"] = float(epsilon)
        solver["epsilon_schedule"] = None
    rc = rc.with_overrides(solver=solver)

    t0 = time.perf_counter()
    model = build_model(rc)
    obstacle = build_obstacle(rc, model)
    grid = build_grid(rc, model, sizes=sizes)
    density = certify_excessive(model, build_density(model, grid), grid)
    op = assemble(
        model,
        grid,
        density,
        drift_scheme=rc["solver"]["drift_scheme"],
        measure_shift=bool(rc["solver"]["measure_shift"]),
    )
    t1 = time.perf_counter()
    source = float(rc["source"] or 0.0)
    sol = backward_solve(
        op,
        rc.solver_config(),
        obstacle,
        f=source if source != 0.0 else None,
        T=rc.maturity,
        progress=progress,
    )
    t2 = time.perf_counter()
    probe = resolve_probe(rc, grid, obstacle)
    return SolvedRun(
        model=model,
        obstacle=obstacle,
        grid=grid,
        op=op,
        sol=sol,
        probe=probe,
        value=sol.probe(probe, 0),
        timings={"assemble": t1 - t0, "solve": t2 - t1},
    )


def gbm_oracle_inputs(model: ModelSpec, obstacle: ObstacleSpec, probe: List[float], oracle: str) -> Dict[str, Any]:
    p = model.params
    if model.name is not ModelName.GBM1D or p.get("vol") is None or obstacle.kind not in ("put", "call"):
        raise ConstraintViolated(
            f"{oracle} oracle needs a constant-volatility GBM1D put or call",
            constraint="model GBM1D with vol, obstacle put/call",
            oracle=oracle,
        )
    if obstacle.time_dependent:
        raise ConstraintViolated(f"{oracle} oracle needs a fixed strike", constraint="strike_growth == 0", oracle=oracle)
    return {
        "spot": probe[0],
        "strike": float(obstacle.scale),
        "r": float(p["r"]),
        "vol": float(p["vol"]),
        "kind": obstacle.kind,
    }


def run_oracles(rc: RunConfig, run: SolvedRun) -> Dict[str, OracleResult]:
    cfg = rc["oracles"]
    T = rc.maturity
    out: Dict[str, OracleResult] = {}
    if cfg["binomial"]["enabled"]:
        args = gbm_oracle_inputs(run.model, run.obstacle, run.probe, "binomial")
        out["binomial"] = binomial_american(T=T, steps=int(cfg["binomial"]["steps"]), **args)
    lsmc = cfg["lsmc"]
    if cfg["european"]["enabled"]:
        if run.model.name is ModelName.GBM1D and run.model.params.get("vol") is not None:
            out["european"] = bs_european(T=T, **gbm_oracle_inputs(run.model, run.obstacle, run.probe, "european"))
        else:
            out["european"] = mc_european(
                run.model,
                run.obstacle,
                T,
                int(lsmc["paths"]),
                seed=rc.seed,
                x0=run.probe,
                steps=int(lsmc["exercise_dates"]) * int(lsmc["steps_per_date"]),
                antithetic=bool(lsmc["antithetic"]),
                workers=int(rc["jobs"]),
            )
    if lsmc["enabled"]:
        out["lsmc"] = lsmc_american(
            run.model,
            run.obstacle,
            T,
            int(lsmc["paths"]),
            int(lsmc["exercise_dates"]),
            basis_degree=int(lsmc["basis_degree"]),
            seed=rc.seed,
            x0=run.probe,
            steps_per_date=int(lsmc["steps_per_date"]),
            antithetic=bool(lsmc["antithetic"]),
            workers=int(rc["jobs"]),
        )
    return out


def _slice_indices(rc: RunConfig, steps: int) -> List[int]:
    wanted = rc["output"]["slices"]
    if wanted == "all":
        return list(range(steps + 1))
    return sorted({int(k) % (steps + 1) for k in wanted})


def cmd_price(rc: RunConfig) -> int:
    out_dir = rc.output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    print(f"[price] model={rc['model']['name']} obstacle={rc['obstacle']['kind']} out={out_dir}")
    outputs.write_status({"command": "price", "phase": "assemble"})

    run = solve_run(rc, progress=outputs.StatusReporter("price"))
    sol = run.sol
    print(f"[price] grid={run.grid.shape} omega={run.op.omega:.6g} steps={sol.steps}")
    print(f"[price] value at {run.probe} = {run.value!r}")

    outputs.write_status({"command": "price", "phase": "oracles"})
    t_or = time.perf_counter()
    oracles = run_oracles(rc, run)
    t_or = time.perf_counter() - t_or
    for name, res in oracles.items():
        err = f" +/- {res.stderr:.3g}" if res.stderr is not None else ""
        print(f"[price] oracle {name}: {res.value!r}{err}")

    files: List[Path] = [outputs.write_slice(out_dir, sol, k) for k in _slice_indices(rc, sol.steps)]
    boundary0 = None
    if run.grid.dim in (1, 2):
        bounds = [free_boundary(sol, run.obstacle, k) for k in range(sol.steps + 1)]
        fb_path = outputs.write_free_boundary(out_dir, bounds)
        if fb_path is not None:
            files.append(fb_path)
        b = bounds[0].boundary
        boundary0 = b if b is None or np.ndim(b) == 0 else np.asarray(b).tolist()

    results = {
        "probe": run.probe,
        "value": run.value,
        "omega": run.op.omega,
        "omega_certified": run.op.omega_certified,
        "omega_discrete": run.op.omega_discrete,
        "nonmonotone_rows": run.op.nonmonotone_rows,
        "max_residual": float(sol.residuals.max()),
        "max_violation": float(sol.violations.max()),
        "min_gap": float(np.min(sol.values - sol.g_values)),
        "newton_iterations": int(sol.newton_iterations.sum()),
        "grid": run.grid.describe(),
        "free_boundary_t0": _json_float(boundary0),
        "oracles": {name: res.describe() for name, res in oracles.items()},
    }
    timings = dict(run.timings, oracles=t_or, total=time.perf_counter() - start)
    manifest = outputs.write_manifest(out_dir, "price", rc.to_dict(), files, results, timings)
    outputs.write_status({"command": "price", "phase": "done", "manifest": str(manifest)})
    print(f"[DONE] manifest={manifest}")
    return 0


def _json_float(value):
    if isinstance(value, float) and math.isnan(value):
        return None
    if isinstance(value, list):
        return [None if isinstance(v, float) and math.isnan(v) else v for v in value]
    return value


def main(argv=None) -> int:
    from ObstaclePricer.tools.cli import main as cli_main

    return cli_main(["price"] + list(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    raise SystemExit(main())
