#!/usr/bin/env python3
from __future__ import annotations

"""
converge: run a ladder of (grid sizes, steps, epsilon) rungs and write
convergence.csv with the probe value, residual, violation, runtime and the
empirical order between consecutive rungs.

The order on rung i compares errors against the binomial reference when
oracles.binomial is enabled; otherwise it uses successive differences and
starts on the third rung. Rungs that only change epsilon get no order.

Usage:
  python3 -m ObstaclePricer.tools.converge --config data/configs/gbm_put_ladder.json --jobs 3
"""

from concurrent.futures import ProcessPoolExecutor
import logging
import math
from pathlib import Path
import sys
import time
from typing import Any, Dict, List, Optional, Sequence

_HERE = Path(__file__).resolve().parent
_PARENT = _HERE.parent.parent
if str(_PARENT) not in sys.path:
    sys.path.insert(0, str(_PARENT))

from ObstaclePricer.errors import MissingParam
from ObstaclePricer.oracles import binomial_american
from ObstaclePricer.tools import outputs
from ObstaclePricer.tools.run_config import (
    RunConfig,
    build_grid,
    build_model,
    build_obstacle,
    ladder_rungs,
    resolve_probe,
)

logger = logging.getLogger(__name__)

HEADER = ["rung", "sizes", "steps", "epsilon", "value", "residual", "violation", "runtime", "order"]


def _run_rung(payload: Dict[str, Any]) -> Dict[str, Any]:
    """One ladder rung; top-level so it pickles into worker processes."""
    from ObstaclePricer.tools.price import solve_run

    rc = RunConfig(data=payload["run_config"])
    start = time.perf_counter()
    run = solve_run(rc, sizes=payload["sizes"], steps=payload["steps"], epsilon=payload["epsilon"])
    return {
        "sizes": payload["sizes"],
        "steps": payload["steps"],
        "epsilon": payload["epsilon"],
        "value": run.value,
        "residual": float(run.sol.residuals.max()),
        "violation": float(run.sol.violations.max()),
        "runtime": time.perf_counter() - start,
    }


def _refinement(prev: Dict[str, Any], cur: Dict[str, Any]) -> float:
    """Ratio by which the rung refines time (the scheme's leading error term)."""
    return cur["steps"] / prev["steps"]


def empirical_orders(rows: Sequence[Dict[str, Any]], reference: Optional[float]) -> List[float]:
    orders = [math.nan] * len(rows)
    for i in range(1, len(rows)):
        ratio = _refinement(rows[i - 1], rows[i])
        if ratio <= 1.0:
            continue
        if reference is not None:
            e0 = abs(rows[i - 1]["value"] - reference)
            e1 = abs(rows[i]["value"] - reference)
        elif i >= 2:
            e0 = abs(rows[i - 1]["value"] - rows[i - 2]["value"])
            e1 = abs(rows[i]["value"] - rows[i - 1]["value"])
            ratio = _refinement(rows[i - 2], rows[i - 1])
            if ratio <= 1.0:
                continue
        else:
            continue
        if e0 > 0.0 and e1 > 0.0:
            orders[i] = math.log(e0 / e1) / math.log(ratio)
    return orders


def _reference(rc: RunConfig) -> Optional[float]:
    if not rc["oracles"]["binomial"]["enabled"]:
        return None
    from ObstaclePricer.tools.price import gbm_oracle_inputs

    model = build_model(rc)
    obstacle = build_obstacle(rc, model)
    probe = resolve_probe(rc, build_grid(rc, model), obstacle)
    args = gbm_oracle_inputs(model, obstacle, probe, "binomial")
    return binomial_american(T=rc.maturity, steps=int(rc["oracles"]["binomial"]["steps"]), **args).value


def cmd_converge(rc: RunConfig) -> int:
    rungs = ladder_rungs(rc)
    if not rungs:
        raise MissingParam("converge needs a non-empty ladder", missing=["ladder"])
    out_dir = rc.output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    jobs = int(rc["jobs"])
    print(f"[converge] {len(rungs)} rungs, jobs={jobs}, out={out_dir}")

    payloads = [
        {"run_config": rc.to_dict(), "sizes": sizes, "steps": steps, "epsilon": eps}
        for sizes, steps, eps in rungs
    ]
    rows: List[Dict[str, Any]] = []
    if jobs > 1 and len(payloads) > 1:
        try:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                rows = list(pool.map(_run_rung, payloads))
        except (OSError, PermissionError) as exc:
            logger.warning("process pool unavailable (%s); running rungs serially", exc)
            rows = []
    if not rows:
        for i, payload in enumerate(payloads, 1):
            rows.append(_run_rung(payload))
            outputs.write_status({"command": "converge", "phase": "ladder", "done": i, "total": len(payloads)})

    reference = _reference(rc)
    orders = empirical_orders(rows, reference)
    table = []
    for i, (row, order) in enumerate(zip(rows, orders), 1):
        sizes = "x".join(str(s) for s in row["sizes"])
        table.append([i, sizes, row["steps"], row["epsilon"], row["value"], row["residual"], row["violation"], row["runtime"], "" if math.isnan(order) else order])
        print(f"[converge] rung {i}: sizes={sizes} steps={row['steps']} eps={row['epsilon']!r} value={row['value']!r}")
    path = outputs.write_csv(out_dir / "convergence.csv", HEADER, table)

    results = {
        "reference": reference,
        "values": [r["value"] for r in rows],
        "orders": [None if math.isnan(o) else o for o in orders],
    }
    timings = {"total": time.perf_counter() - start}
    manifest = outputs.write_manifest(out_dir, "converge", rc.to_dict(), [path], results, timings)
    print(f"[DONE] table={path} manifest={manifest}")
    return 0


def main(argv=None) -> int:
    from ObstaclePricer.tools.cli import main as cli_main

    return cli_main(["converge"] + list(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    raise SystemExit(main())
