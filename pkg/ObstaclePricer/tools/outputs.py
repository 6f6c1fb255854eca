#!/usr/bin/env python3
from __future__ import annotations

"""
Writers for run artifacts: slice CSVs, the free-boundary CSV, the
convergence table, manifest.json and the optional progress status file.

Numbers are written in shortest round-trip form (repr of a Python float).
Every JSON file is written to a temp file and swapped in with os.replace.
"""

import hashlib
import json
import math
import os
from pathlib import Path
import time
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from ObstaclePricer import __version__, config

MANIFEST_SCHEMA = "obstaclepricer.manifest/1"


def fmt(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return "nan" if math.isnan(v) else repr(v)
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return path


def write_json_atomic(path: Path, payload: Mapping[str, Any]) -> Path:
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(str(tmp), str(path))
    return path


def slice_header(dim: int) -> List[str]:
    return [f"coord_{i}" for i in range(dim)] + ["u", "g", "eta", "contact"]


def write_slice(out_dir: Path, sol, t_index: int) -> Path:
    """u, g, eta and the contact flag at every node for one time level."""
    grid = sol.grid
    nodes = grid.nodes()
    u = sol.values[t_index]
    g = sol.g_values[t_index]
    eta = sol.eta[t_index] if sol.eta is not None else np.zeros_like(u)
    contact = (u - g) <= sol.tol_contact
    rows = (list(nodes[i]) + [u[i], g[i], eta[i], bool(contact[i])] for i in range(grid.size))
    return write_csv(out_dir / f"slice_k{t_index:05d}.csv", slice_header(grid.dim), rows)


def write_free_boundary(out_dir: Path, boundaries: Sequence) -> Optional[Path]:
    """1D: one exercise boundary per time; 2D: one per (time, second-axis value)."""
    if not boundaries:
        return None
    first = boundaries[0]
    path = out_dir / "free_boundary.csv"
    if first.second_axis is None:
        return write_csv(path, ["time", "boundary"], ([fb.time, fb.boundary] for fb in boundaries))
    rows = []
    for fb in boundaries:
        for y, b in zip(fb.second_axis, fb.boundary):
            rows.append([fb.time, y, b])
    return write_csv(path, ["time", "coord_1", "boundary"], rows)


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(
    out_dir: Path,
    command: str,
    run_config: Mapping[str, Any],
    files: Sequence[Path],
    results: Mapping[str, Any],
    timings: Mapping[str, float],
) -> Path:
    """manifest.json; 'created' and 'timings' are the only run-dependent keys."""
    import scipy

    listed = [
        {"path": p.name, "sha256": sha256_file(p), "bytes": p.stat().st_size}
        for p in sorted(files, key=lambda q: q.name)
    ]
    payload = {
        "schema": MANIFEST_SCHEMA,
        "command": command,
        "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "versions": {"obstaclepricer": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
        "run_config": run_config,
        "files": listed,
        "results": results,
        "timings": {k: round(float(v), 6) for k, v in timings.items()},
    }
    return write_json_atomic(out_dir / "manifest.json", payload)


def write_status(payload: Mapping[str, Any]) -> None:
    """Progress JSON for long runs, only when OBSTACLEPRICER_STATUS names a file."""
    target = os.environ.get(config.STATUS_ENV)
    if not target:
        return
    path = Path(target)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        write_json_atomic(path, dict(payload, updated=time.time()))
    except OSError:
        pass


class StatusReporter:
    """Throttled progress callback for backward_solve."""

    def __init__(self, command: str, every: float = 1.0) -> None:
        self.command = command
        self.every = every
        self._last = 0.0

    def __call__(self, done: int, total: int) -> None:
        now = time.time()
        if done < total and now - self._last < self.every:
            return
        self._last = now
        write_status({"command": self.command, "phase": "solve", "done": done, "total": total})
