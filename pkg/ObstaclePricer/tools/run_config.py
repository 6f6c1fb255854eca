#!/usr/bin/env python3
from __future__ import annotations

"""
RunConfig: the JSON run description shared by price / converge / verify-measure.

Precedence (lowest first): DEFAULTS below, the --config file, CLI flags.
A manifest.json written by `price` is accepted as --config too; its
"run_config" section is the fully resolved configuration of that run.
See docs/config_schema.md for every key.
"""

import copy
from dataclasses import dataclass
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from ObstaclePricer import config
from ObstaclePricer.errors import ConfigParse, ConstraintViolated, MissingParam
from ObstaclePricer.grid import Grid, make_grid
from ObstaclePricer.models import (
    ExcessiveDensity,
    ModelSpec,
    ObstacleSpec,
    make_excessive_density,
    make_model,
    make_obstacle,
)
from ObstaclePricer.vi_solver import SolverConfig


DEFAULTS: Dict[str, Any] = {
    "description": "",
    "model": {"name": "GBM1D", "params": {"r": 0.05, "vol": 0.2}},
    "obstacle": {"kind": "put", "params": {"strike": 100.0}},
    "grid": {
        "box": None,
        "sizes": [201],
        "grading": "uniform",
        "focus": None,
        "concentration": 0.1,
        "boundary": None,
    },
    "solver": {
        "steps": 100,
        "penalty": "classic",
        "epsilon": 1e-5,
        "epsilon_schedule": None,
        "g1": "auto",
        "newton_tol": 1e-8,
        "newton_max_iter": 50,
        "drift_scheme": "upwind",
        "measure_shift": False,
    },
    "maturity": 1.0,
    "probe": None,
    "source": 0.0,
    "oracles": {
        "binomial": {"enabled": False, "steps": 2000},
        "european": {"enabled": False},
        "lsmc": {
            "enabled": False,
            "paths": 100000,
            "exercise_dates": 50,
            "basis_degree": 3,
            "steps_per_date": 4,
            "antithetic": False,
        },
    },
    "output": {"dir": None, "slices": [0]},
    "verify": {"refine": 2},
    "ladder": [],
    "seed": None,
    "jobs": 1,
}

_SOLVER_KEYS = ("steps", "penalty", "epsilon", "epsilon_schedule", "g1", "newton_tol", "newton_max_iter")


def _merge(base: Dict[str, Any], extra: Dict[str, Any], path: str = "") -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigParse(f"unknown key {where!r}", key=where)
        if key == "params" or isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigParse(f"{where!r} must be an object", key=where)
        if key == "params":
            # params replace the defaults wholesale: they belong to the default model
            out[key] = copy.deepcopy(value)
        elif isinstance(base[key], dict):
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class RunConfig:
    data: Dict[str, Any]
    source_path: Optional[Path] = None

    def __getitem__(self, key: str) -> Any:
        return self.data[key]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def maturity(self) -> float:
        return float(self.data["maturity"])

    def to_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self.data)

    def with_overrides(self, **sections: Any) -> "RunConfig":
        data = self.to_dict()
        for key, value in sections.items():
            if isinstance(value, dict) and isinstance(data.get(key), dict):
                data[key].update(copy.deepcopy(value))
            else:
                data[key] = copy.deepcopy(value)
        return RunConfig(data=data, source_path=self.source_path)

    def solver_config(self) -> SolverConfig:
        s = self.data["solver"]
        return SolverConfig(**{k: s[k] for k in _SOLVER_KEYS if s.get(k) is not None})

    def output_dir(self) -> Path:
        out = self.data["output"]["dir"]
        if out:
            return Path(out).expanduser()
        stem = self.source_path.stem if self.source_path is not None else "run"
        if stem == "manifest" and self.source_path is not None:
            stem = self.source_path.parent.name + "_rerun"
        return config.RUNS_DIR / stem


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigParse(f"cannot read config file: {exc}", path=str(p)) from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParse(f"config is not valid JSON: {exc.msg}", path=str(p), line=exc.lineno, column=exc.colno) from exc
    if not isinstance(raw, dict):
        raise ConfigParse("config must be a JSON object", path=str(p))
    if "run_config" in raw and isinstance(raw["run_config"], dict):
        raw = raw["run_config"]
    return raw


def load_run_config(
    path: Union[None, str, Path] = None,
    out: Optional[str] = None,
    seed: Optional[int] = None,
    jobs: Optional[int] = None,
) -> RunConfig:
    raw = read_config_file(path) if path is not None else {}
    data = _merge(DEFAULTS, raw)
    if out is not None:
        data["output"]["dir"] = str(out)
    if seed is not None:
        data["seed"] = int(seed)
    if jobs is not None:
        data["jobs"] = int(jobs)
    if data["seed"] is None:
        # record the drawn seed so the manifest reproduces the run
        data["seed"] = int(np.random.SeedSequence().entropy % (2**63))
    _validate(data)
    return RunConfig(data=data, source_path=Path(path) if path is not None else None)


def _validate(data: Dict[str, Any]) -> None:
    if not data["model"].get("name"):
        raise MissingParam("model.name is required", missing=["model.name"])
    if not data["obstacle"].get("kind"):
        raise MissingParam("obstacle.kind is required", missing=["obstacle.kind"])
    try:
        maturity = float(data["maturity"])
    except (TypeError, ValueError) as exc:
        raise ConfigParse("maturity must be a number", key="maturity") from exc
    if not maturity > 0:
        raise ConstraintViolated("maturity must be positive", constraint="maturity > 0", maturity=maturity)
    if int(data["jobs"]) < 1:
        raise ConstraintViolated("jobs must be >= 1", constraint="jobs >= 1")
    if not isinstance(data["ladder"], list):
        raise ConfigParse("ladder must be a list of rungs", key="ladder")
    for i, rung in enumerate(data["ladder"]):
        if not isinstance(rung, dict):
            raise ConfigParse("each ladder rung must be an object", key=f"ladder[{i}]")
        unknown = set(rung) - {"sizes", "steps", "epsilon"}
        if unknown:
            raise ConfigParse(f"unknown ladder keys {sorted(unknown)}", key=f"ladder[{i}]")
    if data["solver"]["drift_scheme"] not in ("upwind", "central"):
        raise ConstraintViolated("drift_scheme must be upwind or central", constraint="drift_scheme in {upwind, central}")
    slices = data["output"]["slices"]
    if slices != "all" and not isinstance(slices, list):
        raise ConfigParse('output.slices must be a list of time indices or "all"', key="output.slices")


# ---------------------------------------------------------------------------
# Problem construction
# ---------------------------------------------------------------------------


def build_model(rc: RunConfig) -> ModelSpec:
    m = rc["model"]
    return make_model(m["name"], m.get("params") or {})


def build_obstacle(rc: RunConfig, model: ModelSpec) -> ObstacleSpec:
    o = rc["obstacle"]
    if o["kind"] == "custom":
        raise ConstraintViolated("custom obstacles need code; use the library API", constraint="obstacle.kind != custom")
    return make_obstacle(o["kind"], o.get("params") or {}, model=model)


def build_grid(rc: RunConfig, model: ModelSpec, sizes=None) -> Grid:
    g = rc["grid"]
    box = g["box"] if g["box"] is not None else model.default_box
    return make_grid(
        box,
        sizes if sizes is not None else g["sizes"],
        grading=g["grading"],
        focus=g["focus"],
        concentration=g["concentration"],
        boundary=g["boundary"],
    )


def build_density(model: ModelSpec, grid: Grid) -> ExcessiveDensity:
    return make_excessive_density(model, box=grid.box)


def resolve_probe(rc: RunConfig, grid: Grid, obstacle: ObstacleSpec) -> List[float]:
    probe = rc["probe"]
    if probe is not None:
        pt = [float(v) for v in np.atleast_1d(probe)]
        if len(pt) != grid.dim:
            raise ConstraintViolated("probe must have one coordinate per axis", constraint="len(probe) == dim", dim=grid.dim)
        return pt
    strike = obstacle.params.get("strike", obstacle.params.get("k"))
    if grid.dim == 1 and strike is not None:
        return [float(strike)]
    return [0.5 * (lo + hi) for lo, hi in grid.box]


def ladder_rungs(rc: RunConfig) -> List[Tuple[List[int], int, float]]:
    base_sizes = rc["grid"]["sizes"]
    rungs = []
    for rung in rc["ladder"]:
        sizes = rung.get("sizes", base_sizes)
        sizes = [int(sizes)] if isinstance(sizes, (int, float)) else [int(s) for s in sizes]
        rungs.append((sizes, int(rung.get("steps", rc["solver"]["steps"])), float(rung.get("epsilon", rc["solver"]["epsilon"]))))
    return rungs
