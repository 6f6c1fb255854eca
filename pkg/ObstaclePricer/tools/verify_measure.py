#!/usr/bin/env python3
from __future__ import annotations

"""
verify-measure: certify the excessive density on the configured grid and on
its refinement, print omega, the location of the maximal ratio and how much
omega moved under refinement.

Usage:
  python3 -m ObstaclePricer.tools.verify_measure --config data/configs/heston_put.json
"""

from pathlib import Path
import sys
import time

_HERE = Path(__file__).resolve().parent
_PARENT = _HERE.parent.parent
if str(_PARENT) not in sys.path:
    sys.path.insert(0, str(_PARENT))

from ObstaclePricer.models import certify_excessive
from ObstaclePricer.tools import outputs
from ObstaclePricer.tools.run_config import RunConfig, build_density, build_grid, build_model


def refinement_change(coarse: float, fine: float) -> float:
    """Relative change of omega in percent; 0 when both vanish."""
    if coarse == fine:
        return 0.0
    return abs(fine - coarse) / max(abs(coarse), abs(fine)) * 100.0


def cmd_verify_measure(rc: RunConfig) -> int:
    out_dir = rc.output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    model = build_model(rc)
    grid = build_grid(rc, model)
    print(f"[verify] model={model.name.value} grid={grid.shape} box={[list(b) for b in grid.box]}")

    coarse = certify_excessive(model, build_density(model, grid), grid)
    fine_grid = grid.refined(int(rc["verify"]["refine"]))
    fine = certify_excessive(model, build_density(model, fine_grid), fine_grid)
    change = refinement_change(coarse.omega_certified, fine.omega_certified)

    print(f"[verify] omega={coarse.omega_certified!r}")
    print(f"[verify] argmax={coarse.certificate.get('argmax')}")
    print(f"[verify] refined grid={fine_grid.shape} omega={fine.omega_certified!r} change={change:.3f}%")

    results = {
        "omega": coarse.omega_certified,
        "argmax": coarse.certificate.get("argmax"),
        "normalizer": coarse.normalizer,
        "family": coarse.family,
        "omega_refined": fine.omega_certified,
        "refinement_change_pct": change,
        "grid": grid.describe(),
    }
    path = outputs.write_json_atomic(out_dir / "certificate.json", results)
    manifest = outputs.write_manifest(
        out_dir, "verify-measure", rc.to_dict(), [path], results, {"total": time.perf_counter() - start}
    )
    print(f"[DONE] manifest={manifest}")
    return 0


def main(argv=None) -> int:
    from ObstaclePricer.tools.cli import main as cli_main

    return cli_main(["verify-measure"] + list(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    raise SystemExit(main())
