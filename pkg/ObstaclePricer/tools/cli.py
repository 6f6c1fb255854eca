#!/usr/bin/env python3
from __future__ import annotations

"""
ObstaclePricer command line.

  price            solve the configured obstacle problem and run enabled oracles
  converge         run the configured ladder and write convergence.csv
  verify-measure   certify the excessive density and its refinement stability

Exit codes: 0 success, 2 configuration error, 3 solver error, 4 certification
failure. On failure a JSON error record goes to stderr and to error.json in
the output directory.
"""

import argparse
import json
import logging
from pathlib import Path
import sys
import warnings
from typing import Callable, Dict, Optional

_HERE = Path(__file__).resolve().parent
_PARENT = _HERE.parent.parent
if str(_PARENT) not in sys.path:
    sys.path.insert(0, str(_PARENT))

from ObstaclePricer import config
from ObstaclePricer.errors import NonMonotoneRow, PricerError, exit_status_for
from ObstaclePricer.tools.run_config import RunConfig, load_run_config

logger = logging.getLogger("ObstaclePricer.cli")


def _commands() -> Dict[str, Callable[[RunConfig], int]]:
    from ObstaclePricer.tools.converge import cmd_converge
    from ObstaclePricer.tools.price import cmd_price
    from ObstaclePricer.tools.verify_measure import cmd_verify_measure

    return {"price": cmd_price, "converge": cmd_converge, "verify-measure": cmd_verify_measure}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="obstaclepricer", description="Obstacle-problem pricing engine with oracles")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("price", "solve and write slices, free boundary and manifest"),
        ("converge", "run the configured ladder"),
        ("verify-measure", "certify the excessive density"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="RunConfig JSON (or a manifest.json from a previous run)")
        p.add_argument("--out", default=None, help="Output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, default=None, help="Monte Carlo seed (overrides seed)")
        p.add_argument("--jobs", type=int, default=None, help="Concurrent ladder rungs / MC batches (overrides jobs)")
        p.add_argument("-v", "--verbose", action="count", default=0, help="More logging (-v info, -vv debug)")
    return ap


def _setup_logging(verbose: int) -> None:
    level = {0: config.LOG_LEVEL.upper(), 1: "INFO"}.get(verbose, "DEBUG")
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(level)


def _error_out_dir(args: argparse.Namespace, rc: Optional[RunConfig]) -> Optional[Path]:
    if rc is not None:
        return rc.output_dir()
    if args.out:
        return Path(args.out).expanduser()
    return None


def _report(record: dict, out_dir: Optional[Path]) -> None:
    text = json.dumps(record, sort_keys=True)
    print(text, file=sys.stderr)
    if out_dir is None:
        return
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "error.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        logger.warning("could not write error.json: %s", exc)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    rc: Optional[RunConfig] = None
    try:
        rc = load_run_config(args.config, out=args.out, seed=args.seed, jobs=args.jobs)
        with warnings.catch_warnings():
            warnings.simplefilter("always", NonMonotoneRow)
            warnings.simplefilter("always", UserWarning)
            logging.captureWarnings(True)
            try:
                return int(_commands()[args.command](rc))
            finally:
                logging.captureWarnings(False)
    except PricerError as exc:
        _report(exc.to_record(), _error_out_dir(args, rc))
        return exc.exit_status
    except Exception as exc:  # noqa: BLE001
        logger.exception("unexpected failure in %s", args.command)
        record = {
            "error": "internal",
            "category": "SolverError",
            "message": f"{type(exc).__name__}: {exc}",
            "exit_status": exit_status_for(exc),
            "context": {},
        }
        _report(record, _error_out_dir(args, rc))
        return exit_status_for(exc)


if __name__ == "__main__":
    raise SystemExit(main())
