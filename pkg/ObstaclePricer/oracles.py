"""Independent references for the obstacle solver.

Binomial trees and Black-Scholes for one-dimensional GBM, least-squares
Monte Carlo for every catalog model and exact active-set enumeration for
tiny complementarity problems.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations, combinations_with_replacement
import logging
import math
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.stats import norm

from . import config
from .errors import BadSize, ConstraintViolated, MissingParam, NoSolution, SingularRegression
from .models import ModelSpec, ObstacleSpec, as_points

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OracleResult:
    value: float
    stderr: Optional[float] = None
    meta: Mapping[str, Any] = field(default_factory=dict)

    def describe(self) -> Dict[str, Any]:
        return {"value": self.value, "stderr": self.stderr, "meta": dict(self.meta)}


def _intrinsic(kind: str, spot, strike):
    if kind == "put":
        return np.maximum(strike - spot, 0.0)
    if kind == "call":
        return np.maximum(spot - strike, 0.0)
    raise ConstraintViolated(f"unknown option kind {kind!r}", constraint="kind in {put, call}")


def binomial_american(
    spot: float,
    strike: float,
    r: float,
    vol: float,
    T: float,
    steps: int,
    kind: str = "put",
    american: bool = True,
) -> OracleResult:
    """Cox-Ross-Rubinstein tree with early exercise max(continuation, payoff)."""
    if int(steps) < 1:
        raise BadSize("binomial tree needs at least one step", steps=steps)
    if vol < 0:
        raise ConstraintViolated("volatility must be nonnegative", constraint="vol >= 0", vol=vol)
    steps = int(steps)
    meta = {"steps": steps, "kind": kind, "american": american}
    if vol == 0.0 or T <= 0.0:
        # deterministic path s(t) = spot * e^{rt}
        t = np.linspace(0.0, max(T, 0.0), steps + 1)
        discounted = np.exp(-r * t) * _intrinsic(kind, spot * np.exp(r * t), strike)
        value = float(discounted.max() if american else discounted[-1])
        return OracleResult(value=value, stderr=None, meta=meta)

    dt = T / steps
    jump = vol * math.sqrt(dt)
    growth = math.exp(r * dt)
    up, down = math.exp(jump), math.exp(-jump)
    p = (growth - down) / (up - down)
    if not 0.0 <= p <= 1.0:
        raise ConstraintViolated("CRR probability outside [0, 1]; increase steps", constraint="0 <= p <= 1", p=p)
    disc = 1.0 / growth

    values = _intrinsic(kind, spot * np.exp(jump * (2.0 * np.arange(steps + 1) - steps)), strike)
    for i in range(steps - 1, -1, -1):
        values = disc * (p * values[1:] + (1.0 - p) * values[:-1])
        if american:
            prices = spot * np.exp(jump * (2.0 * np.arange(i + 1) - i))
            np.maximum(values, _intrinsic(kind, prices, strike), out=values)
    return OracleResult(value=float(values[0]), stderr=None, meta=meta)


def bs_european(spot: float, strike: float, r: float, vol: float, T: float, kind: str = "put") -> OracleResult:
    meta = {"kind": kind}
    if T <= 0.0:
        return OracleResult(value=float(_intrinsic(kind, spot, strike)), meta=meta)
    pv_strike = strike * math.exp(-r * T)
    sd = vol * math.sqrt(T)
    if sd <= 0.0 or spot <= 0.0:
        # zero-volatility (or zero-spot) limit of the closed form
        return OracleResult(value=float(_intrinsic(kind, spot, pv_strike)), meta=meta)
    d1 = (math.log(spot / strike) + (r + 0.5 * vol * vol) * T) / sd
    d2 = d1 - sd
    if kind == "call":
        value = spot * norm.cdf(d1) - pv_strike * norm.cdf(d2)
    elif kind == "put":
        value = pv_strike * norm.cdf(-d2) - spot * norm.cdf(-d1)
    else:
        raise ConstraintViolated(f"unknown option kind {kind!r}", constraint="kind in {put, call}")
    return OracleResult(value=float(value), meta=meta)


# ---------------------------------------------------------------------------
# Path simulation
# ---------------------------------------------------------------------------


def simulate_paths(
    model: ModelSpec,
    x0,
    T: float,
    n_steps: int,
    paths: int,
    rng: np.random.Generator,
    antithetic: bool = False,
    record: Optional[Sequence[int]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Euler-Maruyama paths with full truncation and log-Euler price coordinates.

    Returns states of shape (len(record), paths, dim) and discount factors
    exp(-int c) of shape (len(record), paths) at the recorded fine steps
    (all steps 0..n_steps by default).
    """
    x0 = as_points(x0, model.dim)[0]
    multiplicative = np.array(model.multiplicative or [False] * model.dim, dtype=bool)
    if np.any(x0[multiplicative] <= 0.0):
        raise ConstraintViolated("price-like coordinates must start positive", constraint="x0 > 0", x0=x0.tolist())
    if antithetic and paths % 2:
        raise BadSize("antithetic sampling needs an even path count", paths=paths)
    record = list(range(n_steps + 1)) if record is None else [int(k) for k in record]
    slot = {k: i for i, k in enumerate(record)}

    dt = T / n_steps
    sqdt = math.sqrt(dt)
    x = np.tile(x0, (paths, 1))
    log_disc = np.zeros(paths)
    factors = model.sigma(x0[None, :]).shape[2]
    states = np.empty((len(record), paths, model.dim))
    discount = np.empty((len(record), paths))
    if 0 in slot:
        states[slot[0]] = x
        discount[slot[0]] = 1.0

    for step in range(1, n_steps + 1):
        xf = model.floored(x)
        b = model.b(xf)
        s = model.sigma(xf)
        log_disc -= model.c(xf) * dt
        if antithetic:
            z = rng.standard_normal((paths // 2, factors))
            z = np.concatenate([z, -z])
        else:
            z = rng.standard_normal((paths, factors))
        noise = np.einsum("mdk,mk->md", s, z) * sqdt
        new = x + b * dt + noise
        if np.any(multiplicative):
            xi = x[:, multiplicative]
            var = np.einsum("mdk,mdk->md", s, s)[:, multiplicative]
            new[:, multiplicative] = xi * np.exp(
                (b[:, multiplicative] / xi - 0.5 * var / (xi * xi)) * dt + noise[:, multiplicative] / xi
            )
        x = new
        if step in slot:
            states[slot[step]] = x
            discount[slot[step]] = np.exp(log_disc)
    return states, discount


def _basis(x: np.ndarray, degree: int) -> np.ndarray:
    """Monomials up to ``degree`` in the standardized non-constant coordinates."""
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    keep = sd > 1e-12 * np.maximum(1.0, np.abs(mu))
    z = (x[:, keep] - mu[keep]) / sd[keep]
    cols = [np.ones(len(x))]
    for deg in range(1, degree + 1):
        for combo in combinations_with_replacement(range(z.shape[1]), deg):
            cols.append(np.prod(z[:, list(combo)], axis=1))
    return np.stack(cols, axis=1)


def _exercise_grid(T: float, exercise_dates, steps_per_date: int) -> Tuple[int, List[int]]:
    if isinstance(exercise_dates, (int, np.integer)):
        n = int(exercise_dates)
        if n < 1:
            raise BadSize("at least one exercise date is required", exercise_dates=n)
        return n * steps_per_date, [j * steps_per_date for j in range(1, n + 1)]
    dates = sorted(float(t) for t in exercise_dates)
    if not dates or dates[0] <= 0.0 or dates[-1] > T:
        raise BadSize("exercise dates must lie in (0, T]", dates=dates, T=T)
    if dates[-1] < T:
        dates.append(T)
    n_steps = len(dates) * steps_per_date
    idx = sorted({max(1, int(round(t / T * n_steps))) for t in dates})
    return n_steps, idx


def _cashflow_batch(
    model: ModelSpec,
    obstacle: ObstacleSpec,
    x0: np.ndarray,
    T: float,
    n_steps: int,
    record: List[int],
    paths: int,
    seed_seq: np.random.SeedSequence,
    antithetic: bool,
    degree: Optional[int],
) -> np.ndarray:
    rng = np.random.default_rng(seed_seq)
    states, discount = simulate_paths(model, x0, T, n_steps, paths, rng, antithetic=antithetic, record=record)
    dt = T / n_steps
    cash = obstacle.payoff(T, states[-1]) * discount[-1]
    if degree is None:
        return cash
    for j in range(len(record) - 2, -1, -1):
        t = record[j] * dt
        payoff = obstacle.payoff(t, states[j])
        itm = payoff > 0.0
        if not np.any(itm):
            continue
        basis = _basis(states[j][itm], degree)
        if basis.shape[0] <= basis.shape[1]:
            logger.debug("date %d: %d in-the-money paths, too few to regress", j, int(itm.sum()))
            continue
        coef, _, rank, _ = np.linalg.lstsq(basis, cash[itm], rcond=None)
        if rank < basis.shape[1]:
            raise SingularRegression(
                "regression basis is collinear; reduce basis_degree",
                date_index=j,
                rank=int(rank),
                columns=int(basis.shape[1]),
            )
        exercise_now = payoff[itm] * discount[j][itm] > basis @ coef
        hit = np.flatnonzero(itm)[exercise_now]
        cash[hit] = payoff[hit] * discount[j][hit]
    return cash


def _run_batches(
    model: ModelSpec,
    obstacle: ObstacleSpec,
    x0,
    T: float,
    n_steps: int,
    record: List[int],
    paths: int,
    seed: Optional[int],
    antithetic: bool,
    degree: Optional[int],
    batch_size: Optional[int],
    workers: int,
) -> Tuple[float, float, Dict[str, Any]]:
    if x0 is None:
        raise MissingParam("Monte Carlo oracles need a start point x0", missing=["x0"])
    if paths < 1000:
        raise BadSize("Monte Carlo oracles need at least 1000 paths", paths=paths)
    x0 = as_points(x0, model.dim)[0]
    batch = int(batch_size or config.LSMC_BATCH)
    if antithetic:
        batch += batch % 2
    sizes = [batch] * (paths // batch)
    if paths % batch:
        sizes.append(paths % batch + (paths % batch) % 2 if antithetic else paths % batch)
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(sizes))

    def run(i: int) -> np.ndarray:
        cash = _cashflow_batch(model, obstacle, x0, T, n_steps, record, sizes[i], children[i], antithetic, degree)
        if antithetic:
            half = sizes[i] // 2
            return 0.5 * (cash[:half] + cash[half:])
        return cash

    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(i) for i in range(len(sizes))]
    samples = np.concatenate(parts)
    value = float(samples.mean())
    stderr = float(samples.std(ddof=1) / math.sqrt(len(samples)))
    meta = {
        "paths": int(sum(sizes)),
        "batches": len(sizes),
        "seed": int(root.entropy) if seed is None else int(seed),
        "antithetic": bool(antithetic),
        "steps": n_steps,
    }
    return value, stderr, meta


def lsmc_american(
    model: ModelSpec,
    obstacle: ObstacleSpec,
    T: float,
    paths: int,
    exercise_dates: Union[int, Sequence[float]],
    basis_degree: int = 3,
    seed: Optional[int] = None,
    x0=None,
    steps_per_date: int = 4,
    antithetic: bool = False,
    batch_size: Optional[int] = None,
    workers: int = 1,
) -> OracleResult:
    """Longstaff-Schwartz estimate of the discounted optimal-stopping value at (0, x0)."""
    n_steps, record = _exercise_grid(T, exercise_dates, int(steps_per_date))
    value, stderr, meta = _run_batches(
        model, obstacle, x0, T, n_steps, record, int(paths), seed, antithetic, int(basis_degree), batch_size, workers
    )
    if len(record) > 1:
        value = max(value, float(obstacle(0.0, x0)[0]))
    meta.update(exercise_dates=len(record), basis_degree=int(basis_degree), steps_per_date=int(steps_per_date))
    logger.info("lsmc value %.6g +/- %.3g (%d paths)", value, stderr, meta["paths"])
    return OracleResult(value=value, stderr=stderr, meta=meta)


def mc_european(
    model: ModelSpec,
    obstacle: ObstacleSpec,
    T: float,
    paths: int,
    seed: Optional[int] = None,
    x0=None,
    steps: int = 50,
    antithetic: bool = False,
    batch_size: Optional[int] = None,
    workers: int = 1,
) -> OracleResult:
    """Discounted mean payoff at T on the same path generator as ``lsmc_american``."""
    value, stderr, meta = _run_batches(
        model, obstacle, x0, T, int(steps), [int(steps)], int(paths), seed, antithetic, None, batch_size, workers
    )
    return OracleResult(value=value, stderr=stderr, meta=meta)


# ---------------------------------------------------------------------------
# Exact complementarity
# ---------------------------------------------------------------------------


def _solve_with_contact(A: np.ndarray, q: np.ndarray, g: np.ndarray, contact: Tuple[int, ...]) -> np.ndarray:
    n = len(q)
    u = np.empty(n)
    fixed = np.zeros(n, dtype=bool)
    fixed[list(contact)] = True
    u[fixed] = g[fixed]
    free = ~fixed
    if np.any(free):
        u[free] = np.linalg.solve(A[np.ix_(free, free)], q[free] - A[np.ix_(free, fixed)] @ g[fixed])
    return u


def lcp_exact(A, q, g, tol: float = 1e-10) -> np.ndarray:
    """u >= g, Au - q >= 0, (u - g).(Au - q) = 0 by contact-set enumeration."""
    A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    q = np.asarray(q, dtype=float)
    g = np.asarray(g, dtype=float)
    n = len(q)
    if n > 20:
        raise BadSize("exact enumeration is limited to 20 unknowns", size=n)
    scale = tol * max(1.0, float(np.max(np.abs(q))), float(np.max(np.abs(g))))
    try:
        unconstrained = np.linalg.solve(A, q)
    except np.linalg.LinAlgError as exc:
        raise NoSolution("singular system matrix; is A an M-matrix?", reason=str(exc)) from exc
    # for an M-matrix u >= A^{-1} q, so nodes with g < A^{-1} q never touch
    candidates = tuple(int(i) for i in np.flatnonzero(g >= unconstrained - scale))
    best = (math.inf, None)
    for size in range(len(candidates) + 1):
        for contact in combinations(candidates, size):
            try:
                u = _solve_with_contact(A, q, g, contact)
            except np.linalg.LinAlgError:
                continue
            w = A @ u - q
            on = np.zeros(n, dtype=bool)
            on[list(contact)] = True
            violation = max(
                float(np.max(g - u, initial=0.0)),
                float(np.max(-w[on], initial=0.0)),
            )
            if violation <= scale:
                return u
            if violation < best[0]:
                best = (violation, contact)
    raise NoSolution(
        "no contact set satisfies the complementarity conditions; is A an M-matrix?",
        best_violation=best[0],
        best_contact=list(best[1]) if best[1] is not None else None,
    )
