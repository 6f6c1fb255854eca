"""Backward implicit-Euler marching for the obstacle problem.

Each step solves the discrete inclusion

    u + h N u + h eta = prev + h f,    u >= g,    eta in normal cone of {u >= g}

through a penalization, either the classic one

    theta + h N theta - (h/eps) (theta - g)^-            = rhs

or the bounded one

    theta + h N theta + h g1 (phi(theta - g) - 1) = rhs,    phi(s) = s / (eps + |s|)

with a damped Newton iteration. The multiplier eta is read off the converged
penalty term. With g1 = "auto" the bounded weight at each node is the push the
obstacle needs on that step, (g + h N g - rhs)^+ / h, which keeps theta >= g.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
import logging
import math
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from . import config
from .discretization import DiscreteOperator, resolvent, solve_linear, weighted_norm
from .errors import BadStep, ConstraintViolated, LengthMismatch, MissingParam, NewtonDiverged, PricerError
from .grid import Grid
from .models import ObstacleSpec

logger = logging.getLogger(__name__)

Source = Union[None, float, np.ndarray, Callable[[float, np.ndarray], np.ndarray]]
ProgressFn = Callable[[int, int], None]


class PenaltyKind(str, Enum):
    CLASSIC = "classic"
    BOUNDED = "bounded"


AUTO_G1 = "auto"


@dataclass(frozen=True)
class SolverConfig:
    steps: int = 100
    penalty: PenaltyKind = PenaltyKind.CLASSIC
    epsilon: float = 1e-5
    epsilon_schedule: Optional[Tuple[float, ...]] = None
    g1: Union[str, float, np.ndarray] = AUTO_G1
    newton_tol: float = 1e-8
    newton_max_iter: int = 50
    record_multiplier: bool = True
    tol_contact: Optional[float] = None

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "penalty", PenaltyKind(self.penalty))
        except ValueError as exc:
            raise ConstraintViolated(f"unknown penalty {self.penalty!r}", constraint="penalty in {classic, bounded}") from exc
        if int(self.steps) < 1:
            raise ConstraintViolated("steps must be >= 1", constraint="steps >= 1", steps=self.steps)
        if not self.epsilon > 0:
            raise ConstraintViolated("epsilon must be positive", constraint="epsilon > 0", epsilon=self.epsilon)
        if not self.newton_tol > 0:
            raise ConstraintViolated("newton_tol must be positive", constraint="newton_tol > 0")
        if int(self.newton_max_iter) < 1:
            raise ConstraintViolated("newton_max_iter must be >= 1", constraint="newton_max_iter >= 1")
        if self.epsilon_schedule is not None:
            sched = tuple(float(e) for e in self.epsilon_schedule)
            if not sched or any(e <= 0 for e in sched) or any(b >= a for a, b in zip(sched, sched[1:])):
                raise ConstraintViolated(
                    "epsilon_schedule must be a strictly decreasing sequence of positive values",
                    constraint="epsilon_schedule decreasing, > 0",
                )
            object.__setattr__(self, "epsilon_schedule", sched)
        if isinstance(self.g1, str):
            if self.g1 != AUTO_G1:
                raise ConstraintViolated(f"unknown g1 {self.g1!r}", constraint="g1 >= 0 or 'auto'")
        elif np.any(np.asarray(self.g1, dtype=float) < 0):
            raise ConstraintViolated("g1 must be nonnegative", constraint="g1 >= 0")
        object.__setattr__(self, "steps", int(self.steps))

    def epsilons(self) -> Tuple[float, ...]:
        return self.epsilon_schedule if self.epsilon_schedule else (float(self.epsilon),)

    def contact_tol(self, scale: float = 1.0) -> float:
        if self.tol_contact is not None:
            return float(self.tol_contact)
        return config.TOL_CONTACT_REL * max(abs(scale), 1.0)

    def describe(self) -> dict:
        if isinstance(self.g1, str):
            g1 = self.g1
        else:
            g1 = float(self.g1) if np.ndim(self.g1) == 0 else "per-node"
        return {
            "steps": self.steps,
            "penalty": self.penalty.value,
            "epsilon": self.epsilon,
            "epsilon_schedule": list(self.epsilon_schedule) if self.epsilon_schedule else None,
            "g1": g1,
            "newton_tol": self.newton_tol,
            "newton_max_iter": self.newton_max_iter,
            "record_multiplier": self.record_multiplier,
            "tol_contact": self.tol_contact,
        }


@dataclass(frozen=True, eq=False)
class SolutionField:
    times: np.ndarray
    values: np.ndarray
    eta: Optional[np.ndarray]
    g_values: np.ndarray
    residuals: np.ndarray
    violations: np.ndarray
    newton_iterations: np.ndarray
    grid: Optional[Grid] = None
    tol_contact: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    def probe(self, point, t_index: int = 0) -> float:
        """Linear interpolation of u(t_k, .) at ``point``."""
        from scipy.interpolate import RegularGridInterpolator

        if self.grid is None:
            raise LengthMismatch("probing needs a grid-backed solution")
        pt = np.atleast_1d(np.asarray(point, dtype=float))
        if self.grid.dim == 1:
            return float(np.interp(pt[0], self.grid.axes[0], self.values[t_index]))
        interp = RegularGridInterpolator(self.grid.axes, self.values[t_index].reshape(self.grid.shape))
        return float(interp(pt[None, :])[0])


# ---------------------------------------------------------------------------
# Penalized Newton solves
# ---------------------------------------------------------------------------


def _sup(v: np.ndarray) -> float:
    return float(np.max(np.abs(v), initial=0.0))


def _newton(
    system: sp.csr_matrix,
    rhs: np.ndarray,
    residual: Callable[[np.ndarray], np.ndarray],
    jac_diag: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    tol: float,
    max_iter: int,
    norm: Callable[[np.ndarray], float],
    active: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> Tuple[np.ndarray, int, float]:
    theta = x0.copy()
    scale = max(1.0, _sup(rhs))

    def size(F: np.ndarray) -> float:
        # both the weighted and the nodewise residual must meet the tolerance
        return max(norm(F), _sup(F))

    F = residual(theta)
    res = size(F)
    for it in range(1, max_iter + 1):
        if res <= tol * scale:
            return theta, it - 1, res
        used = active(theta) if active is not None else None
        jac = system + sp.diags(jac_diag(theta), format="csr")
        step = solve_linear(jac, -F)
        alpha = 1.0
        for _ in range(config.NEWTON_MAX_DAMPS + 1):
            trial = theta + alpha * step
            F_trial = residual(trial)
            if size(F_trial) < (1.0 - 1e-4 * alpha) * res:
                break
            alpha *= 0.5
        else:
            alpha = 1.0
            trial = theta + step
            F_trial = residual(trial)
        moved = alpha * _sup(step)
        theta, F = trial, F_trial
        res = size(F)
        # semismooth termination: a full step that keeps the active set solved its linear piece exactly
        if used is not None and alpha == 1.0 and np.array_equal(active(theta), used):
            return theta, it, res
        if moved <= 1e-15 * max(1.0, _sup(theta)):
            if res <= 1e3 * tol * scale:
                return theta, it, res
            break
    if res <= tol * scale:
        return theta, max_iter, res
    raise NewtonDiverged("penalized Newton iteration did not converge", residual=res, iterations=max_iter)


def _as_node_vector(value, n: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(value, dtype=float), (n,)).copy()


def penalized_solve_classic(
    op: DiscreteOperator,
    h: float,
    eps: float,
    rhs: np.ndarray,
    g_k: np.ndarray,
    tol: float = 1e-8,
    max_iter: int = 50,
    x0: Optional[np.ndarray] = None,
) -> np.ndarray:
    return _classic(op, h, eps, rhs, g_k, tol, max_iter, x0)[0]


def _classic(op, h, eps, rhs, g_k, tol, max_iter, x0):
    if not eps > 0:
        raise ConstraintViolated("epsilon must be positive", constraint="epsilon > 0", epsilon=eps)
    rhs = np.asarray(rhs, dtype=float)
    g_k = np.asarray(g_k, dtype=float)
    system = sp.identity(op.size, format="csr") + h * op.matrix_N
    weight = h / eps

    def residual(theta):
        return system @ theta - weight * np.maximum(g_k - theta, 0.0) - rhs

    def jac_diag(theta):
        return weight * (theta < g_k)

    start = rhs.copy() if x0 is None else np.asarray(x0, dtype=float)
    theta, its, res = _newton(
        system, rhs, residual, jac_diag, start, tol, max_iter, lambda v: weighted_norm(op, v), active=lambda t: t < g_k
    )
    logger.debug("classic penalty eps=%g converged in %d iterations (residual %.3g)", eps, its, res)
    return theta, its


def obstacle_force(op: DiscreteOperator, h: float, rhs: np.ndarray, g_k: np.ndarray) -> np.ndarray:
    """(g + hNg - rhs)^+ / h: the push needed to hold theta = g at each node."""
    g_k = np.asarray(g_k, dtype=float)
    force = np.maximum(g_k + h * (op.matrix_N @ g_k) - np.asarray(rhs, dtype=float), 0.0) / h
    force[~op.free_mask] = 0.0
    return force


def penalized_solve_bounded(
    op: DiscreteOperator,
    h: float,
    eps: float,
    g1,
    rhs: np.ndarray,
    g_k: np.ndarray,
    tol: float = 1e-8,
    max_iter: int = 50,
    x0: Optional[np.ndarray] = None,
) -> np.ndarray:
    return _bounded(op, h, eps, g1, rhs, g_k, tol, max_iter, x0)[0]


def _bounded_weight(op, h, g1, rhs, g_k) -> np.ndarray:
    if isinstance(g1, str):
        if g1 != AUTO_G1:
            raise ConstraintViolated(f"unknown g1 {g1!r}", constraint="g1 >= 0 or 'auto'")
        return obstacle_force(op, h, rhs, g_k)
    g1 = _as_node_vector(g1, op.size)
    if np.any(g1 < 0):
        raise ConstraintViolated("g1 must be nonnegative", constraint="g1 >= 0")
    return g1


def _bounded(op, h, eps, g1, rhs, g_k, tol, max_iter, x0):
    if not eps > 0:
        raise ConstraintViolated("epsilon must be positive", constraint="epsilon > 0", epsilon=eps)
    rhs = np.asarray(rhs, dtype=float)
    g_k = np.asarray(g_k, dtype=float)
    weight = h * _bounded_weight(op, h, g1, rhs, g_k)
    system = sp.identity(op.size, format="csr") + h * op.matrix_N

    def residual(theta):
        s = theta - g_k
        return system @ theta + weight * (s / (eps + np.abs(s)) - 1.0) - rhs

    def jac_diag(theta):
        return weight * eps / (eps + np.abs(theta - g_k)) ** 2

    start = rhs.copy() if x0 is None else np.asarray(x0, dtype=float)
    theta, its, res = _newton(system, rhs, residual, jac_diag, start, tol, max_iter, lambda v: weighted_norm(op, v))
    logger.debug("bounded penalty eps=%g converged in %d iterations (residual %.3g)", eps, its, res)
    return theta, its


def multiplier(cfg: SolverConfig, theta: np.ndarray, g_k: np.ndarray, eps: float, g1=None) -> np.ndarray:
    """eta from the penalty term divided by h; nonpositive by construction.

    The bounded penalty needs the resolved per-node weight when ``cfg.g1`` is "auto".
    """
    s = theta - g_k
    if cfg.penalty is PenaltyKind.CLASSIC:
        return -np.maximum(-s, 0.0) / eps
    if g1 is None:
        if isinstance(cfg.g1, str):
            raise MissingParam("the bounded multiplier needs the resolved g1 weight", g1=cfg.g1)
        g1 = cfg.g1
    g1 = _as_node_vector(g1, len(theta))
    return g1 * (s / (eps + np.abs(s)) - 1.0)


# ---------------------------------------------------------------------------
# Time stepping
# ---------------------------------------------------------------------------


def _step(op: DiscreteOperator, cfg: SolverConfig, prev, g_k, f_k, h) -> Tuple[np.ndarray, np.ndarray, int, np.ndarray]:
    if not h > 0 or h * op.omega >= 1.0:
        raise BadStep("time step must satisfy 0 < h*omega < 1", h=h, omega=op.omega)
    prev = np.asarray(prev, dtype=float)
    g_k = np.asarray(g_k, dtype=float)
    f_k = _as_node_vector(f_k, op.size)
    for v in (prev, g_k):
        if v.shape != (op.size,):
            raise LengthMismatch("vector length does not match the operator", size=op.size, got=list(v.shape))

    # Dirichlet rows of N are empty; they carry the obstacle of the current time level
    frozen = ~op.free_mask
    rhs = prev + h * f_k
    rhs[frozen] = g_k[frozen]

    g1 = None
    if cfg.penalty is PenaltyKind.BOUNDED:
        g1 = _bounded_weight(op, h, cfg.g1, rhs, g_k)
        g1[frozen] = 0.0

    theta = prev.copy()
    theta[frozen] = g_k[frozen]
    total = 0
    for eps in cfg.epsilons():
        if cfg.penalty is PenaltyKind.CLASSIC:
            theta, its = _classic(op, h, eps, rhs, g_k, cfg.newton_tol, cfg.newton_max_iter, theta)
        else:
            theta, its = _bounded(op, h, eps, g1, rhs, g_k, cfg.newton_tol, cfg.newton_max_iter, theta)
        total += its
    eta = multiplier(cfg, theta, g_k, cfg.epsilons()[-1], g1)
    return theta, eta, total, rhs


def implicit_step(
    op: DiscreteOperator,
    cfg: SolverConfig,
    prev: np.ndarray,
    g_k: np.ndarray,
    f_k,
    h: float,
) -> Tuple[np.ndarray, np.ndarray]:
    u, eta, _, _ = _step(op, cfg, prev, g_k, f_k, h)
    return u, eta


def complementarity_residual(
    op: DiscreteOperator,
    u: np.ndarray,
    eta: Optional[np.ndarray],
    g_k: np.ndarray,
    rhs: np.ndarray,
    h: float,
) -> float:
    """|min(u - g, (u + hNu - rhs)/h)|_mu, plus |eta^+|_mu when a multiplier is given."""
    u = np.asarray(u, dtype=float)
    pde = (u + h * (op.matrix_N @ u) - np.asarray(rhs, dtype=float)) / h
    gap = np.minimum(u - np.asarray(g_k, dtype=float), pde)
    gap[~op.free_mask] = 0.0
    total = weighted_norm(op, gap)
    if eta is not None:
        wrong_sign = np.maximum(np.asarray(eta, dtype=float), 0.0)
        wrong_sign[~op.free_mask] = 0.0
        total += weighted_norm(op, wrong_sign)
    return total


def _obstacle_values(obstacle, grid: Optional[Grid], t: float, n: int) -> np.ndarray:
    if isinstance(obstacle, ObstacleSpec):
        if grid is None:
            raise LengthMismatch("an ObstacleSpec needs a grid-backed operator")
        return obstacle.on_grid(grid, t)
    return _as_node_vector(obstacle, n)


def _source_values(f: Source, grid: Optional[Grid], t: float, n: int) -> np.ndarray:
    if f is None:
        return np.zeros(n)
    if callable(f):
        if grid is None:
            raise LengthMismatch("a callable source needs a grid-backed operator")
        return _as_node_vector(f(t, grid.nodes()), n)
    return _as_node_vector(f, n)


def backward_solve(
    op: DiscreteOperator,
    cfg: SolverConfig,
    obstacle: Union[ObstacleSpec, np.ndarray],
    f: Source = None,
    T: float = 1.0,
    progress: Optional[ProgressFn] = None,
) -> SolutionField:
    if not T > 0:
        raise BadStep("maturity must be positive", T=T)
    M = cfg.steps
    h = T / M
    if h * op.omega >= 1.0:
        raise BadStep("time step must satisfy h*omega < 1; increase steps", h=h, omega=op.omega, steps=M)
    n = op.size
    grid = op.grid
    times = np.linspace(0.0, T, M + 1)
    time_dependent = not isinstance(obstacle, ObstacleSpec) or obstacle.time_dependent
    scale = obstacle.scale if isinstance(obstacle, ObstacleSpec) else max(1.0, _sup(np.asarray(obstacle, dtype=float)))

    values = np.empty((M + 1, n))
    g_values = np.empty((M + 1, n))
    eta = np.zeros((M + 1, n)) if cfg.record_multiplier else None
    residuals = np.zeros(M + 1)
    violations = np.zeros(M + 1)
    iterations = np.zeros(M + 1, dtype=int)

    g_static = None if time_dependent else _obstacle_values(obstacle, grid, T, n)
    g_values[M] = g_static if g_static is not None else _obstacle_values(obstacle, grid, T, n)
    values[M] = g_values[M]

    for k in range(M - 1, -1, -1):
        t = float(times[k])
        try:
            g_k = g_static if g_static is not None else _obstacle_values(obstacle, grid, t, n)
            f_k = _source_values(f, grid, t, n)
            u, eta_k, its, rhs = _step(op, cfg, values[k + 1], g_k, f_k, h)
        except PricerError as exc:
            raise exc.add_context(time_index=k, time=t)
        values[k] = u
        g_values[k] = g_k
        if eta is not None:
            eta[k] = eta_k
        residuals[k] = complementarity_residual(op, u, eta_k, g_k, rhs, h)
        violations[k] = weighted_norm(op, np.maximum(g_k - u, 0.0))
        iterations[k] = its
        if progress is not None:
            progress(M - k, M)

    logger.info(
        "backward solve: %d steps, max residual %.3g, max violation %.3g, newton iterations %d",
        M,
        float(residuals.max()),
        float(violations.max()),
        int(iterations.sum()),
    )
    return SolutionField(
        times=times,
        values=values,
        eta=eta,
        g_values=g_values,
        residuals=residuals,
        violations=violations,
        newton_iterations=iterations,
        grid=grid,
        tol_contact=cfg.contact_tol(scale),
        info={"h": h, "omega": op.omega, "penalty": cfg.penalty.value, "tol_contact_fixed": cfg.tol_contact is not None},
    )


@dataclass(frozen=True, eq=False)
class FreeBoundary:
    time: float
    contact: np.ndarray
    exercise: np.ndarray
    boundary: Union[None, float, np.ndarray]
    second_axis: Optional[np.ndarray] = None


def free_boundary(
    sol: SolutionField,
    obstacle: Optional[ObstacleSpec],
    t_index: int,
    tol_contact: Optional[float] = None,
) -> FreeBoundary:
    """Contact/continuation split at t_k; in 1D the largest exercise abscissa, in 2D one per second-axis value."""
    if tol_contact is None:
        if obstacle is None or sol.info.get("tol_contact_fixed"):
            tol_contact = sol.tol_contact
        else:
            tol_contact = config.TOL_CONTACT_REL * max(abs(obstacle.scale), 1.0)
    u = sol.values[t_index]
    g = sol.g_values[t_index]
    contact = (u - g) <= tol_contact
    exercise = contact & (g > tol_contact)
    grid = sol.grid
    if grid is not None:
        exercise &= ~grid.boundary_mask()
    boundary: Union[None, float, np.ndarray] = None
    second = None
    if grid is not None and grid.dim == 1:
        x = grid.axes[0]
        boundary = float(x[exercise].max()) if np.any(exercise) else math.nan
    elif grid is not None and grid.dim == 2:
        ex = exercise.reshape(grid.shape)
        x = grid.axes[0]
        second = grid.axes[1]
        boundary = np.full(grid.shape[1], math.nan)
        for j in range(grid.shape[1]):
            col = ex[:, j]
            if np.any(col):
                boundary[j] = float(x[col].max())
    return FreeBoundary(
        time=float(sol.times[t_index]),
        contact=contact,
        exercise=exercise,
        boundary=boundary,
        second_axis=second,
    )


def semigroup_defect(op: DiscreteOperator, g: np.ndarray, t: float) -> float:
    """(1/t) |(g - P_t g)^+|_mu with P_t approximated by one resolvent step."""
    g = np.asarray(g, dtype=float)
    return weighted_norm(op, np.maximum(g - resolvent(op, t, g), 0.0)) / t
