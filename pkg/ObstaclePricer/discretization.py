"""Sparse finite-difference realization of N = -L + cI on a tensor grid.

Second derivatives use three-point nonuniform central stencils, mixed
derivatives a four-point cross stencil and first derivatives first-order
upwinding (or central differences behind ``drift_scheme="central"``).
Boundary rows follow the grid's per-face ``BoundaryKind``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
import logging
import math
from pathlib import Path
from typing import Iterable, List, Optional, Tuple, Union
import warnings

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, MatrixRankWarning, bicgstab, spilu, spsolve

from . import config
from .errors import (
    BadLambda,
    LengthMismatch,
    NonMonotoneRow,
    NonPositiveDensity,
    SolveFailure,
    StencilFailure,
)
from .grid import BoundaryKind, Grid, quadrature_weights
from .models import ExcessiveDensity, ModelSpec, certify_excessive

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    matrix_N: sp.csr_matrix
    mu_weights: np.ndarray
    omega: float
    grid: Optional[Grid] = None
    dirichlet_mask: Optional[np.ndarray] = None
    nonmonotone_rows: int = 0
    omega_certified: Optional[float] = None
    omega_discrete: Optional[float] = None
    drift_scheme: str = "upwind"

    @property
    def size(self) -> int:
        return self.matrix_N.shape[0]

    @property
    def free_mask(self) -> np.ndarray:
        if self.dirichlet_mask is None:
            return np.ones(self.size, dtype=bool)
        return ~self.dirichlet_mask

    @classmethod
    def from_matrix(cls, matrix, weights=None, omega: float = 0.0) -> "DiscreteOperator":
        """Wrap an explicit matrix N (toy operators, LCP instances)."""
        mat = sp.csr_matrix(matrix, dtype=float)
        n = mat.shape[0]
        w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
        if w.shape != (n,):
            raise LengthMismatch("weights must match the matrix size", size=n, weights=len(w))
        return cls(matrix_N=mat, mu_weights=w, omega=float(omega), dirichlet_mask=np.zeros(n, dtype=bool))

    def apply(self, u: np.ndarray) -> np.ndarray:
        _check_length(self, u)
        return self.matrix_N @ u

    def dump_coo(self, path: Union[str, Path]) -> Path:
        """Write the matrix as 'row col value' lines."""
        coo = self.matrix_N.tocoo()
        path = Path(path)
        with path.open("w", encoding="utf-8") as fh:
            fh.write(f"# {self.size} {self.size} {coo.nnz}\n")
            for r, c, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")
        return path


def _check_length(op: DiscreteOperator, *vectors: np.ndarray) -> None:
    for v in vectors:
        if np.shape(v) != (op.size,):
            raise LengthMismatch("vector length does not match the operator", size=op.size, got=list(np.shape(v)))


def _strides(shape: Tuple[int, ...]) -> List[int]:
    out = []
    acc = 1
    for n in reversed(shape):
        out.append(acc)
        acc *= n
    return list(reversed(out))


class _Triplets:
    def __init__(self) -> None:
        self.rows: List[np.ndarray] = []
        self.cols: List[np.ndarray] = []
        self.vals: List[np.ndarray] = []

    def add(self, r: np.ndarray, c: np.ndarray, v) -> None:
        v = np.broadcast_to(np.asarray(v, dtype=float), r.shape)
        self.rows.append(r)
        self.cols.append(c)
        self.vals.append(v)

    def matrix(self, n: int) -> sp.csr_matrix:
        if not self.rows:
            return sp.csr_matrix((n, n))
        mat = sp.coo_matrix(
            (np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=(n, n),
        ).tocsr()
        mat.sum_duplicates()
        mat.eliminate_zeros()
        return mat


def _check_spacing(grid: Grid) -> None:
    for axis, ax in enumerate(grid.axes):
        h = np.diff(ax)
        if not np.all(np.isfinite(h)) or np.any(h <= 0.0):
            k = int(np.flatnonzero(~(h > 0.0))[0]) if np.any(~(h > 0.0)) else 0
            raise StencilFailure("degenerate grid spacing", axis=axis, index=k)


def _second_order_terms(trip: _Triplets, grid: Grid, a: np.ndarray, rows: np.ndarray, sign: float) -> None:
    """sign * (1/2) sum_kl a_kl D_kl at the given rows (interior along each axis used)."""
    multi = grid.multi_indices()
    strides = _strides(grid.shape)
    for k in range(grid.dim):
        ax = grid.axes[k]
        i = multi[k]
        st = strides[k]
        sel = rows & (i > 0) & (i < grid.shape[k] - 1)
        r = np.flatnonzero(sel)
        ii = i[sel]
        hm = ax[ii] - ax[ii - 1]
        hp = ax[ii + 1] - ax[ii]
        wm = 2.0 / (hm * (hm + hp))
        wp = 2.0 / (hp * (hm + hp))
        half = 0.5 * sign * a[r, k, k]
        trip.add(r, r - st, half * wm)
        trip.add(r, r, -half * (wm + wp))
        trip.add(r, r + st, half * wp)
        for l in range(k + 1, grid.dim):
            j = multi[l]
            sel2 = sel & (j > 0) & (j < grid.shape[l] - 1)
            akl = a[:, k, l]
            sel2 &= akl != 0.0
            if not np.any(sel2):
                continue
            r2 = np.flatnonzero(sel2)
            ik = i[sel2]
            jl = j[sel2]
            hk = grid.axes[k][ik + 1] - grid.axes[k][ik - 1]
            hl = grid.axes[l][jl + 1] - grid.axes[l][jl - 1]
            w = sign * akl[r2] / (hk * hl)
            sl = strides[l]
            trip.add(r2, r2 + st + sl, w)
            trip.add(r2, r2 + st - sl, -w)
            trip.add(r2, r2 - st + sl, -w)
            trip.add(r2, r2 - st - sl, w)


def _drift_terms(trip: _Triplets, grid: Grid, b: np.ndarray, rows: np.ndarray, scheme: str) -> None:
    """-b.D at interior-along-axis rows (N carries the minus sign of L)."""
    multi = grid.multi_indices()
    strides = _strides(grid.shape)
    for k in range(grid.dim):
        ax = grid.axes[k]
        i = multi[k]
        st = strides[k]
        sel = rows & (i > 0) & (i < grid.shape[k] - 1)
        r = np.flatnonzero(sel)
        ii = i[sel]
        hm = ax[ii] - ax[ii - 1]
        hp = ax[ii + 1] - ax[ii]
        bk = b[r, k]
        if scheme == "upwind":
            fwd = np.where(bk > 0.0, bk / hp, 0.0)
            bwd = np.where(bk < 0.0, -bk / hm, 0.0)
            trip.add(r, r + st, -fwd)
            trip.add(r, r - st, -bwd)
            trip.add(r, r, fwd + bwd)
        else:
            cm = -hp / (hm * (hm + hp))
            c0 = (hp - hm) / (hm * hp)
            cp = hm / (hp * (hm + hp))
            trip.add(r, r - st, -bk * cm)
            trip.add(r, r, -bk * c0)
            trip.add(r, r + st, -bk * cp)


def _face_terms(trip: _Triplets, grid: Grid, a: np.ndarray, b: np.ndarray, rows: np.ndarray) -> None:
    multi = grid.multi_indices()
    strides = _strides(grid.shape)
    for k, kinds in enumerate(grid.boundary_kind):
        ax = grid.axes[k]
        n = grid.shape[k]
        st = strides[k]
        for side, kind in enumerate(kinds):
            if kind is BoundaryKind.DIRICHLET_PAYOFF:
                continue
            face = rows & (multi[k] == (0 if side == 0 else n - 1))
            r = np.flatnonzero(face)
            if side == 0:
                nb, h = r + st, ax[1] - ax[0]
            else:
                nb, h = r - st, ax[-1] - ax[-2]
            if kind is BoundaryKind.NEUMANN_ZERO:
                # mirror ghost node: (1/2) a u'' = a (u_nb - u) / h^2, no normal drift
                coef = a[r, k, k] / (h * h)
            else:
                bk = b[r, k]
                inward = bk > 0.0 if side == 0 else bk < 0.0
                coef = np.where(inward, np.abs(bk) / h, 0.0)
            trip.add(r, nb, -coef)
            trip.add(r, r, coef)


def _count_nonmonotone(mat: sp.csr_matrix, rows: np.ndarray) -> int:
    off = mat.tocoo()
    keep = (off.row != off.col) & (off.data > 0.0) & rows[off.row]
    return int(np.unique(off.row[keep]).size)


def assemble(
    model: ModelSpec,
    grid: Grid,
    density: ExcessiveDensity,
    drift_scheme: str = "upwind",
    measure_shift: bool = False,
) -> DiscreteOperator:
    if drift_scheme not in ("upwind", "central"):
        raise StencilFailure(f"unknown drift scheme {drift_scheme!r}", drift_scheme=drift_scheme)
    if model.dim != grid.dim:
        raise StencilFailure("model and grid dimensions differ", model_dim=model.dim, grid_dim=grid.dim)
    _check_spacing(grid)

    nodes = grid.nodes()
    a = model.covariance(nodes)
    b = model.b(nodes)
    c = model.c(nodes)
    for label, arr in (("covariance", a), ("drift", b), ("discount", c)):
        if not np.all(np.isfinite(arr)):
            raise StencilFailure(f"{label} is not finite on the grid", coefficient=label)

    dirichlet = grid.dirichlet_mask()
    active = ~dirichlet
    trip = _Triplets()
    idx = np.flatnonzero(active)
    trip.add(idx, idx, c[active])
    _second_order_terms(trip, grid, a, active, sign=-1.0)
    _drift_terms(trip, grid, b, active, drift_scheme)
    _face_terms(trip, grid, a, b, active)
    mat = trip.matrix(grid.size)

    bad_rows = _count_nonmonotone(mat, active)
    if bad_rows:
        warnings.warn(
            f"{bad_rows} assembled rows have positive off-diagonal entries ({drift_scheme} drift)",
            NonMonotoneRow,
        )

    if density.omega_certified is None:
        density = certify_excessive(model, density, grid)
    weights = quadrature_weights(grid, density)
    omega_cert = float(density.omega_certified)
    op = DiscreteOperator(
        matrix_N=mat,
        mu_weights=weights,
        omega=max(omega_cert, 0.0),
        grid=grid,
        dirichlet_mask=dirichlet,
        nonmonotone_rows=bad_rows,
        omega_certified=omega_cert,
        drift_scheme=drift_scheme,
    )
    if measure_shift:
        shift = discrete_accretivity_shift(op)
        op = replace(op, omega_discrete=shift, omega=max(op.omega, shift))
    logger.info(
        "assembled N: %d nodes, nnz=%d, omega=%.6g, nonmonotone rows=%d",
        grid.size,
        mat.nnz,
        op.omega,
        bad_rows,
    )
    return op


def second_order_action(model: ModelSpec, grid: Grid, values: np.ndarray) -> np.ndarray:
    """(1/2) sum_kl a_kl D_kl applied to nodal values; zero on boundary nodes."""
    a = model.covariance(grid.nodes())
    trip = _Triplets()
    _second_order_terms(trip, grid, a, ~grid.boundary_mask(), sign=1.0)
    return trip.matrix(grid.size) @ np.asarray(values, dtype=float)


# ---------------------------------------------------------------------------
# Formal adjoint applied to the density
# ---------------------------------------------------------------------------


def _fd_steps(x: np.ndarray) -> np.ndarray:
    return config.FD_REL_STEP * np.maximum(np.abs(x), config.FD_ABS_FLOOR)


def _shifted(x: np.ndarray, steps: Iterable[Tuple[int, np.ndarray]]) -> np.ndarray:
    y = x.copy()
    for axis, delta in steps:
        y[:, axis] += delta
    return y


def _bcast(h: np.ndarray, like: np.ndarray) -> np.ndarray:
    return h.reshape((-1,) + (1,) * (like.ndim - 1))


def _d1(fn, x: np.ndarray, axis: int, h: np.ndarray) -> np.ndarray:
    fp2 = fn(_shifted(x, [(axis, 2 * h)]))
    fp1 = fn(_shifted(x, [(axis, h)]))
    fm1 = fn(_shifted(x, [(axis, -h)]))
    fm2 = fn(_shifted(x, [(axis, -2 * h)]))
    return (-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * _bcast(h, fp1))


def _d2(fn, x: np.ndarray, axis: int, h: np.ndarray) -> np.ndarray:
    f0 = fn(x)
    fp2 = fn(_shifted(x, [(axis, 2 * h)]))
    fp1 = fn(_shifted(x, [(axis, h)]))
    fm1 = fn(_shifted(x, [(axis, -h)]))
    fm2 = fn(_shifted(x, [(axis, -2 * h)]))
    hh = _bcast(h, f0)
    return (-fp2 + 16.0 * fp1 - 30.0 * f0 + 16.0 * fm1 - fm2) / (12.0 * hh * hh)


def _d11(fn, x: np.ndarray, k: int, l: int, hk: np.ndarray, hl: np.ndarray) -> np.ndarray:
    def cross(sk, sl):
        fpp = fn(_shifted(x, [(k, sk), (l, sl)]))
        fpm = fn(_shifted(x, [(k, sk), (l, -sl)]))
        fmp = fn(_shifted(x, [(k, -sk), (l, sl)]))
        fmm = fn(_shifted(x, [(k, -sk), (l, -sl)]))
        return (fpp - fpm - fmp + fmm) / (4.0 * _bcast(sk * sl, fpp))

    # Richardson on the 2nd-order cross stencil gives 4th order
    return (4.0 * cross(0.5 * hk, 0.5 * hl) - cross(hk, hl)) / 3.0


def _ratio_analytic(model: ModelSpec, density: ExcessiveDensity, x: np.ndarray) -> np.ndarray:
    d = model.dim
    a = model.covariance(x)
    b = model.b(x)
    g = np.asarray(density.log_gradient(x), dtype=float)
    hess = np.asarray(density.log_hessian(x), dtype=float)
    steps = [_fd_steps(x[:, l]) for l in range(d)]

    div_a = np.zeros((len(x), d))
    dd_a = np.zeros(len(x))
    div_b = np.zeros(len(x))
    for l in range(d):
        da = _d1(model.covariance, x, l, steps[l])
        div_a += da[:, :, l]
        div_b += _d1(lambda y: model.b(y)[:, l], x, l, steps[l])
        dd_a += _d2(lambda y: model.covariance(y)[:, l, l], x, l, steps[l])
        for k in range(l + 1, d):
            if np.any(a[:, k, l] != 0.0):
                dd_a += 2.0 * _d11(lambda y: model.covariance(y)[:, k, l], x, k, l, steps[k], steps[l])

    second = hess + g[:, :, None] * g[:, None, :]
    diffusion = 0.5 * (dd_a + 2.0 * np.einsum("mi,mi->m", div_a, g) + np.einsum("mij,mij->m", a, second))
    transport = div_b + np.einsum("mi,mi->m", b, g)
    return diffusion - transport


def _ratio_products(model: ModelSpec, density: ExcessiveDensity, x: np.ndarray, rho: np.ndarray) -> np.ndarray:
    d = model.dim
    steps = [_fd_steps(x[:, l]) for l in range(d)]

    def a_rho(y):
        return model.covariance(y) * np.asarray(density.rho(y), dtype=float)[:, None, None]

    def b_rho(y):
        return model.b(y) * np.asarray(density.rho(y), dtype=float)[:, None]

    total = np.zeros(len(x))
    for l in range(d):
        total += 0.5 * _d2(lambda y: a_rho(y)[:, l, l], x, l, steps[l])
        total -= _d1(lambda y: b_rho(y)[:, l], x, l, steps[l])
        for k in range(l + 1, d):
            total += _d11(lambda y: a_rho(y)[:, k, l], x, k, l, steps[k], steps[l])
    return total / rho


def apply_adjoint_to_density(model: ModelSpec, grid: Grid, density: ExcessiveDensity) -> np.ndarray:
    """Nodewise (L0* rho) / rho."""
    x = grid.nodes()
    rho = np.asarray(density.rho(x), dtype=float)
    bad = ~(rho > 0.0) | ~np.isfinite(rho)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise NonPositiveDensity("density is not positive at a certificate node", node=k, coords=x[k].tolist(), rho=float(rho[k]))
    if density.log_gradient is not None and density.log_hessian is not None:
        return _ratio_analytic(model, density, x)
    return _ratio_products(model, density, x, rho)


# ---------------------------------------------------------------------------
# Linear algebra in L2(mu)
# ---------------------------------------------------------------------------


def solve_linear(matrix: sp.spmatrix, rhs: np.ndarray, tol: Optional[float] = None) -> np.ndarray:
    tol = config.LINEAR_TOL if tol is None else tol
    n = matrix.shape[0]
    if n <= config.DIRECT_SOLVE_MAX:
        with warnings.catch_warnings():
            warnings.simplefilter("error", MatrixRankWarning)
            try:
                u = spsolve(matrix.tocsc(), rhs)
            except (RuntimeError, MatrixRankWarning) as exc:
                raise SolveFailure(f"direct solve failed: {exc}", size=n) from exc
    else:
        ilu = spilu(matrix.tocsc(), drop_tol=1e-5, fill_factor=10)
        precond = LinearOperator((n, n), ilu.solve)
        u, info = bicgstab(matrix.tocsr(), rhs, rtol=tol, atol=0.0, M=precond, maxiter=10 * n)
        if info != 0:
            raise SolveFailure("iterative solve did not converge", size=n, info=int(info))
    u = np.asarray(u, dtype=float).ravel()
    residual = float(np.max(np.abs(matrix @ u - rhs))) if n else 0.0
    norm_a = float(abs(matrix).sum(axis=1).max()) if n else 0.0
    scale = norm_a * float(np.max(np.abs(u), initial=0.0)) + float(np.max(np.abs(rhs), initial=0.0))
    if not np.all(np.isfinite(u)) or residual > tol * max(scale, np.finfo(float).tiny):
        raise SolveFailure("linear solve residual above tolerance", residual=residual, scale=scale, size=n)
    return u


def resolvent(op: DiscreteOperator, lam: float, rhs: np.ndarray) -> np.ndarray:
    """u = (I + lam N)^{-1} rhs."""
    rhs = np.asarray(rhs, dtype=float)
    _check_length(op, rhs)
    if not math.isfinite(lam) or lam < 0.0:
        raise BadLambda("lambda must be a finite nonnegative number", lam=lam)
    if op.omega > 0.0 and lam * op.omega >= 1.0:
        raise BadLambda("lambda must lie below 1/omega", lam=lam, omega=op.omega)
    if lam == 0.0:
        return rhs.copy()
    if not np.all(np.isfinite(rhs)):
        raise SolveFailure("right-hand side is not finite")
    system = sp.identity(op.size, format="csr") + lam * op.matrix_N
    return solve_linear(system, rhs)


def yosida(op: DiscreteOperator, lam: float, u: np.ndarray) -> np.ndarray:
    """N_lam u = (u - (I + lam N)^{-1} u) / lam."""
    if not lam > 0.0:
        raise BadLambda("Yosida approximation needs lambda > 0", lam=lam)
    u = np.asarray(u, dtype=float)
    return (u - resolvent(op, lam, u)) / lam


def weighted_dot(op: DiscreteOperator, u: np.ndarray, v: np.ndarray) -> float:
    _check_length(op, u, v)
    return float(np.dot(op.mu_weights * u, v))


def weighted_norm(op: DiscreteOperator, u: np.ndarray) -> float:
    return math.sqrt(max(weighted_dot(op, u, u), 0.0))


def discrete_accretivity_shift(op: DiscreteOperator) -> float:
    """Smallest w with <N u, u>_mu >= -w |u|_mu^2 over u vanishing on Dirichlet nodes."""
    free = op.free_mask
    n = int(free.sum())
    if n > config.DENSE_EIG_MAX:
        raise SolveFailure(
            "accretivity shift needs a dense eigen-solve; grid too large",
            free_nodes=n,
            limit=config.DENSE_EIG_MAX,
        )
    if n == 0:
        return 0.0
    dense = op.matrix_N[free][:, free].toarray()
    w = op.mu_weights[free]
    weighted = w[:, None] * dense
    sym = 0.5 * (weighted + weighted.T)
    scale = 1.0 / np.sqrt(w)
    lowest = scipy.linalg.eigvalsh(scale[:, None] * sym * scale[None, :], subset_by_index=[0, 0])[0]
    logger.debug("discrete accretivity shift %.6g on %d free nodes", -lowest, n)
    return float(-lowest)


def positive_part_profile(op: DiscreteOperator, g: np.ndarray, lams: Iterable[float]) -> np.ndarray:
    """|(N_lam g)^+|_mu for each lam."""
    return np.array([weighted_norm(op, np.maximum(yosida(op, lam, g), 0.0)) for lam in lams])
