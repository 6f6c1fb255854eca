"""Tensor-product grids over truncated boxes.

Nodes are stored per axis; the flat node order is row-major (last axis
fastest), matching ``numpy.ravel_multi_index``.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
import logging
import math
from typing import TYPE_CHECKING, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import BadBox, BadSize, NonPositiveDensity

if TYPE_CHECKING:
    from .models import ExcessiveDensity

logger = logging.getLogger(__name__)

Box = Tuple[Tuple[float, float], ...]


class BoundaryKind(str, Enum):
    DIRICHLET_PAYOFF = "dirichlet_payoff"
    NEUMANN_ZERO = "neumann_zero"
    OUTFLOW_ONE_SIDED = "outflow_one_sided"


BoundarySpec = Union[None, str, BoundaryKind, Sequence]


@dataclass(frozen=True, eq=False)
class Grid:
    axes: Tuple[np.ndarray, ...]
    boundary_kind: Tuple[Tuple[BoundaryKind, BoundaryKind], ...]
    grading: str = "uniform"
    focus: Tuple[Optional[float], ...] = ()
    concentration: float = 0.1

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def box(self) -> Box:
        return tuple((float(a[0]), float(a[-1])) for a in self.axes)

    def nodes(self) -> np.ndarray:
        """All node coordinates as a (size, dim) array in flat order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def multi_indices(self) -> Tuple[np.ndarray, ...]:
        return np.unravel_index(np.arange(self.size), self.shape)

    def flatten(self, multi_index) -> Union[int, np.ndarray]:
        return np.ravel_multi_index(tuple(multi_index), self.shape)

    def unflatten(self, flat) -> Tuple:
        return np.unravel_index(flat, self.shape)

    def spacings(self, axis: int) -> np.ndarray:
        return np.diff(self.axes[axis])

    def face_mask(self, axis: int, side: int) -> np.ndarray:
        idx = self.multi_indices()[axis]
        target = 0 if side == 0 else self.shape[axis] - 1
        return idx == target

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        for axis in range(self.dim):
            mask |= self.face_mask(axis, 0) | self.face_mask(axis, 1)
        return mask

    def dirichlet_mask(self) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        for axis, kinds in enumerate(self.boundary_kind):
            for side, kind in enumerate(kinds):
                if kind is BoundaryKind.DIRICHLET_PAYOFF:
                    mask |= self.face_mask(axis, side)
        return mask

    def cell_volumes(self) -> np.ndarray:
        """Tensor trapezoid weights: the quadrature cell of every node."""
        vol = np.ones(1)
        for axis in self.axes:
            h = np.diff(axis)
            w = np.zeros(len(axis))
            w[:-1] += 0.5 * h
            w[1:] += 0.5 * h
            vol = np.multiply.outer(vol, w).ravel()
        return vol

    def refined(self, factor: int = 2) -> "Grid":
        """Same box, grading and boundaries with (n-1)*factor+1 nodes per axis."""
        sizes = [(n - 1) * factor + 1 for n in self.shape]
        return make_grid(
            self.box,
            sizes,
            grading=self.grading,
            focus=self.focus or None,
            concentration=self.concentration,
            boundary=[tuple(k) for k in self.boundary_kind],
        )

    def describe(self) -> dict:
        return {
            "box": [list(b) for b in self.box],
            "sizes": list(self.shape),
            "grading": self.grading,
            "focus": list(self.focus) if self.focus else None,
            "concentration": self.concentration,
            "boundary": [[k.value for k in kinds] for kinds in self.boundary_kind],
        }


def _as_box(box) -> Box:
    arr = list(box)
    if len(arr) == 2 and all(isinstance(v, (int, float, np.floating, np.integer)) for v in arr):
        arr = [arr]
    out = []
    for pair in arr:
        try:
            lo, hi = (float(pair[0]), float(pair[1]))
        except (TypeError, IndexError, ValueError) as exc:
            raise BadBox(f"box entry {pair!r} is not a (lo, hi) pair") from exc
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
            raise BadBox("box requires finite lo < hi on every axis", lo=lo, hi=hi, axis=len(out))
        out.append((lo, hi))
    if not out:
        raise BadBox("box has no axes")
    return tuple(out)


def _as_sizes(sizes, dim: int) -> Tuple[int, ...]:
    if isinstance(sizes, (int, np.integer)):
        sizes = [int(sizes)] * dim
    sizes = [int(s) for s in sizes]
    if len(sizes) != dim:
        raise BadSize("sizes must give one node count per axis", sizes=sizes, dim=dim)
    for axis, n in enumerate(sizes):
        if n < 3:
            raise BadSize("at least 3 nodes per axis are required", axis=axis, size=n)
    return tuple(sizes)


def _as_boundary(boundary: BoundarySpec, dim: int) -> Tuple[Tuple[BoundaryKind, BoundaryKind], ...]:
    if boundary is None:
        boundary = BoundaryKind.DIRICHLET_PAYOFF
    if isinstance(boundary, (str, BoundaryKind)):
        kind = BoundaryKind(boundary)
        return tuple((kind, kind) for _ in range(dim))
    entries = list(boundary)
    if len(entries) != dim:
        raise BadSize("boundary must list one entry per axis", dim=dim, entries=len(entries))
    out = []
    for entry in entries:
        if isinstance(entry, (str, BoundaryKind)):
            kind = BoundaryKind(entry)
            out.append((kind, kind))
        else:
            lo, hi = entry
            out.append((BoundaryKind(lo), BoundaryKind(hi)))
    return tuple(out)


def _geometric_axis(lo: float, hi: float, n: int, focus: float, concentration: float) -> np.ndarray:
    """sinh-graded axis clustering nodes at ``focus``, which lands exactly on a node."""
    c = concentration * (hi - lo)
    xi_lo = math.asinh((lo - focus) / c)
    xi_hi = math.asinh((hi - focus) / c)
    if not lo < focus < hi:
        xi = np.linspace(xi_lo, xi_hi, n)
        x = focus + c * np.sinh(xi)
    else:
        j = int(round(-xi_lo / (xi_hi - xi_lo) * (n - 1)))
        j = min(max(j, 1), n - 2)
        left = np.linspace(xi_lo, 0.0, j + 1)
        right = np.linspace(0.0, xi_hi, n - j)
        xi = np.concatenate([left, right[1:]])
        x = focus + c * np.sinh(xi)
        x[j] = focus
    x[0] = lo
    x[-1] = hi
    return x


def make_grid(
    box,
    sizes,
    grading: str = "uniform",
    focus: Union[None, float, Sequence[Optional[float]]] = None,
    concentration: float = 0.1,
    boundary: BoundarySpec = None,
) -> Grid:
    box = _as_box(box)
    dim = len(box)
    shape = _as_sizes(sizes, dim)
    if grading in ("geometric", "geometric-toward-strike"):
        grading = "geometric"
    elif grading != "uniform":
        raise BadSize(f"unknown grading {grading!r}", grading=grading)
    if focus is None or isinstance(focus, (int, float)):
        focus_t = tuple([focus] * dim) if focus is not None else tuple([None] * dim)
    else:
        focus_t = tuple(None if f is None else float(f) for f in focus)
        if len(focus_t) != dim:
            raise BadSize("focus must give one entry per axis", dim=dim)
    if grading == "geometric" and not concentration > 0:
        raise BadSize("concentration must be positive", concentration=concentration)

    axes = []
    for (lo, hi), n, f in zip(box, shape, focus_t):
        if grading == "geometric" and f is not None:
            axis = _geometric_axis(lo, hi, n, f, concentration)
        else:
            axis = np.linspace(lo, hi, n)
        if np.any(np.diff(axis) <= 0.0):
            raise BadSize("graded axis is not strictly increasing; raise concentration", lo=lo, hi=hi, size=n)
        axes.append(axis)

    grid = Grid(
        axes=tuple(axes),
        boundary_kind=_as_boundary(boundary, dim),
        grading=grading,
        focus=focus_t if grading == "geometric" else (),
        concentration=float(concentration),
    )
    logger.debug("grid %s nodes=%d grading=%s", grid.shape, grid.size, grading)
    return grid


def quadrature_weights(grid: Grid, density: "ExcessiveDensity") -> np.ndarray:
    """Per-node weights w_i = a * rho(x_i) * trapezoid cell volume."""
    rho = np.asarray(density.rho(grid.nodes()), dtype=float)
    bad = ~(rho > 0.0) | ~np.isfinite(rho)
    if np.any(bad):
        node = int(np.flatnonzero(bad)[0])
        raise NonPositiveDensity(
            "density is not positive on the grid",
            node=node,
            coords=grid.nodes()[node].tolist(),
            rho=float(rho[node]),
        )
    return density.normalizer * rho * grid.cell_volumes()
