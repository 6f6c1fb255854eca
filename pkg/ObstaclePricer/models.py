"""Catalog of pricing models, their excessive densities and payoff obstacles.

All coefficient callbacks are vectorized: they take an (m, dim) array of
states and return (m, dim) drifts, (m, dim, k) diffusion factors, (m, dim, dim)
covariances or (m,) scalars.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
import logging
import math
from types import MappingProxyType
from typing import Any, Callable, Mapping, Optional, Sequence, Tuple
import warnings

import numpy as np
from scipy.special import gamma as gamma_fn

from . import config
from .errors import ConstraintViolated, MissingParam, RatioUnbounded, UnsupportedModel
from .grid import Box, Grid, make_grid

logger = logging.getLogger(__name__)

Coefficient = Callable[[np.ndarray], np.ndarray]


class ModelName(str, Enum):
    GBM1D = "GBM1D"
    BASKET_ND = "BasketND"
    HESTON_LOG = "HestonLog"
    ASIAN_REGULARIZED = "AsianRegularized"
    CUSTOM = "Custom"


def as_points(x, dim: int) -> np.ndarray:
    """Coerce a point or a batch of points to an (m, dim) float array."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1) if dim == 1 else arr.reshape(1, -1)
    if arr.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class ModelSpec:
    name: ModelName
    dim: int
    drift: Coefficient
    diffusion: Coefficient
    discount_rate: Coefficient
    params: Mapping[str, Any]
    default_box: Box
    covariance_fn: Optional[Coefficient] = None
    state_floor: Tuple[Optional[float], ...] = ()
    multiplicative: Tuple[bool, ...] = ()
    experimental: bool = False

    def b(self, x) -> np.ndarray:
        return np.asarray(self.drift(as_points(x, self.dim)), dtype=float)

    def sigma(self, x) -> np.ndarray:
        return np.asarray(self.diffusion(as_points(x, self.dim)), dtype=float)

    def c(self, x) -> np.ndarray:
        pts = as_points(x, self.dim)
        return np.broadcast_to(np.asarray(self.discount_rate(pts), dtype=float), (len(pts),)).copy()

    def covariance(self, x) -> np.ndarray:
        pts = as_points(x, self.dim)
        if self.covariance_fn is not None:
            return np.asarray(self.covariance_fn(pts), dtype=float)
        s = self.sigma(pts)
        return np.einsum("mik,mjk->mij", s, s)

    def floored(self, x: np.ndarray) -> np.ndarray:
        """State with the simulation floor applied (full truncation)."""
        if not self.state_floor:
            return x
        out = x.copy()
        for i, lo in enumerate(self.state_floor):
            if lo is not None:
                np.maximum(out[:, i], lo, out=out[:, i])
        return out


def _require(params: Mapping[str, Any], model: str, *names: str) -> None:
    missing = [n for n in names if params.get(n) is None]
    if missing:
        raise MissingParam(f"{model} requires parameter(s) {', '.join(missing)}", model=model, missing=missing)


def _constant_rate(r: float) -> Coefficient:
    return lambda x: np.full(len(x), r)


def _local_vol(params: Mapping[str, Any]) -> Callable[[np.ndarray], np.ndarray]:
    vol_fn = params.get("vol_fn")
    if vol_fn is not None:
        return lambda s: np.asarray(vol_fn(s), dtype=float) * np.ones_like(s)
    vol = float(params["vol"])
    return lambda s: np.full_like(s, vol)


def _gbm1d(params: Mapping[str, Any]) -> ModelSpec:
    if params.get("vol_fn") is None:
        _require(params, "GBM1D", "r", "vol")
    else:
        _require(params, "GBM1D", "r")
    r = float(params["r"])
    if params.get("vol") is not None and float(params["vol"]) < 0:
        raise ConstraintViolated("volatility must be nonnegative", constraint="vol >= 0", vol=params["vol"])
    vol = _local_vol(params)
    return ModelSpec(
        name=ModelName.GBM1D,
        dim=1,
        drift=lambda x: r * x,
        diffusion=lambda x: (x[:, 0] * vol(x[:, 0]))[:, None, None],
        discount_rate=_constant_rate(r),
        params=params,
        default_box=((-8.0, 8.0),),
        multiplicative=(True,),
    )


def _basket_sigma(params: Mapping[str, Any], n: int) -> np.ndarray:
    if params.get("sigma") is not None:
        sig = np.asarray(params["sigma"], dtype=float)
        if sig.shape != (n, n):
            raise ConstraintViolated("sigma must be an n x n matrix", constraint="sigma shape", shape=sig.shape, n=n)
        return sig
    _require(params, "BasketND", "vol")
    vol = np.broadcast_to(np.asarray(params["vol"], dtype=float), (n,))
    if np.any(vol < 0):
        raise ConstraintViolated("volatilities must be nonnegative", constraint="vol >= 0")
    rho = float(params.get("correlation", 0.0))
    corr = (1.0 - rho) * np.eye(n) + rho * np.ones((n, n))
    try:
        chol = np.linalg.cholesky(corr)
    except np.linalg.LinAlgError as exc:
        raise ConstraintViolated(
            "equicorrelation matrix is not positive definite",
            constraint="-1/(n-1) < correlation < 1",
            correlation=rho,
        ) from exc
    return vol[:, None] * chol


def _basket(params: Mapping[str, Any]) -> ModelSpec:
    _require(params, "BasketND", "r")
    weights = params.get("weights")
    if weights is None:
        _require(params, "BasketND", "n")
        n = int(params["n"])
        weights = np.full(n, 1.0 / n)
    weights = np.asarray(weights, dtype=float)
    n = len(weights)
    if params.get("n") is not None and int(params["n"]) != n:
        raise ConstraintViolated("n disagrees with the number of weights", constraint="n == len(weights)")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
        raise ConstraintViolated(
            "basket weights must be nonnegative and sum to 1",
            constraint="sum(weights) == 1, weights >= 0",
            weights=weights.tolist(),
        )
    r = float(params["r"])
    sig = _basket_sigma(params, n)
    cov = sig @ sig.T
    merged = dict(params)
    merged["weights"] = weights.tolist()
    return ModelSpec(
        name=ModelName.BASKET_ND,
        dim=n,
        drift=lambda x: r * x,
        diffusion=lambda x: x[:, :, None] * sig[None, :, :],
        discount_rate=_constant_rate(r),
        params=MappingProxyType(merged),
        default_box=tuple((-6.0, 6.0) for _ in range(n)),
        covariance_fn=lambda x: x[:, :, None] * x[:, None, :] * cov[None, :, :],
        multiplicative=tuple(True for _ in range(n)),
    )


def _heston(params: Mapping[str, Any]) -> ModelSpec:
    _require(params, "HestonLog", "kappa", "theta", "eta_vol")
    kappa = float(params["kappa"])
    theta = float(params["theta"])
    eta = float(params["eta_vol"])
    r = float(params.get("r", 0.0))
    corr = float(params.get("correlation", 0.0))
    v_min = float(params.get("v_min", config.V_MIN))
    if kappa <= 0 or theta <= 0 or eta <= 0:
        raise ConstraintViolated("kappa, theta and eta_vol must be positive", constraint="kappa, theta, eta_vol > 0")
    if not 2.0 * kappa * theta > eta * eta:
        raise ConstraintViolated(
            "Feller condition 2*kappa*theta > eta_vol**2 fails",
            constraint="feller: 2*kappa*theta > eta_vol**2",
            lhs=2.0 * kappa * theta,
            rhs=eta * eta,
        )
    if not -1.0 < corr < 1.0:
        raise ConstraintViolated("correlation must lie in (-1, 1)", constraint="|correlation| < 1", correlation=corr)
    if corr != 0.0:
        warnings.warn("correlated HestonLog is experimental: mixed-derivative rows are not monotone", UserWarning)
    tail = eta * math.sqrt(1.0 - corr * corr)

    def drift(x):
        v = x[:, 1]
        return np.stack([r - 0.5 * v, kappa * (theta - v)], axis=1)

    def diffusion(x):
        sv = np.sqrt(np.maximum(x[:, 1], 0.0))
        out = np.zeros((len(x), 2, 2))
        out[:, 0, 0] = sv
        out[:, 1, 0] = corr * eta * sv
        out[:, 1, 1] = tail * sv
        return out

    def covariance(x):
        v = x[:, 1]
        out = np.empty((len(x), 2, 2))
        out[:, 0, 0] = v
        out[:, 0, 1] = out[:, 1, 0] = corr * eta * v
        out[:, 1, 1] = eta * eta * v
        return out

    return ModelSpec(
        name=ModelName.HESTON_LOG,
        dim=2,
        drift=drift,
        diffusion=diffusion,
        discount_rate=_constant_rate(r),
        params=params,
        default_box=((-6.0, 6.0), (v_min, 2.0)),
        covariance_fn=covariance,
        state_floor=(None, 0.0),
        experimental=corr != 0.0,
    )


def _asian(params: Mapping[str, Any]) -> ModelSpec:
    if params.get("vol_fn") is None:
        _require(params, "AsianRegularized", "r", "vol", "delta")
    else:
        _require(params, "AsianRegularized", "r", "delta")
    r = float(params["r"])
    delta = float(params["delta"])
    if not delta > 0:
        raise ConstraintViolated("AsianRegularized requires delta > 0", constraint="delta > 0", delta=delta)
    vol = _local_vol(params)

    def drift(x):
        return np.stack([r * x[:, 0], (x[:, 0] - x[:, 1]) / (x[:, 2] + delta), np.ones(len(x))], axis=1)

    def diffusion(x):
        out = np.zeros((len(x), 3, 1))
        out[:, 0, 0] = x[:, 0] * vol(x[:, 0])
        return out

    return ModelSpec(
        name=ModelName.ASIAN_REGULARIZED,
        dim=3,
        drift=drift,
        diffusion=diffusion,
        discount_rate=_constant_rate(r),
        params=params,
        default_box=((-3.0, 3.0), (-3.0, 3.0), (0.0, 1.0)),
        multiplicative=(True, False, False),
    )


_FACTORIES = {
    ModelName.GBM1D: _gbm1d,
    ModelName.BASKET_ND: _basket,
    ModelName.HESTON_LOG: _heston,
    ModelName.ASIAN_REGULARIZED: _asian,
}


def make_model(name, params: Optional[Mapping[str, Any]] = None) -> ModelSpec:
    try:
        key = ModelName(name)
    except ValueError as exc:
        raise UnsupportedModel(f"unknown model {name!r}", model=str(name)) from exc
    if key not in _FACTORIES:
        raise UnsupportedModel("custom models are built with make_custom_model", model=key.value)
    params = MappingProxyType(dict(params or {}))
    model = _FACTORIES[key](params)
    logger.debug("model %s dim=%d params=%s", model.name.value, model.dim, dict(model.params))
    return model


def make_custom_model(
    dim: int,
    drift: Coefficient,
    diffusion: Coefficient,
    discount_rate=0.0,
    default_box: Optional[Box] = None,
    covariance: Optional[Coefficient] = None,
    params: Optional[Mapping[str, Any]] = None,
) -> ModelSpec:
    """User-supplied coefficient callbacks; the density must be supplied too."""
    rate = discount_rate if callable(discount_rate) else _constant_rate(float(discount_rate))
    return ModelSpec(
        name=ModelName.CUSTOM,
        dim=int(dim),
        drift=drift,
        diffusion=diffusion,
        discount_rate=rate,
        params=MappingProxyType(dict(params or {})),
        default_box=default_box or tuple((-1.0, 1.0) for _ in range(dim)),
        covariance_fn=covariance,
    )


def linear_growth_ratio(model: ModelSpec, points) -> float:
    """sup |sigma(x)| / (1 + |x|) over the sampled points."""
    pts = as_points(points, model.dim)
    s = np.linalg.norm(model.sigma(pts).reshape(len(pts), -1), axis=1)
    return float(np.max(s / (1.0 + np.linalg.norm(pts, axis=1))))


# ---------------------------------------------------------------------------
# Excessive densities
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExcessiveDensity:
    rho: Callable[[np.ndarray], np.ndarray]
    normalizer: float
    truncation: Box
    omega_certified: Optional[float] = None
    log_gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    log_hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    family: str = "custom"
    certificate: Mapping[str, Any] = field(default_factory=lambda: MappingProxyType({}))

    def pdf(self, x) -> np.ndarray:
        return self.normalizer * np.asarray(self.rho(x), dtype=float)

    def with_certificate(self, omega: float, **info: Any) -> "ExcessiveDensity":
        return replace(self, omega_certified=float(omega), certificate=MappingProxyType(dict(info)))

    def with_truncation(self, box: Box) -> "ExcessiveDensity":
        return replace(self, truncation=tuple(tuple(map(float, b)) for b in box), omega_certified=None)


def _radial_density(n: int, box: Box) -> ExcessiveDensity:
    m = n + 1
    p = 2 * m

    def rho(x):
        s = np.einsum("mi,mi->m", x, x)
        return 1.0 / (1.0 + s ** m)

    def grad(x):
        s = np.einsum("mi,mi->m", x, x)
        q = s ** m
        return -(p * s ** (m - 1) / (1.0 + q))[:, None] * x

    def hess(x):
        s = np.einsum("mi,mi->m", x, x)
        q = s ** m
        g = -(p * s ** (m - 1) / (1.0 + q))[:, None] * x
        eye = np.eye(x.shape[1])[None, :, :]
        d2q = p * s[:, None, None] ** (m - 2) * (
            2 * (m - 1) * x[:, :, None] * x[:, None, :] + s[:, None, None] * eye
        )
        return -d2q / (1.0 + q)[:, None, None] + g[:, :, None] * g[:, None, :]

    sphere = 2.0 * math.pi ** (n / 2.0) / gamma_fn(n / 2.0)
    mass = sphere * (math.pi / p) / math.sin(math.pi * n / p)
    return ExcessiveDensity(
        rho=rho,
        normalizer=1.0 / mass,
        truncation=box,
        log_gradient=grad,
        log_hessian=hess,
        family="radial",
    )


def _heston_density(box: Box) -> ExcessiveDensity:
    def rho(x):
        d = 1.0 + x[:, 0] ** 2 + x[:, 1] ** 2
        return np.where(x[:, 1] >= 0.0, 1.0 / d, 0.0)

    def grad(x):
        d = 1.0 + x[:, 0] ** 2 + x[:, 1] ** 2
        return -2.0 * x / d[:, None]

    def hess(x):
        d = 1.0 + x[:, 0] ** 2 + x[:, 1] ** 2
        g = -2.0 * x / d[:, None]
        return -2.0 * np.eye(2)[None, :, :] / d[:, None, None] + g[:, :, None] * g[:, None, :]

    # not integrable on R x R+: normalize over the truncation box
    quad = make_grid(box, 401)
    mass = float(np.sum(np.where(quad.nodes()[:, 1] >= 0.0, rho(quad.nodes()), 0.0) * quad.cell_volumes()))
    return ExcessiveDensity(
        rho=rho,
        normalizer=1.0 / mass,
        truncation=box,
        log_gradient=grad,
        log_hessian=hess,
        family="heston",
    )


def _asian_density(n: int, box: Box) -> ExcessiveDensity:
    q = 2 * n + 1

    def rho(x):
        z = x[:, 0] - x[:, 1]
        s = x[:, 2]
        val = (1.0 + np.abs(x[:, 0])) ** (-q) * (1.0 + np.abs(z)) ** (-q) * (1.0 + np.abs(s)) ** (-2)
        return np.where(s >= 0.0, val, 0.0)

    def grad(x):
        z = x[:, 0] - x[:, 1]
        gz = -q * np.sign(z) / (1.0 + np.abs(z))
        out = np.empty_like(x)
        out[:, 0] = -q * np.sign(x[:, 0]) / (1.0 + np.abs(x[:, 0])) + gz
        out[:, 1] = -gz
        out[:, 2] = -2.0 / (1.0 + x[:, 2])
        return out

    def hess(x):
        z = x[:, 0] - x[:, 1]
        hz = q / (1.0 + np.abs(z)) ** 2
        out = np.zeros((len(x), 3, 3))
        out[:, 0, 0] = q / (1.0 + np.abs(x[:, 0])) ** 2 + hz
        out[:, 0, 1] = out[:, 1, 0] = -hz
        out[:, 1, 1] = hz
        out[:, 2, 2] = 2.0 / (1.0 + x[:, 2]) ** 2
        return out

    # each factor integrates to 1/n over R (x and y) and to 1 over R+ (s)
    return ExcessiveDensity(
        rho=rho,
        normalizer=float(n * n),
        truncation=box,
        log_gradient=grad,
        log_hessian=hess,
        family="asian",
    )


def make_excessive_density(model: ModelSpec, box: Optional[Box] = None) -> ExcessiveDensity:
    box = tuple(tuple(map(float, b)) for b in (box or model.default_box))
    if model.name in (ModelName.GBM1D, ModelName.BASKET_ND):
        density = _radial_density(model.dim, box)
    elif model.name is ModelName.HESTON_LOG:
        density = _heston_density(box)
    elif model.name is ModelName.ASIAN_REGULARIZED:
        density = _asian_density(int(model.params.get("n", 1)), box)
    else:
        raise UnsupportedModel("no catalog density for this model; supply an ExcessiveDensity", model=model.name.value)
    logger.debug("density %s normalizer=%.6g box=%s", density.family, density.normalizer, box)
    return density


def _grows_toward_edge(grid: Grid, ratio: np.ndarray, node: int, run: int = 5) -> bool:
    idx = [int(i) for i in grid.unflatten(node)]
    values = ratio.reshape(grid.shape)
    for axis, n in enumerate(grid.shape):
        if idx[axis] not in (0, n - 1):
            continue
        sl = list(idx)
        sl[axis] = slice(None)
        line = values[tuple(sl)]
        if idx[axis] == 0:
            line = line[::-1]
        tail = line[-min(run, n):]
        if np.all(np.diff(tail) > 0.0):
            return True
    return False


def certify_excessive(
    model: ModelSpec,
    density: ExcessiveDensity,
    grid: Grid,
    cap: Optional[float] = None,
) -> ExcessiveDensity:
    from .discretization import apply_adjoint_to_density

    cap = config.RATIO_CAP if cap is None else cap
    ratio = apply_adjoint_to_density(model, grid, density)
    nodes = grid.nodes()
    bad = ~np.isfinite(ratio)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise RatioUnbounded("adjoint ratio is not finite", node=k, coords=nodes[k].tolist(), ratio=float(ratio[k]))
    k = int(np.argmax(ratio))
    omega = float(ratio[k])
    if omega > cap:
        if _grows_toward_edge(grid, ratio, k):
            raise RatioUnbounded(
                "adjoint ratio grows toward the box edge above the cap",
                node=k,
                coords=nodes[k].tolist(),
                ratio=omega,
                cap=cap,
            )
        logger.warning("adjoint ratio %.3g exceeds cap at interior node %s", omega, nodes[k].tolist())
    logger.info("certified omega=%.6g at %s on grid %s", omega, nodes[k].tolist(), grid.shape)
    return density.with_certificate(
        omega,
        argmax=nodes[k].tolist(),
        grid_shape=list(grid.shape),
        box=[list(b) for b in grid.box],
    )


# ---------------------------------------------------------------------------
# Obstacles
# ---------------------------------------------------------------------------

OBSTACLE_KINDS = ("put", "call", "basket_put", "margrabe", "asian_put_on_Y", "custom")


@dataclass(frozen=True, eq=False)
class ObstacleSpec:
    kind: str
    dim: int
    payoff: Callable[[float, np.ndarray], np.ndarray]
    time_dependent: bool
    lipschitz_const: float
    convexity_flag: bool
    params: Mapping[str, Any]
    underlying_payoff: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    scale: float = 1.0

    def __call__(self, t: float, x) -> np.ndarray:
        return np.asarray(self.payoff(float(t), as_points(x, self.dim)), dtype=float)

    def on_grid(self, grid: Grid, t: float) -> np.ndarray:
        return self(t, grid.nodes())


def _strike(params: Mapping[str, Any], kind: str) -> Tuple[float, float]:
    k = params.get("strike", params.get("k"))
    if k is None:
        raise MissingParam(f"{kind} obstacle requires a strike", kind=kind, missing=["strike"])
    return float(k), float(params.get("strike_growth", 0.0))


def make_obstacle(kind: str, params: Optional[Mapping[str, Any]] = None, model: Optional[ModelSpec] = None) -> ObstacleSpec:
    params = MappingProxyType(dict(params or {}))
    if kind not in OBSTACLE_KINDS:
        raise UnsupportedModel(f"unknown obstacle kind {kind!r}", kind=kind)
    heston = model is not None and model.name is ModelName.HESTON_LOG

    if kind in ("put", "call"):
        k, growth = _strike(params, kind)
        sign = 1.0 if kind == "put" else -1.0

        def price_payoff(t, s):
            return np.maximum(sign * (k * math.exp(growth * t) - s[:, 0]), 0.0)

        if heston:
            def payoff(t, x):
                return price_payoff(t, np.exp(x[:, :1]))
            lip = k if kind == "put" else math.inf
            dim = 2
        else:
            payoff = price_payoff
            lip = 1.0
            dim = model.dim if model is not None else 1
        return ObstacleSpec(
            kind=kind,
            dim=dim,
            payoff=payoff,
            time_dependent=growth != 0.0,
            lipschitz_const=lip,
            convexity_flag=True,
            params=params,
            underlying_payoff=price_payoff if heston else None,
            scale=k,
        )

    if kind == "basket_put":
        k, growth = _strike(params, kind)
        weights = params.get("weights")
        if weights is None and model is not None:
            weights = model.params.get("weights")
        if weights is None:
            raise MissingParam("basket_put requires weights", kind=kind, missing=["weights"])
        lam = np.asarray(weights, dtype=float)
        return ObstacleSpec(
            kind=kind,
            dim=len(lam),
            payoff=lambda t, x: np.maximum(k * math.exp(growth * t) - x @ lam, 0.0),
            time_dependent=growth != 0.0,
            lipschitz_const=float(np.linalg.norm(lam)),
            convexity_flag=True,
            params=params,
            scale=k,
        )

    if kind == "margrabe":
        i = int(params.get("i", 0))
        j = int(params.get("j", 1))
        if params.get("lam") is None:
            raise MissingParam("margrabe requires lam", kind=kind, missing=["lam"])
        lam = float(params["lam"])
        dim = model.dim if model is not None else max(i, j) + 1
        return ObstacleSpec(
            kind=kind,
            dim=dim,
            payoff=lambda t, x: np.maximum(x[:, i] - lam * x[:, j], 0.0),
            time_dependent=False,
            lipschitz_const=math.sqrt(1.0 + lam * lam),
            convexity_flag=True,
            params=params,
            scale=float(params.get("scale", 1.0)),
        )

    if kind == "asian_put_on_Y":
        k, growth = _strike(params, kind)
        return ObstacleSpec(
            kind=kind,
            dim=3,
            payoff=lambda t, x: np.maximum(k * math.exp(growth * t) - x[:, 1], 0.0),
            time_dependent=growth != 0.0,
            lipschitz_const=1.0,
            convexity_flag=True,
            params=params,
            scale=k,
        )

    fn = params.get("fn")
    if fn is None:
        raise MissingParam("custom obstacle requires fn(t, x)", kind=kind, missing=["fn"])
    dim = int(params.get("dim", model.dim if model is not None else 1))
    return ObstacleSpec(
        kind=kind,
        dim=dim,
        payoff=fn,
        time_dependent=bool(params.get("time_dependent", True)),
        lipschitz_const=float(params.get("lipschitz", math.inf)),
        convexity_flag=bool(params.get("convex", False)),
        params=params,
        scale=float(params.get("scale", 1.0)),
    )


def convexity_defect(model: ModelSpec, obstacle: ObstacleSpec, grid: Grid, t: float = 0.0) -> float:
    """min over interior nodes of the discrete 0.5*Tr[a D^2 g]; >= 0 for convex payoffs."""
    from .discretization import second_order_action

    action = second_order_action(model, grid, obstacle.on_grid(grid, t))
    interior = ~grid.boundary_mask()
    return float(np.min(action[interior]))


def sampled_lipschitz(obstacle: ObstacleSpec, points: Sequence, t: float = 0.0, seed: int = 0, pairs: int = 2000) -> float:
    """Largest difference quotient |g(x)-g(y)|/|x-y| over random pairs of sample points."""
    pts = as_points(points, obstacle.dim)
    rng = np.random.default_rng(seed)
    a = pts[rng.integers(0, len(pts), pairs)]
    b = pts[rng.integers(0, len(pts), pairs)]
    dist = np.linalg.norm(a - b, axis=1)
    keep = dist > 0
    num = np.abs(obstacle(t, a[keep]) - obstacle(t, b[keep]))
    return float(np.max(num / dist[keep])) if np.any(keep) else 0.0
