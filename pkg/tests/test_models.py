import math

import numpy as np
import pytest

from ObstaclePricer.errors import ConstraintViolated, MissingParam, RatioUnbounded, UnsupportedModel
from ObstaclePricer.grid import make_grid
from ObstaclePricer.models import (
    ModelName,
    certify_excessive,
    convexity_defect,
    linear_growth_ratio,
    make_custom_model,
    make_excessive_density,
    make_model,
    make_obstacle,
    sampled_lipschitz,
)

HESTON = {"kappa": 2.0, "theta": 0.04, "eta_vol": 0.3}

CATALOG = [
    ("GBM1D", {"r": 0.05, "vol": 0.2}, [41]),
    ("BasketND", {"r": 0.05, "vol": 0.2, "n": 2}, [41, 41]),
    ("HestonLog", HESTON, [41, 41]),
    ("AsianRegularized", {"r": 0.05, "vol": 0.2, "delta": 0.05}, [21, 21, 11]),
]


def gbm_ratio(x, r, vol):
    t = x**4 / (1.0 + x**4)
    return vol**2 * (1.0 - 14.0 * t + 16.0 * t**2) + r * (4.0 * t - 1.0)


# ---------------------------------------------------------------------------
# make_model
# ---------------------------------------------------------------------------


def test_gbm_coefficients():
    m = make_model("GBM1D", {"r": 0.05, "vol": 0.2})
    assert m.dim == 1
    assert m.b(1.0)[0, 0] == pytest.approx(0.05)
    assert m.sigma(1.0)[0, 0, 0] == pytest.approx(0.2)
    assert m.c(1.0)[0] == pytest.approx(0.05)


def test_gbm_local_volatility_callback():
    m = make_model("GBM1D", {"r": 0.0, "vol_fn": lambda s: 0.1 + 0.1 * s})
    assert m.sigma(2.0)[0, 0, 0] == pytest.approx(2.0 * 0.3)


def test_heston_drift_vanishes_in_variance_at_theta():
    m = make_model("HestonLog", HESTON)
    np.testing.assert_allclose(m.b([0.0, 0.04])[0], [-0.02, 0.0], atol=1e-15)
    np.testing.assert_allclose(m.covariance([0.0, 0.04])[0], np.diag([0.04, 0.09 * 0.04]))


def test_heston_feller_violation_names_the_constraint():
    with pytest.raises(ConstraintViolated) as info:
        make_model("HestonLog", {"kappa": 1.0, "theta": 0.01, "eta_vol": 0.3})
    assert "feller" in info.value.context["constraint"]
    assert info.value.exit_status == 2


def test_correlated_heston_is_flagged_experimental():
    with pytest.warns(UserWarning):
        m = make_model("HestonLog", dict(HESTON, correlation=-0.5))
    assert m.experimental
    cov = m.covariance([0.0, 0.04])[0]
    assert cov[0, 1] == pytest.approx(-0.5 * 0.3 * 0.04)


def test_asian_needs_positive_delta():
    with pytest.raises(ConstraintViolated):
        make_model("AsianRegularized", {"r": 0.05, "vol": 0.2, "delta": 0.0})


def test_asian_drift():
    m = make_model("AsianRegularized", {"r": 0.05, "vol": 0.2, "delta": 0.05})
    np.testing.assert_allclose(m.b([2.0, 1.0, 0.45])[0], [0.1, 2.0, 1.0])


def test_basket_weights_must_sum_to_one():
    with pytest.raises(ConstraintViolated):
        make_model("BasketND", {"r": 0.05, "vol": 0.2, "weights": [0.7, 0.7]})
    with pytest.raises(ConstraintViolated):
        make_model("BasketND", {"r": 0.05, "vol": 0.2, "weights": [1.5, -0.5]})


def test_basket_covariance_matches_diffusion_factor():
    m = make_model("BasketND", {"r": 0.01, "vol": [0.2, 0.3], "correlation": 0.4, "weights": [0.5, 0.5]})
    x = np.array([[1.0, 2.0], [0.5, 1.5]])
    s = m.sigma(x)
    np.testing.assert_allclose(m.covariance(x), np.einsum("mik,mjk->mij", s, s), rtol=1e-12)


@pytest.mark.parametrize(
    "name,params,missing",
    [
        ("GBM1D", {"r": 0.05}, "vol"),
        ("HestonLog", {"kappa": 2.0, "theta": 0.04}, "eta_vol"),
        ("AsianRegularized", {"r": 0.05, "vol": 0.2}, "delta"),
    ],
)
def test_missing_parameters_are_named(name, params, missing):
    with pytest.raises(MissingParam) as info:
        make_model(name, params)
    assert missing in info.value.context["missing"]


def test_unknown_model_is_unsupported():
    with pytest.raises(UnsupportedModel):
        make_model("Merton", {})
    with pytest.raises(UnsupportedModel):
        make_model("Custom", {})


def test_linear_growth_of_gbm_diffusion():
    m = make_model("GBM1D", {"r": 0.05, "vol": 0.2})
    assert linear_growth_ratio(m, np.linspace(-50.0, 50.0, 101)) <= 0.2 + 1e-12


# ---------------------------------------------------------------------------
# Excessive densities
# ---------------------------------------------------------------------------


def test_radial_density_values():
    d1 = make_excessive_density(make_model("GBM1D", {"r": 0.05, "vol": 0.2}))
    np.testing.assert_allclose(d1.rho(np.array([[0.0], [1.0]])), [1.0, 0.5])
    assert d1.normalizer == pytest.approx(math.sqrt(2.0) / math.pi)
    d2 = make_excessive_density(make_model("BasketND", {"r": 0.05, "vol": 0.2, "n": 2}))
    assert d2.rho(np.array([[1.0, 0.0]]))[0] == pytest.approx(0.5)


def test_heston_density_values():
    d = make_excessive_density(make_model("HestonLog", HESTON))
    np.testing.assert_allclose(d.rho(np.array([[0.0, 0.0], [1.0, 1.0]])), [1.0, 1.0 / 3.0])


def test_asian_density_factorizes():
    d = make_excessive_density(make_model("AsianRegularized", {"r": 0.05, "vol": 0.2, "delta": 0.05}))
    x = np.array([[1.0, 0.0, 1.0]])
    assert d.rho(x)[0] == pytest.approx(2.0**-3 * 2.0**-3 * 2.0**-2)
    assert d.normalizer == 1.0


def _box_mass(density, grid):
    return float(np.sum(density.pdf(grid.nodes()) * grid.cell_volumes()))


def test_radial_mass_increases_to_one():
    density = make_excessive_density(make_model("GBM1D", {"r": 0.05, "vol": 0.2}))
    small = _box_mass(density, make_grid([(-3.0, 3.0)], 601))
    large = _box_mass(density, make_grid([(-40.0, 40.0)], 8001))
    assert small < large <= 1.0 + 1e-6
    assert large == pytest.approx(1.0, abs=1e-3)


def test_asian_mass_increases_but_stays_below_one():
    density = make_excessive_density(make_model("AsianRegularized", {"r": 0.05, "vol": 0.2, "delta": 0.05}))
    small = _box_mass(density, make_grid([(-2.0, 2.0), (-2.0, 2.0), (0.0, 2.0)], [41, 41, 41]))
    large = _box_mass(density, make_grid([(-6.0, 6.0), (-6.0, 6.0), (0.0, 6.0)], [61, 61, 61]))
    assert small < large < 1.0


def test_custom_model_has_no_catalog_density():
    m = make_custom_model(1, lambda x: np.zeros_like(x), lambda x: np.zeros((len(x), 1, 1)))
    assert m.name is ModelName.CUSTOM
    with pytest.raises(UnsupportedModel):
        make_excessive_density(m)


# ---------------------------------------------------------------------------
# certify_excessive
# ---------------------------------------------------------------------------


def test_zero_coefficients_certify_omega_zero():
    m = make_model("GBM1D", {"r": 0.0, "vol": 0.0})
    grid = make_grid(m.default_box, 101)
    cert = certify_excessive(m, make_excessive_density(m), grid)
    assert cert.omega_certified == 0.0


def test_gbm_certificate_matches_closed_form_ratio():
    m = make_model("GBM1D", {"r": 0.05, "vol": 0.2})
    grid = make_grid([(-8.0, 8.0)], 2001)
    cert = certify_excessive(m, make_excessive_density(m), grid)
    expected = gbm_ratio(grid.axes[0], 0.05, 0.2).max()
    assert cert.omega_certified == pytest.approx(expected, abs=1e-6)
    assert 0.26 < cert.omega_certified <= 0.27
    assert abs(cert.certificate["argmax"][0]) == pytest.approx(8.0)


def test_gbm_ratio_is_negative_at_the_origin():
    from ObstaclePricer.discretization import apply_adjoint_to_density

    m = make_model("GBM1D", {"r": 0.05, "vol": 0.2})
    grid = make_grid([(-1.0, 1.0)], 3)
    ratio = apply_adjoint_to_density(m, grid, make_excessive_density(m))
    assert ratio[1] == pytest.approx(-0.01, abs=1e-9)


def test_heston_certificate_is_near_kappa():
    m = make_model("HestonLog", HESTON)
    grid = make_grid(m.default_box, [61, 61])
    cert = certify_excessive(m, make_excessive_density(m), grid)
    assert math.isfinite(cert.omega_certified)
    assert cert.omega_certified > 0.0


@pytest.mark.parametrize("name,params,sizes", CATALOG)
def test_certificates_are_stable_under_refinement(name, params, sizes):
    m = make_model(name, params)
    grid = make_grid(m.default_box, sizes)
    coarse = certify_excessive(m, make_excessive_density(m), grid).omega_certified
    fine_grid = grid.refined(2)
    fine = certify_excessive(m, make_excessive_density(m), fine_grid).omega_certified
    assert math.isfinite(coarse) and math.isfinite(fine)
    assert abs(fine - coarse) <= 0.05 * max(abs(coarse), abs(fine))


def test_low_cap_with_edge_growth_is_unbounded():
    m = make_model("GBM1D", {"r": 0.05, "vol": 0.2})
    grid = make_grid([(0.5, 8.0)], 201)
    with pytest.raises(RatioUnbounded) as info:
        certify_excessive(m, make_excessive_density(m), grid, cap=0.1)
    assert info.value.exit_status == 4
    assert info.value.context["ratio"] > 0.1


# ---------------------------------------------------------------------------
# Obstacles
# ---------------------------------------------------------------------------


def test_basket_put_values():
    g = make_obstacle("basket_put", {"strike": 1.0, "weights": [0.5, 0.5]})
    assert g(0.0, [1.0, 1.0])[0] == 0.0
    assert g(0.0, [0.5, 0.5])[0] == pytest.approx(0.5)
    assert g.convexity_flag


def test_basket_put_takes_weights_from_the_model():
    m = make_model("BasketND", {"r": 0.05, "vol": 0.2, "weights": [0.25, 0.75]})
    g = make_obstacle("basket_put", {"strike": 1.0}, model=m)
    assert g(0.0, [0.0, 1.0])[0] == pytest.approx(0.25)


def test_heston_put_is_composed_with_exp():
    m = make_model("HestonLog", HESTON)
    g = make_obstacle("put", {"strike": 1.0}, model=m)
    assert g.dim == 2
    assert g(0.0, [math.log(0.8), 0.04])[0] == pytest.approx(0.2)
    assert g.lipschitz_const == 1.0


def test_margrabe_and_asian_payoffs():
    ex = make_obstacle("margrabe", {"i": 0, "j": 1, "lam": 2.0})
    assert ex(0.0, [3.0, 1.0])[0] == pytest.approx(1.0)
    assert ex(0.0, [1.0, 1.0])[0] == 0.0
    asian = make_obstacle("asian_put_on_Y", {"strike": 1.0})
    assert asian(0.0, [5.0, 0.25, 0.3])[0] == pytest.approx(0.75)


def test_strike_growth_makes_the_obstacle_time_dependent():
    g = make_obstacle("put", {"strike": 100.0, "strike_growth": 0.1})
    assert g.time_dependent
    assert g(1.0, [100.0])[0] == pytest.approx(100.0 * (math.exp(0.1) - 1.0))
    assert not make_obstacle("put", {"strike": 100.0}).time_dependent


def test_obstacle_errors():
    with pytest.raises(MissingParam):
        make_obstacle("put", {})
    with pytest.raises(MissingParam):
        make_obstacle("basket_put", {"strike": 1.0})
    with pytest.raises(MissingParam):
        make_obstacle("custom", {})
    with pytest.raises(UnsupportedModel):
        make_obstacle("straddle", {"strike": 1.0})


def test_custom_obstacle():
    g = make_obstacle("custom", {"fn": lambda t, x: (1.0 + t) * x[:, 0], "dim": 1, "lipschitz": 2.0})
    assert g(1.0, [3.0])[0] == pytest.approx(6.0)
    assert g.lipschitz_const == 2.0


def test_sampled_lipschitz_respects_declared_constant():
    put = make_obstacle("put", {"strike": 100.0})
    assert sampled_lipschitz(put, np.linspace(0.0, 300.0, 301)) <= put.lipschitz_const + 1e-12
    basket = make_obstacle("basket_put", {"strike": 1.0, "weights": [0.5, 0.5]})
    pts = make_grid([(0.0, 2.0), (0.0, 2.0)], [21, 21]).nodes()
    assert sampled_lipschitz(basket, pts) <= basket.lipschitz_const + 1e-12


def test_basket_put_discrete_convexity():
    m = make_model("BasketND", {"r": 0.05, "vol": 0.2, "weights": [0.5, 0.5]})
    g = make_obstacle("basket_put", {"strike": 1.0}, model=m)
    grid = make_grid([(0.0, 3.0), (0.0, 3.0)], [31, 31])
    assert convexity_defect(m, g, grid) >= -1e-9


@pytest.mark.parametrize("kind", ["put", "call"])
def test_heston_underlying_payoff_is_convex_in_price(kind):
    m = make_model("HestonLog", HESTON)
    g = make_obstacle(kind, {"strike": 1.0}, model=m)
    s = np.linspace(0.05, 3.0, 301)
    values = g.underlying_payoff(0.0, s[:, None])
    assert np.min(values[2:] - 2.0 * values[1:-1] + values[:-2]) >= -1e-12
