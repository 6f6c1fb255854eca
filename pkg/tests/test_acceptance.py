"""End-to-end checks on the shipped configurations (run with --runslow)."""
import numpy as np
import pytest

from ObstaclePricer import config
from ObstaclePricer.discretization import assemble, positive_part_profile, resolvent
from ObstaclePricer.grid import make_grid
from ObstaclePricer.models import certify_excessive, make_excessive_density, make_model
from ObstaclePricer.tools.converge import _run_rung, empirical_orders, _reference
from ObstaclePricer.tools.price import run_oracles, solve_run
from ObstaclePricer.tools.run_config import (
    build_density,
    build_grid,
    build_model,
    build_obstacle,
    ladder_rungs,
    load_run_config,
)
from ObstaclePricer.tools.verify_measure import refinement_change

pytestmark = pytest.mark.slow


def load(name, **overrides):
    rc = load_run_config(config.CONFIGS_DIR / name)
    return rc.with_overrides(**overrides) if overrides else rc


def feasibility(run, eps, strike):
    sol = run.sol
    return float(np.min(sol.values - sol.g_values)), float(sol.residuals.max()), -10.0 * eps * strike


@pytest.fixture(scope="module")
def gbm_run():
    rc = load("gbm_put.json")
    return rc, solve_run(rc)


def test_gbm_put_matches_the_binomial_tree(gbm_run):
    rc, run = gbm_run
    tree = run_oracles(rc, run)["binomial"]
    assert run.value == pytest.approx(tree.value, rel=0.01)


def test_zero_rate_put_matches_black_scholes():
    rc = load("gbm_put_r0.json")
    run = solve_run(rc)
    euro = run_oracles(rc, run)["european"]
    assert run.value == pytest.approx(euro.value, rel=0.005)


def test_gbm_put_feasibility_and_complementarity(gbm_run):
    rc, run = gbm_run
    min_gap, residual, floor = feasibility(run, 1e-5, 100.0)
    assert min_gap >= floor
    assert residual <= 1e-3
    halved = solve_run(rc, epsilon=5e-6)
    min_gap2, residual2, _ = feasibility(halved, 5e-6, 100.0)
    assert min_gap2 > min_gap
    assert residual2 < residual


def test_heston_put_matches_least_squares_monte_carlo():
    rc = load("heston_put.json")
    run = solve_run(rc)
    lsmc = run_oracles(rc, run)["lsmc"]
    assert abs(run.value - lsmc.value) <= 3.0 * lsmc.stderr


@pytest.mark.parametrize(
    "name, params, sizes",
    [
        ("GBM1D", {"r": 0.05, "vol": 0.2}, [201]),
        ("HestonLog", {"kappa": 2.0, "theta": 0.04, "eta_vol": 0.3}, [61, 61]),
        ("BasketND", {"r": 0.05, "vol": 0.2, "n": 2}, [61, 61]),
        ("AsianRegularized", {"r": 0.05, "vol": 0.2, "delta": 0.05}, [21, 21, 11]),
    ],
)
def test_catalog_certificates_are_refinement_stable(name, params, sizes):
    model = make_model(name, params)
    grid = make_grid(model.default_box, sizes)
    coarse = certify_excessive(model, make_excessive_density(model, grid.box), grid)
    fine_grid = grid.refined(2)
    fine = certify_excessive(model, make_excessive_density(model, fine_grid.box), fine_grid)
    assert np.isfinite(coarse.omega_certified)
    assert refinement_change(coarse.omega_certified, fine.omega_certified) < 5.0


def test_resolvent_positivity_on_many_inputs():
    rc = load("gbm_put.json")
    model = build_model(rc)
    grid = build_grid(rc, model, sizes=[101])
    op = assemble(model, grid, certify_excessive(model, build_density(model, grid), grid))
    rng = np.random.default_rng(2024)
    for k in range(1000):
        rhs = rng.uniform(0.0, 1.0, op.size) * (rng.uniform(size=op.size) < 0.5)
        lam = 2.0 ** -(1 + k % 8) / op.omega
        assert resolvent(op, lam, rhs).min() >= -1e-12


def test_basket_positive_part_is_uniform_in_lambda():
    rc = load("basket_put.json")
    model = build_model(rc)
    grid = build_grid(rc, model)
    op = assemble(model, grid, certify_excessive(model, build_density(model, grid), grid))
    g = build_obstacle(rc, model).on_grid(grid, 0.0)
    lams = [2.0**-k / op.omega for k in range(1, 11)]
    profile = positive_part_profile(op, g, lams)
    assert profile.min() > 0.0
    assert profile.max() < 2.0 * profile.min()


def test_time_step_ladder_converges_at_first_order():
    rc = load("gbm_put_ladder.json")
    rows = [
        _run_rung({"run_config": rc.to_dict(), "sizes": sizes, "steps": steps, "epsilon": eps})
        for sizes, steps, eps in ladder_rungs(rc)
    ]
    orders = empirical_orders(rows, _reference(rc))
    assert 0.5 <= orders[-1] <= 1.5


def test_epsilon_ladder_violation_decreases():
    rc = load("gbm_put_eps_ladder.json")
    rows = [
        _run_rung({"run_config": rc.to_dict(), "sizes": sizes, "steps": steps, "epsilon": eps})
        for sizes, steps, eps in ladder_rungs(rc)
    ]
    violations = [r["violation"] for r in rows]
    assert all(a > b for a, b in zip(violations, violations[1:]))


def test_asian_put_runs_and_matches_monte_carlo():
    rc = load("asian_put.json")
    run = solve_run(rc)
    assert float(np.min(run.sol.values - run.sol.g_values)) >= -1e-4
    assert float(run.sol.residuals.max()) <= 1e-3
    lsmc = run_oracles(rc, run)["lsmc"]
    assert abs(run.value - lsmc.value) <= 3.0 * lsmc.stderr
