import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ObstaclePricer.errors import BadBox, BadSize, NonPositiveDensity
from ObstaclePricer.grid import BoundaryKind, make_grid, quadrature_weights
from ObstaclePricer.models import make_excessive_density, make_model


def test_nodes_are_row_major_with_last_axis_fastest():
    grid = make_grid([(0.0, 1.0), (0.0, 3.0)], [3, 4])
    nodes = grid.nodes()
    assert grid.shape == (3, 4)
    assert grid.size == 12
    np.testing.assert_allclose(nodes[0], [0.0, 0.0])
    np.testing.assert_allclose(nodes[1], [0.0, 1.0])
    np.testing.assert_allclose(nodes[4], [0.5, 0.0])
    assert grid.flatten((1, 2)) == 6


def test_single_axis_box_accepts_a_bare_pair():
    grid = make_grid((0.0, 2.0), 5)
    assert grid.dim == 1
    assert grid.box == ((0.0, 2.0),)


@pytest.mark.parametrize("box", [[(1.0, 1.0)], [(2.0, 1.0)], [(0.0, math.inf)], []])
def test_bad_boxes_are_rejected(box):
    with pytest.raises(BadBox):
        make_grid(box, 5)


def test_too_few_nodes_is_bad_size():
    with pytest.raises(BadSize) as info:
        make_grid([(0.0, 1.0), (0.0, 1.0)], [5, 2])
    assert info.value.context["axis"] == 1


def test_sizes_must_match_dimension():
    with pytest.raises(BadSize):
        make_grid([(0.0, 1.0), (0.0, 1.0)], [5, 5, 5])


def test_geometric_grading_puts_the_strike_on_a_node():
    grid = make_grid([(0.0, 400.0)], 401, grading="geometric-toward-strike", focus=100.0, concentration=0.1)
    x = grid.axes[0]
    assert x[0] == 0.0 and x[-1] == 400.0
    assert np.all(np.diff(x) > 0.0)
    j = int(np.argmin(np.abs(x - 100.0)))
    assert x[j] == 100.0
    h = np.diff(x)
    assert h[j] < h[0] and h[j] < h[-1]


def test_unknown_grading_is_rejected():
    with pytest.raises(BadSize):
        make_grid([(0.0, 1.0)], 5, grading="chebyshev")


@settings(max_examples=25, deadline=None)
@given(
    st.lists(st.integers(min_value=3, max_value=9), min_size=1, max_size=3),
    st.floats(min_value=0.1, max_value=5.0),
)
def test_cell_volumes_sum_to_box_volume(sizes, width):
    box = [(-width, width * 0.5 + 1.0)] * len(sizes)
    grid = make_grid(box, sizes)
    volume = np.prod([hi - lo for lo, hi in box])
    assert grid.cell_volumes().sum() == pytest.approx(volume, rel=1e-12)


def test_refined_grid_keeps_box_and_contains_old_nodes():
    grid = make_grid([(0.0, 2.0), (-1.0, 1.0)], [5, 3], boundary="neumann_zero")
    fine = grid.refined()
    assert fine.shape == (9, 5)
    assert fine.box == grid.box
    assert fine.boundary_kind == grid.boundary_kind
    for coarse_axis, fine_axis in zip(grid.axes, fine.axes):
        np.testing.assert_allclose(fine_axis[::2], coarse_axis)


def test_geometric_refinement_keeps_focus_on_a_node():
    grid = make_grid([(0.0, 300.0)], 61, grading="geometric", focus=100.0)
    fine = grid.refined(2)
    assert 100.0 in set(fine.axes[0].tolist())


def test_dirichlet_mask_follows_per_face_kinds():
    grid = make_grid([(0.0, 1.0)], 5, boundary=[("neumann_zero", "dirichlet_payoff")])
    assert grid.boundary_kind == ((BoundaryKind.NEUMANN_ZERO, BoundaryKind.DIRICHLET_PAYOFF),)
    assert grid.dirichlet_mask().tolist() == [False, False, False, False, True]
    assert grid.boundary_mask().tolist() == [True, False, False, False, True]


def test_default_boundary_is_dirichlet_everywhere():
    grid = make_grid([(0.0, 1.0), (0.0, 1.0)], [4, 4])
    assert np.array_equal(grid.dirichlet_mask(), grid.boundary_mask())
    assert int(grid.boundary_mask().sum()) == 12


def test_describe_is_json_ready():
    grid = make_grid([(0.0, 4.0)], 9, grading="geometric", focus=1.0, boundary="outflow_one_sided")
    d = grid.describe()
    assert d["sizes"] == [9]
    assert d["grading"] == "geometric"
    assert d["focus"] == [1.0]
    assert d["boundary"] == [["outflow_one_sided", "outflow_one_sided"]]


def test_quadrature_weights_are_positive():
    model = make_model("GBM1D", {"r": 0.05, "vol": 0.2})
    grid = make_grid([(0.0, 4.0)], 41)
    density = make_excessive_density(model, grid.box)
    w = quadrature_weights(grid, density)
    assert w.shape == (41,)
    assert np.all(w > 0.0)
    assert w.sum() <= 1.0


def test_density_mass_is_stable_under_refinement():
    model = make_model("GBM1D", {"r": 0.05, "vol": 0.2})
    density = make_excessive_density(model, ((-8.0, 8.0),))
    coarse = quadrature_weights(make_grid([(-8.0, 8.0)], 2001), density).sum()
    fine = quadrature_weights(make_grid([(-8.0, 8.0)], 4001), density).sum()
    assert abs(coarse - fine) < 1e-4


def test_quadrature_weights_reject_a_vanishing_density():
    model = make_model("HestonLog", {"kappa": 2.0, "theta": 0.04, "eta_vol": 0.3})
    grid = make_grid([(-1.0, 1.0), (-0.5, 1.0)], [5, 7])
    density = make_excessive_density(model, grid.box)
    with pytest.raises(NonPositiveDensity) as info:
        quadrature_weights(grid, density)
    assert info.value.context["coords"][1] < 0.0
