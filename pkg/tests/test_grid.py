import numpy as np
import pytest
from hypothesis import given, strategies as st

from mbsolve.grid import (
    cell_inner,
    discrete_inner,
    forward_diff,
    make_grid,
    make_master_grid,
    node_gradient,
    second_diff,
)


def test_make_grid_nodes():
    g = make_grid(1.0, 4, min_cells=4)
    assert np.allclose(g.nodes, [0.0, 0.25, 0.5, 0.75, 1.0])
    assert g.h == 0.25


def test_make_grid_spacing():
    assert make_grid(10.0, 1000).h == pytest.approx(0.01)


def test_make_grid_rejects_bad_input():
    with pytest.raises(ValueError):
        make_grid(-1.0, 100)
    with pytest.raises(ValueError):
        make_grid(1.0, 4)  # default floor is 8 cells
    with pytest.raises(ValueError):
        make_grid(0.0, 100)


def test_inner_constant_is_length():
    g = make_grid(1.0, 4, min_cells=4)
    one = np.ones(5)
    assert discrete_inner(one, one, g) == pytest.approx(1.0)


def test_inner_exact_for_linear():
    g = make_grid(1.0, 4, min_cells=4)
    assert discrete_inner(g.nodes, np.ones(5), g) == pytest.approx(0.5)


def test_inner_quadratic_second_order():
    # trapezoid error for x^2 on [0,1] is h^2/6 exactly
    errs = []
    for n in (16, 32, 64):
        g = make_grid(1.0, n)
        errs.append(abs(discrete_inner(g.nodes**2, np.ones(n + 1), g) - 1.0 / 3.0))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.9)


def test_inner_length_mismatch():
    g = make_grid(1.0, 8)
    with pytest.raises(ValueError):
        discrete_inner(np.ones(8), np.ones(9), g)


@given(st.integers(min_value=0, max_value=10))
def test_inner_symmetric_bilinear(seed):
    g = make_grid(2.0, 16)
    rng = np.random.default_rng(seed)
    u, v, w = rng.standard_normal((3, 17))
    a, b = rng.standard_normal(2)
    assert discrete_inner(u, v, g) == pytest.approx(discrete_inner(v, u, g))
    assert discrete_inner(a * u + b * w, v, g) == pytest.approx(
        a * discrete_inner(u, v, g) + b * discrete_inner(w, v, g)
    )
    if np.any(u != 0):
        assert discrete_inner(u, u, g) > 0


def test_forward_diff_basics():
    g = make_grid(1.0, 4, min_cells=4)
    assert np.allclose(forward_diff(np.ones(5), g), 0.0)
    assert np.allclose(forward_diff(g.nodes, g), 1.0)
    assert np.allclose(forward_diff(g.nodes**2, g), [0.25, 0.75, 1.25, 1.75])


def test_node_gradient_exact_on_quadratics():
    g = make_grid(2.0, 16)
    x = g.nodes
    u = 3.0 * x**2 - 2.0 * x + 1.0
    assert np.allclose(node_gradient(u, g), 6.0 * x - 2.0, atol=1e-12)


def test_second_diff_exact_on_cubics():
    g = make_grid(1.0, 16)
    x = g.nodes
    u = x**3
    assert np.allclose(second_diff(u, g), 6.0 * x, atol=1e-9)


def test_trapezoid_exact_piecewise_linear():
    # hat function: integral = h (area of the hat), trapezoid nails it
    g = make_grid(1.0, 8)
    hat = np.zeros(9)
    hat[3] = 1.0
    assert discrete_inner(hat, np.ones(9), g) == pytest.approx(g.h)


def test_cell_inner():
    g = make_grid(1.0, 8)
    a = np.ones(8)
    assert cell_inner(a, a, g) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        cell_inner(np.ones(9), np.ones(9), g)


def test_master_grid_symmetry():
    g = make_grid(3.0, 12)
    m = make_master_grid(g)
    nodes = m.nodes
    assert nodes.size == 2 * 12 + 1
    assert np.allclose(nodes + nodes[::-1], 0.0)
    assert nodes[12] == 0.0
    assert m.h == pytest.approx(g.h)
