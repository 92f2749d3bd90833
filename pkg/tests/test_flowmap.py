from dataclasses import replace

import numpy as np
import pytest

from flow_spectral_chaos.errors import ChainUnavailableError
from flow_spectral_chaos.flowmap import (
    ExplicitOde,
    _fd_weights,
    _stencil,
    derivative_chain_eval,
    pathwise_rk4_step,
    taylor_flow,
    trajectory_window,
)
from flow_spectral_chaos.problems import make_problem
from flow_spectral_chaos.quadrature import gauss_grid


def _decay(with_chain=True):
    return ExplicitOde(
        order=1, dim=1,
        rhs=lambda t, xi, s: -xi[:, 0] * s[0],
        initial=(lambda xi: np.ones(xi.shape[0]),),
        linear_coefficients=(lambda xi: (-xi[:, 0],)) if with_chain else None,
        name="decay",
    )


def test_pathwise_rk4_step_is_fourth_order():
    ode = _decay()
    xi = np.array([[1.0], [2.0]])
    state = ode.initial_state(xi)
    stepped = pathwise_rk4_step(ode, 0.0, xi, state, 0.1)
    assert np.allclose(stepped[0], np.exp(-0.1 * xi[:, 0]), rtol=0, atol=1e-5)
    small = pathwise_rk4_step(ode, 0.0, xi, state, 0.05)
    err_big = np.abs(stepped[0] - np.exp(-0.1 * xi[:, 0]))
    err_small = np.abs(small[0] - np.exp(-0.05 * xi[:, 0]))
    assert np.all(err_big / err_small > 20.0)


# Each tuple: (test_name, offsets, m, expected)
weight_data = [
    ("central_first", (-1, 0, 1), 1, [-0.5, 0.0, 0.5]),
    ("central_second", (-1, 0, 1), 2, [1.0, -2.0, 1.0]),
    ("forward_first", (0, 1), 1, [-1.0, 1.0]),
    ("backward_second", (-2, -1, 0), 2, [1.0, -2.0, 1.0]),
]


@pytest.mark.parametrize("test_name, offsets, m, expected", weight_data)
def test_fd_weights(test_name, offsets, m, expected):
    assert np.allclose(_fd_weights(offsets, m), expected, atol=1e-12), f"Test failed for: {test_name}"


# Each tuple: (test_name, m, t, expected)
stencil_data = [
    ("interior_first", 1, 5.0, (-1, 0, 1)),
    ("interior_third", 3, 5.0, (-2, -1, 0, 1, 2)),
    ("domain_start", 2, 0.0, (0, 1, 2)),
    ("domain_end", 2, 10.0, (-2, -1, 0)),
]


@pytest.mark.parametrize("test_name, m, t, expected", stencil_data)
def test_stencil_is_one_sided_at_domain_ends(test_name, m, t, expected):
    assert _stencil(m, t, 1e-4, (0.0, 10.0)) == expected, f"Test failed for: {test_name}"


def test_trajectory_window_states():
    ode = _decay()
    xi = np.array([[1.0]])
    window = trajectory_window(ode, 1.0, xi, np.array([[np.exp(-1.0)]]), 1, h=1e-3)
    assert window.offsets == (-1, 0, 1)
    assert np.allclose(window.states[:, 0, 0], np.exp(-1.0 - np.array([-1e-3, 0.0, 1e-3])), rtol=1e-12)


def test_linear_recursion_for_oscillator():
    problem = make_problem("p2", "uniform")
    nodes = gauss_grid(problem.measure, [5])
    xi = nodes.nodes
    state = np.array([np.full(5, 0.05), np.full(5, 0.2)])
    enriched = derivative_chain_eval(problem.ode, 0.0, xi, state, 4)
    kappa = xi[:, 0] / 100.0
    u, v = state
    expected = np.array([u, v, -kappa * u, -kappa * v, kappa**2 * u, kappa**2 * v])
    assert enriched.M == 4
    assert np.allclose(enriched.values, expected, rtol=1e-14)
    assert np.array_equal(enriched.state, state)


@pytest.mark.parametrize("M", [2, 3])
def test_finite_differences_match_analytic_chain(M):
    problem = make_problem("p6")
    nodes = gauss_grid(problem.measure, [4, 4])
    xi = nodes.nodes
    state = problem.ode.initial_state(xi)
    state = 0.5 * state
    analytic = derivative_chain_eval(problem.ode, 1.0, xi, state, M)
    generic = replace(problem.ode, chain=None, chain_depth=0)
    numeric = derivative_chain_eval(generic, 1.0, xi, state, M)
    for row in range(2, 2 + M):
        scale = np.max(np.abs(analytic.values[row]))
        assert np.max(np.abs(numeric.values[row] - analytic.values[row])) <= 1e-6 * scale, f"row {row}"


def test_deep_chain_without_analytic_derivatives_is_refused():
    ode = _decay(with_chain=False)
    xi = np.array([[1.0]])
    with pytest.raises(ChainUnavailableError):
        derivative_chain_eval(ode, 0.0, xi, ode.initial_state(xi), 5)
    with pytest.raises(ChainUnavailableError):
        derivative_chain_eval(ode, 0.0, xi, ode.initial_state(xi), 0)


def test_taylor_flow_order():
    ode = _decay()
    xi = np.array([[0.5], [1.5]])
    state = ode.initial_state(xi)
    enriched = derivative_chain_eval(ode, 0.0, xi, state, 4)
    h = 0.01
    pushed = taylor_flow(ode, h, enriched, 4)
    assert pushed.shape == (1, 2)
    assert np.allclose(pushed[0], np.exp(-h * xi[:, 0]), rtol=0, atol=1e-10)
    first_order = taylor_flow(ode, h, enriched, 1)
    assert np.allclose(first_order[0], 1.0 - h * xi[:, 0], rtol=1e-14)


def test_taylor_flow_can_push_enriched_components():
    ode = _decay()
    xi = np.array([[1.0]])
    enriched = derivative_chain_eval(ode, 0.0, xi, ode.initial_state(xi), 3)
    pushed = taylor_flow(None, 0.1, enriched, 3, components=3)
    assert pushed.shape == (3, 1)
    # u' = -u: the pushed derivative of order k is (-1)^k times the pushed u, up to truncation
    assert pushed[1, 0] == pytest.approx(-(1.0 - 0.1 + 0.005), rel=1e-12)
