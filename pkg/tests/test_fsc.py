from dataclasses import replace

import numpy as np
import pytest

from flow_spectral_chaos.distributions import Distribution, ProductMeasure
from flow_spectral_chaos.errors import BasisBoundError, BasisCollapseError, InvalidParametersError
from flow_spectral_chaos.flowmap import ExplicitOde, derivative_chain_eval
from flow_spectral_chaos.fsc import (
    BootstrapConfig,
    FscConfig,
    GalerkinMode,
    Orthogonalizer,
    RunDiagnostics,
    SpectralState,
    Transfer,
    build_basis,
    run_fsc,
    transfer_fsc1,
    transfer_fsc2,
)
from flow_spectral_chaos.oracle import closed_form_series, dense_reference, error_metrics, mc_reference
from flow_spectral_chaos.problems import ReferenceKind, make_problem
from flow_spectral_chaos.quadrature import dense_grid, gauss_grid, gauss_rule, mc_nodes
from flow_spectral_chaos.rfs import TOL_ORTH
from flow_spectral_chaos.spectral import GpcBasisSpec, gpc_basis

# Each tuple: (test_name, cfg, order, expected_error)
validate_data = [
    ("P_below_lower_bound", FscConfig(P=2), 2, BasisBoundError),
    ("P_above_upper_bound", FscConfig(P=7, M=4), 2, BasisBoundError),
    ("P_above_bound_for_small_M", FscConfig(P=4, M=1), 2, BasisBoundError),
    ("M_too_large", FscConfig(P=3, M=5), 2, InvalidParametersError),
    ("T_not_whole_steps", FscConfig(P=3, dt=0.3, T=1.0), 2, InvalidParametersError),
    ("negative_dt", FscConfig(P=3, dt=-0.1), 2, InvalidParametersError),
    ("unknown_bootstrap_method", FscConfig(P=3, bootstrap=BootstrapConfig(method="pce")), 2,
     InvalidParametersError),
    ("negative_bootstrap", FscConfig(P=2, bootstrap=BootstrapConfig(duration=-1.0)), 1, InvalidParametersError),
]


@pytest.mark.parametrize("test_name, cfg, order, expected_error", validate_data)
def test_config_validation(test_name, cfg, order, expected_error):
    with pytest.raises(expected_error):
        cfg.validate(order)


def test_valid_config_counts_steps():
    cfg = FscConfig(P=6, dt=1e-2, T=2.0, bootstrap=BootstrapConfig(duration=0.5))
    cfg.validate(2)
    assert cfg.steps == 200
    assert cfg.bootstrap_steps == 50


def test_constant_state_is_dropped_from_basis():
    problem = make_problem("p1")
    nodes = gauss_grid(problem.measure, [10])
    state = problem.ode.initial_state(nodes.nodes)
    enriched = derivative_chain_eval(problem.ode, 0.0, nodes.nodes, state, 4)
    basis = build_basis(enriched, 4, Orthogonalizer.GS, nodes)
    assert basis.sources == (2, 3, 4)
    assert basis.P == 3
    assert basis.orthogonality_defect() < 1e-10


def _deterministic_decay():
    return ExplicitOde(
        order=1, dim=1,
        rhs=lambda t, xi, s: -s[0],
        initial=(lambda xi: np.ones(xi.shape[0]),),
        linear_coefficients=lambda xi: (-np.ones(xi.shape[0]),),
        name="decay",
    )


def test_basis_collapses_when_nothing_is_random():
    ode = _deterministic_decay()
    nodes = gauss_rule(Distribution.uniform(0.0, 1.0), 8)
    enriched = derivative_chain_eval(ode, 0.0, nodes.nodes, ode.initial_state(nodes.nodes), 3)
    with pytest.raises(BasisCollapseError):
        build_basis(enriched, 3, Orthogonalizer.GS, nodes)


@pytest.fixture
def oscillator_state():
    problem = make_problem("p2", "uniform")
    nodes = gauss_grid(problem.measure, [20])
    x = (nodes.axis(0) - 400.0) / 60.0
    nodal = np.array([0.05 + 0.01 * x + 0.002 * x**3, 0.2 - 0.03 * x + 0.01 * x**2])
    gpc = gpc_basis(problem.measure, GpcBasisSpec(1, 6), nodes)
    old = SpectralState(0.0, gpc, gpc.project(nodal))
    enriched = derivative_chain_eval(problem.ode, 0.0, nodes.nodes, nodal, 4)
    return problem, nodes, nodal, old, enriched


def test_closed_form_transfer_is_exact(oscillator_state):
    problem, nodes, nodal, old, enriched = oscillator_state
    basis = build_basis(enriched, 4, Orthogonalizer.GS, nodes)
    assert basis.sources == (1, 2, 3, 4)
    modes = transfer_fsc2(old, basis)
    assert modes[0, 0] == pytest.approx(nodes.expectation(nodal[0]), rel=1e-13)
    assert np.array_equal(modes[0, 1:], [1.0, 0.0, 0.0, 0.0])
    assert modes[1, 2] == 1.0 and np.all(modes[1, 3:] == 0.0)
    assert np.max(np.abs(basis.reconstruct(modes) - nodal)) <= 1e-12


def test_projection_transfer_preserves_the_mean(oscillator_state):
    problem, nodes, nodal, old, enriched = oscillator_state
    basis = build_basis(enriched, 4, Orthogonalizer.GS, nodes)
    modes = transfer_fsc1(old, basis)
    assert np.allclose(modes[:, 0], old.modes[:, 0], rtol=0, atol=1e-12)
    assert np.max(np.abs(basis.reconstruct(modes) - nodal)) <= 1e-12


def test_closed_form_transfer_falls_back_to_projection_after_rank_drop(oscillator_state):
    problem, nodes, nodal, old, enriched = oscillator_state
    basis = build_basis(enriched, 4, Orthogonalizer.GS, nodes)
    pushed = transfer_fsc2(old, basis, raw_is_state=False)
    assert np.allclose(pushed, transfer_fsc1(old, basis), rtol=0, atol=1e-12)


def _oscillator_run(P=4, T=1.0, dt=1e-2, **overrides):
    problem = make_problem("p2", "uniform")
    nodes = gauss_grid(problem.measure, [40])
    cfg = FscConfig(P=P, dt=dt, T=T, bootstrap=BootstrapConfig(duration=0.5), **overrides)
    result = run_fsc(problem.ode, cfg, nodes, problem.measure, tensor_rhs=problem.tensor_rhs)
    return problem, result


def _closed_form_error(problem, series):
    reference = closed_form_series(problem, series.times, dense_grid(problem.measure))
    return error_metrics(series, reference)


def test_closed_form_transfer_reproduces_state():
    _, result = _oscillator_run()
    diagnostics = result.diagnostics
    assert diagnostics.steps == 100
    assert diagnostics.resets == 50
    assert diagnostics.closed_form_fallbacks == 0
    assert diagnostics.max_transfer_residual <= 1e-10
    assert diagnostics.max_orthogonality_defect <= 1e-8


def test_oscillator_moments_converge_with_P():
    problem, rich = _oscillator_run(P=6, T=2.0)
    _, lean = _oscillator_run(P=3, T=2.0)
    rich_error = _closed_form_error(problem, rich.series["u"])
    lean_error = _closed_form_error(problem, lean.series["u"])
    assert rich_error.global_mean <= 1e-6
    assert rich_error.global_var <= 1e-6
    assert rich_error.global_mean < lean_error.global_mean


@pytest.mark.parametrize("test_name, transfer", [("projection", Transfer.FSC1), ("closed_form", Transfer.FSC2)])
def test_transfers_are_accurate(test_name, transfer):
    problem, result = _oscillator_run(transfer=transfer)
    report = _closed_form_error(problem, result.series["u"])
    assert report.global_mean <= 1e-6, f"Test failed for: {test_name}"
    assert report.global_var <= 1e-6, f"Test failed for: {test_name}"


def test_runs_are_deterministic():
    _, first = _oscillator_run()
    _, second = _oscillator_run()
    assert np.array_equal(first.series["u"].mean, second.series["u"].mean)
    assert np.array_equal(first.series["u"].variance, second.series["u"].variance)


def test_orthogonalizers_agree():
    _, gs = _oscillator_run(P=3)
    _, closed = _oscillator_run(P=3, orthogonalizer=Orthogonalizer.THEOREM1)
    assert np.allclose(gs.series["u"].mean, closed.series["u"].mean, rtol=1e-6, atol=1e-10)
    assert np.allclose(gs.series["u"].variance, closed.series["u"].variance, rtol=1e-6, atol=1e-10)


def test_tensor_galerkin_run_matches_nodal_run():
    _, nodal = _oscillator_run()
    _, tensor = _oscillator_run(galerkin=GalerkinMode.TENSOR)
    assert np.allclose(nodal.series["u"].mean, tensor.series["u"].mean, rtol=1e-9, atol=1e-12)
    assert np.allclose(nodal.series["u"].variance, tensor.series["u"].variance, rtol=1e-9, atol=1e-12)


def test_midpoint_basis_uses_projection_transfer():
    problem, result = _oscillator_run(midpoint=True)
    assert result.diagnostics.closed_form_fallbacks == result.diagnostics.resets
    report = _closed_form_error(problem, result.series["u"])
    assert report.global_mean <= 1e-5


def test_tensor_mode_needs_a_tensor_path():
    problem = make_problem("p4")
    nodes = gauss_grid(problem.measure, [10])
    cfg = FscConfig(P=4, dt=1e-2, T=0.1, galerkin=GalerkinMode.TENSOR)
    with pytest.raises(InvalidParametersError):
        run_fsc(problem.ode, cfg, nodes, problem.measure, tensor_rhs=problem.tensor_rhs)


def test_deterministic_problem_survives_the_bootstrap_window():
    ode = _deterministic_decay()
    measure = ProductMeasure.of(Distribution.uniform(0.0, 1.0))
    nodes = gauss_grid(measure, [10])
    cfg = FscConfig(P=2, dt=1e-2, T=0.5, bootstrap=BootstrapConfig(duration=1.0))
    series = run_fsc(ode, cfg, nodes, measure).series["u"]
    assert np.allclose(series.mean, np.exp(-series.times), rtol=1e-9)
    assert np.all(series.variance <= 1e-20)

    with pytest.raises(BasisCollapseError) as err:
        run_fsc(ode, replace(cfg, T=1.0, bootstrap=BootstrapConfig(duration=0.5)), nodes, measure)
    assert err.value.step == 50


def _problem_run(id, P, transfer=Transfer.FSC2, points=40, T=2.0, dt=1e-2, bootstrap=None):
    problem = make_problem(id)
    nodes = gauss_grid(problem.measure, [points])
    bootstrap = bootstrap or BootstrapConfig(duration=0.5)
    cfg = FscConfig(P=P, dt=dt, T=T, transfer=transfer, bootstrap=bootstrap)
    responses = [(r.name, r.component) for r in problem.responses]
    result = run_fsc(problem.ode, cfg, nodes, problem.measure, responses)
    return problem, result, result.series[problem.response.name]


def test_bootstrap_window_covers_two_inputs_to_order_six():
    _, result, _ = _problem_run("p3", 6, points=20, T=0.1, bootstrap=BootstrapConfig(duration=1.0))
    assert result.diagnostics.resets == 0
    assert result.final_state.basis.label == "gpc[d=2,p=6]"
    assert result.final_state.basis.size == 28


def test_bootstrap_window_order_bounds_the_error():
    window = 1.0
    problem, _, default = _problem_run("p3", 6, points=20, T=1.5, bootstrap=BootstrapConfig(duration=window))
    _, _, coarse = _problem_run("p3", 6, points=20, T=1.5, bootstrap=BootstrapConfig(order=3, duration=window))
    default_error = _closed_form_error(problem, default)
    coarse_error = _closed_form_error(problem, coarse)
    assert default_error.global_mean * 10.0 <= coarse_error.global_mean
    assert default_error.global_mean <= 1e-8


def test_ill_conditioned_basis_gets_a_second_pass():
    problem, result, series = _problem_run("p1", 5)
    diagnostics = result.diagnostics
    assert diagnostics.reorthogonalizations > 0
    assert diagnostics.max_orthogonality_defect <= TOL_ORTH
    assert diagnostics.max_transfer_residual <= 1e-11
    assert diagnostics.closed_form_fallbacks == 0
    report = _closed_form_error(problem, series)
    assert report.global_mean <= 1e-5
    assert report.global_var <= 1e-5


def test_second_pass_keeps_closed_form_transfer_exact(oscillator_state):
    problem, nodes, nodal, old, enriched = oscillator_state
    diagnostics = RunDiagnostics()
    basis = build_basis(enriched, 4, Orthogonalizer.GS, nodes, tol_orth=1e-13, diagnostics=diagnostics)
    assert diagnostics.reorthogonalizations == 1
    assert basis.recombination is not None
    assert basis.sources == (1, 2, 3, 4)
    assert basis.orthogonality_defect() <= 1e-13
    modes = transfer_fsc2(old, basis)
    assert np.max(np.abs(basis.reconstruct(modes) - nodal)) <= 1e-12


# Each tuple: (test_name, id, P, points)
linear_problem_data = [
    ("falling_body", "p1", 5, 40),
    ("oscillator", "p2", 6, 40),
    ("random_mass_oscillator", "p3", 6, 20),
]


@pytest.mark.parametrize("test_name, id, P, points", linear_problem_data)
def test_transfers_carry_the_state_across_resets(test_name, id, P, points):
    _, closed, _ = _problem_run(id, P, Transfer.FSC2, points)
    _, projected, _ = _problem_run(id, P, Transfer.FSC1, points)
    assert closed.diagnostics.resets == 150, f"Test failed for: {test_name}"
    assert closed.diagnostics.max_transfer_residual <= 1e-11, f"Test failed for: {test_name}"
    assert projected.diagnostics.max_mean_shift <= 1e-12, f"Test failed for: {test_name}"


@pytest.mark.parametrize("test_name, id, P, points", linear_problem_data)
def test_closed_form_transfer_is_no_worse_than_projection(test_name, id, P, points):
    problem, _, closed = _problem_run(id, P, Transfer.FSC2, points)
    _, _, projected = _problem_run(id, P, Transfer.FSC1, points)
    closed_error = _closed_form_error(problem, closed)
    projected_error = _closed_form_error(problem, projected)
    # both transfers reproduce the nodal state, so they agree down to roundoff
    for closed_value, projected_value in [
        (closed_error.global_mean, projected_error.global_mean),
        (closed_error.global_var, projected_error.global_var),
    ]:
        assert closed_value <= projected_value * (1 + 1e-3) + 1e-11, f"Test failed for: {test_name}"


def test_oscillator_gains_three_orders_from_P3_to_P5():
    problem, lean = _oscillator_run(P=3, T=2.0, dt=5e-3)
    _, rich = _oscillator_run(P=5, T=2.0, dt=5e-3)
    lean_error = _closed_form_error(problem, lean.series["u"])
    rich_error = _closed_form_error(problem, rich.series["u"])
    assert lean_error.global_mean >= 1e3 * rich_error.global_mean
    assert lean_error.global_var >= 1e3 * rich_error.global_var


def _van_der_pol_run(P, T=1.5):
    problem = make_problem("p6")
    nodes = gauss_grid(problem.measure, [20])
    defaults = problem.defaults
    cfg = replace(defaults, P=P, T=T, bootstrap=replace(defaults.bootstrap, duration=0.25))
    return problem, run_fsc(problem.ode, cfg, nodes, problem.measure).series["u"]


def test_van_der_pol_tracks_monte_carlo():
    problem, series = _van_der_pol_run(4)
    mc = mc_reference(problem, 2000, problem.defaults.dt, 1.5, seed=17)
    report = error_metrics(series, mc, ReferenceKind.MONTE_CARLO)
    assert np.all(report.eps_mean <= 1e-2)
    assert np.all(report.eps_var <= 1e-2)


def test_van_der_pol_improves_with_P():
    problem, lean = _van_der_pol_run(4)
    _, rich = _van_der_pol_run(5)
    dense = dense_reference(problem, problem.defaults.dt, 1.5, dense_grid(problem.measure, 60), refine=4)
    lean_error = error_metrics(lean, dense, ReferenceKind.DENSE_QUADRATURE)
    rich_error = error_metrics(rich, dense, ReferenceKind.DENSE_QUADRATURE)
    assert rich_error.global_mean < lean_error.global_mean
    assert rich_error.global_var < lean_error.global_var


def test_high_dimensional_run_agrees_with_monte_carlo():
    problem = make_problem("highdim")
    Q, realizations, T = 2000, 2000, 1.0
    nodes = mc_nodes(problem.measure, Q, seed=4)
    cfg = replace(problem.defaults, T=T)
    series = run_fsc(problem.ode, cfg, nodes, problem.measure).series["u"]
    mc = mc_reference(problem, realizations, cfg.dt, T, seed=8)
    combined = np.sqrt(series.variance[1:] / Q + mc.variance[1:] / realizations)
    assert np.all(np.abs(series.mean[1:] - mc.mean[1:]) <= 5.0 * combined)
    spread = np.sqrt(2.0 / Q + 2.0 / realizations) * np.maximum(series.variance[1:], mc.variance[1:])
    assert np.all(np.abs(series.variance[1:] - mc.variance[1:]) <= 5.0 * spread)
