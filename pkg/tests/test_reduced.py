import math

import numpy as np
import pytest
from scipy.stats import linregress

from twoscale.assumptions import check_assumptions
from twoscale.decomposition import fast_time_map
from twoscale.integrate import SolverOptions
from twoscale.network import build_spec, paper_example
from twoscale.reduced import (AveragedModel, average_A11, default_window, simulate_boundary_layer,
                              simulate_slow, slow_weights)

CONSTANT = {(1, 2): "1", (2, 1): "1", (3, 4): "1", (4, 3): "1",
            (1, 3): "eps*0.5", (3, 1): "eps*0.5"}


def _model(a):
    A = np.array([[-a, a], [a, -a]])
    return AveragedModel(A, 1.0, 0.0, A - np.diag(np.diag(A)), (0.0, 1.0), True)


def test_constant_weights_average_exactly():
    spec = build_spec([[1, 2], [3, 4]], CONSTANT, eps=0.1, horizon=5.0)
    model = average_A11(spec, T=10.0)
    # q = 1/2, c^I = 1: a^s = (1/2)(0.5 eps)/(1 * eps)
    np.testing.assert_allclose(model.A_av, [[-0.25, 0.25], [0.25, -0.25]], atol=1e-12)
    assert model.residual < 1e-12 and model.a4_holds


def test_single_cluster_average_is_zero():
    spec = build_spec([[1, 2, 3]], {(1, 2): "1", (2, 3): "1", (3, 1): "1", (2, 1): "1"},
                      horizon=5.0)
    model = average_A11(spec, T=5.0)
    assert model.A_av.shape == (1, 1) and model.A_av[0, 0] == 0.0


def test_example_average_and_anchor_independence():
    spec = paper_example(eps=0.2)
    report = check_assumptions(spec)
    model = average_A11(spec, report=report)
    np.testing.assert_allclose(model.A_av, [[-1 / 6, 1 / 6], [1 / 6, -1 / 6]], atol=1e-9)
    assert model.a4_holds and report.a4_holds
    assert report.a4_residual == model.residual
    assert model.window == pytest.approx(16 * 4 * math.pi)


def test_default_window_without_period():
    spec = build_spec([[1, 2]], {(1, 2): "1", (2, 1): "1"})
    assert default_window(spec) == 100.0


def test_averaged_model_structure():
    model = average_A11(paper_example())
    A = model.A_av
    np.testing.assert_allclose(A.sum(axis=1), 0, atol=1e-8)
    assert (A - np.diag(np.diag(A))).min() >= -1e-8
    off = ~np.eye(2, dtype=bool)
    np.testing.assert_allclose(A[off], model.a_s[off], atol=1e-8)
    np.testing.assert_allclose(np.diag(A), -model.a_s.sum(axis=1), atol=1e-8)


def test_no_edges_means_zero_slow_weight():
    weights = {**CONSTANT}
    del weights[(3, 1)]
    spec = build_spec([[1, 2], [3, 4]], weights, eps=0.1, horizon=5.0)
    rescaling = fast_time_map(spec)
    a_s = slow_weights(spec, [np.full(2, 0.5)] * 2, rescaling, np.linspace(0, 5, 101))
    assert a_s[1, 0] == 0.0 and a_s[0, 1] == pytest.approx(0.25)


def test_slow_weights_match_average_for_single_edge():
    spec = build_spec([[1, 2], [3, 4]], CONSTANT, eps=0.1, horizon=5.0)
    rescaling = fast_time_map(spec)
    a_s = slow_weights(spec, [np.full(2, 0.5)] * 2, rescaling, np.linspace(0, 5, 101))
    model = average_A11(spec, T=5.0)
    np.testing.assert_allclose(a_s[0, 1], model.A_av[0, 1], atol=1e-6)


def test_example_slow_graph_is_strongly_connected():
    spec = paper_example()
    rescaling = fast_time_map(spec)
    a_s = slow_weights(spec, [np.full(4, 0.25)] * 2, rescaling, np.linspace(0, 8 * np.pi, 4001))
    assert a_s[0, 1] > 0 and a_s[1, 0] > 0


def test_slow_consensus_is_invariant():
    traj = simulate_slow(_model(0.3), [2.0, 2.0], 5.0)
    np.testing.assert_allclose(traj.states, 2.0, atol=1e-14)


def test_slow_two_cluster_closed_form():
    a = 0.3
    traj = simulate_slow(_model(a), [1.0, -1.0], 4.0, SolverOptions(h=0.01))
    for t in (0.5, 2.0, 4.0):
        gap = 2 * math.exp(-2 * a * t)
        np.testing.assert_allclose(traj.at(t), [gap / 2, -gap / 2], atol=1e-6)


def test_slow_spread_decays_exponentially():
    model = average_A11(paper_example())
    traj = simulate_slow(model, [5.475, 2.275], 15.0)
    fit = linregress(traj.times, np.log(traj.spread()))
    assert fit.slope < 0 and fit.rvalue ** 2 >= 0.95
    assert fit.slope == pytest.approx(-1 / 3, rel=1e-6)


def test_boundary_layer_zero_stays_zero():
    spec = paper_example()
    traj = simulate_boundary_layer(spec, fast_time_map(spec), np.zeros(6), 5.0)
    assert np.all(traj.states == 0)


def test_boundary_layer_two_node_closed_form():
    spec = build_spec([[1, 2]], {(1, 2): "2", (2, 1): "1"}, horizon=5.0)
    traj = simulate_boundary_layer(spec, fast_time_map(spec), [1.0], 3.0)
    # z = x2 - x1 decays at rate (a12 + a21) / c^I = 3 in fast time
    for tf in (0.5, 1.0, 3.0):
        assert traj.at(tf)[0] == pytest.approx(math.exp(-3 * tf), abs=1e-8)


def test_example_boundary_layer_decays():
    spec = paper_example()
    x0 = np.asarray(spec.x0)
    z0 = np.concatenate([x0[1:4] - x0[0], x0[5:8] - x0[4]])
    traj = simulate_boundary_layer(spec, fast_time_map(spec), z0, 30.0)
    norms = np.abs(traj.states).max(axis=1)
    assert np.all(norms <= norms[0] + 1e-12)
    assert norms[-1] < 1e-3


def test_input_dimensions_checked():
    with pytest.raises(ValueError):
        simulate_slow(_model(0.1), [1.0], 1.0)
    spec = paper_example()
    with pytest.raises(ValueError):
        simulate_boundary_layer(spec, fast_time_map(spec), np.zeros(5), 1.0)
