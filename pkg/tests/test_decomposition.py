import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twoscale.assumptions import check_assumptions
from twoscale.decomposition import (Decomposer, TimeRescaling, UnstableLimitError,
                                    block_matrices, build_split, dynamics_residual,
                                    fast_time_map, q_stencil, qt_stencil, reconstruct,
                                    rescaled_matrices, split_state)
from twoscale.integrate import AggregationPath, aggregation_weights
from twoscale.network import ClusterPartition, build_spec, paper_example, snapshot

from factories import random_spec

UNIFORM8 = [np.full(4, 0.25), np.full(4, 0.25)]


def simplex(size):
    return st.lists(st.floats(0.01, 1.0), min_size=size, max_size=size).map(
        lambda v: np.asarray(v) / np.sum(v))


def test_smallest_cluster_stencils():
    assert q_stencil(2).tolist() == [[-1.0, 1.0]]
    Qt = qt_stencil(np.array([0.5, 0.5]))
    assert Qt.tolist() == [[-0.5], [0.5]]
    assert (q_stencil(2) @ Qt).tolist() == [[1.0]]


def test_centering_identity_for_uniform_weights():
    q = np.full(3, 1 / 3)
    np.testing.assert_allclose(qt_stencil(q) @ q_stencil(3), np.eye(3) - 1 / 3, atol=1e-15)


@given(st.integers(2, 8).flatmap(simplex))
@settings(max_examples=100, deadline=None)
def test_stencil_identities(q):
    nk = len(q)
    Q, Qt = q_stencil(nk), qt_stencil(q)
    np.testing.assert_allclose(Q @ np.ones(nk), 0, atol=1e-12)
    np.testing.assert_allclose(q @ Qt, 0, atol=1e-12)
    np.testing.assert_allclose(Q @ Qt, np.eye(nk - 1), atol=1e-12)
    np.testing.assert_allclose(Qt @ Q, np.eye(nk) - np.outer(np.ones(nk), q), atol=1e-12)


def test_split_shapes_and_JH_identity():
    part = ClusterPartition((3, 1, 2))
    split = build_split(part, [np.array([0.2, 0.3, 0.5]), np.ones(1), np.array([0.4, 0.6])])
    assert split.J.shape == (3, 6) and split.Q.shape == (3, 6)
    assert split.Qt.shape == (6, 3) and split.H.shape == (6, 3)
    np.testing.assert_allclose(split.J @ split.H, np.eye(3), atol=1e-15)


def test_dimension_mismatch_raises():
    with pytest.raises(ValueError):
        build_split(ClusterPartition((2, 2)), [np.full(2, 0.5)])
    with pytest.raises(ValueError):
        build_split(ClusterPartition((2, 2)), [np.full(2, 0.5), np.full(3, 1 / 3)])


def test_consensus_state_has_no_disagreement():
    split = build_split(ClusterPartition((4, 4)), UNIFORM8)
    y, z = split_state(np.full(8, 2.5), split)
    np.testing.assert_allclose(y, 2.5)
    np.testing.assert_allclose(z, 0, atol=1e-15)


def test_local_agreement_gives_cluster_value():
    split = build_split(ClusterPartition((4, 4)), UNIFORM8)
    x = np.array([1, 1, 1, 1, 3, 4, 5, 6], float)
    y, z = split_state(x, split)
    assert y[0] == 1.0
    np.testing.assert_array_equal(z[:3], 0)


def test_example_initial_condition_round_trip():
    spec = paper_example()
    split = build_split(spec.partition, UNIFORM8)
    y, z = split_state(spec.x0, split)
    assert np.max(np.abs(reconstruct(y, z, split) - spec.x0)) <= 1e-10
    np.testing.assert_allclose(y, [5.475, 2.275], atol=1e-14)


@given(st.lists(st.integers(1, 5), min_size=1, max_size=4), st.data())
@settings(max_examples=60, deadline=None)
def test_reconstruction_of_random_states(sizes, data):
    part = ClusterPartition(tuple(sizes))
    qs = [data.draw(simplex(nk)) for nk in sizes]
    x = np.asarray(data.draw(st.lists(st.floats(-100, 100), min_size=part.n, max_size=part.n)))
    split = build_split(part, qs)
    y, z = split_state(x, split)
    assert np.max(np.abs(reconstruct(y, z, split) - x), initial=0) <= 1e-10


def test_no_external_edges_gives_zero_aggregate_blocks():
    weights = {(1, 2): "1+t", (2, 1): "2", (3, 4): "1", (4, 3): "1"}
    spec = build_spec([[1, 2], [3, 4]], weights)
    q = [w.q for w in aggregation_weights(spec, 0.0)]
    blocks = block_matrices(snapshot(spec, 0.0), build_split(spec.partition, q))
    np.testing.assert_allclose(blocks.A11bar, 0, atol=1e-9)
    np.testing.assert_allclose(blocks.A21bar, 0, atol=1e-12)


def test_single_cluster_aggregate_block_is_zero():
    spec = build_spec([[1, 2, 3]], {(1, 2): "1", (2, 3): "1", (3, 1): "1"})
    blocks = block_matrices(snapshot(spec, 0.0), build_split(spec.partition, [np.full(3, 1 / 3)]))
    assert blocks.A11bar.shape == (1, 1)
    assert abs(blocks.A11bar[0, 0]) < 1e-15


def test_example_blocks_respect_norm_bounds():
    spec = paper_example(eps=0.2)
    blocks = block_matrices(snapshot(spec, 0.0), build_split(spec.partition, UNIFORM8), eps=0.2)
    assert blocks.cI == 2.0
    assert blocks.bar_norms()["A11bar"] <= 2 * 2.0 * 0.2
    assert blocks.violations == ()


def test_unit_rescaling():
    spec = build_spec([[1, 2]], {(1, 2): "1", (2, 1): "1"}, horizon=5.0)
    rescaling = fast_time_map(spec)
    t = np.linspace(0, 5, 11)
    np.testing.assert_allclose(rescaling.fast(t), t, atol=1e-12)


def test_doubling_rescaling_and_inverse():
    spec = paper_example()
    rescaling = fast_time_map(spec)
    t = np.linspace(0, 20, 7)
    np.testing.assert_allclose(rescaling.fast(t), 2 * t, atol=1e-12)
    np.testing.assert_allclose(rescaling.psi(2 * t), t, atol=1e-12)


def test_fast_time_round_trip_for_varying_cut():
    spec = build_spec([[1, 2]], {(1, 2): "2+cos(2*t)", (2, 1): "2+cos(2*t)"}, horizon=10.0)
    rescaling = fast_time_map(spec)
    t = np.random.default_rng(0).uniform(0, 10, 100)
    assert np.max(np.abs(rescaling.psi(rescaling.fast(t)) - t)) <= 1e-8
    exact = 2 * t + np.sin(2 * t) / 2
    np.testing.assert_allclose(rescaling.fast(t), exact, atol=1e-5)


def test_vanishing_cut_is_rejected():
    spec = build_spec([[1, 2]], {(1, 2): "t", (2, 1): "t"}, horizon=4.0)
    with pytest.raises(ValueError, match="c\\^I"):
        fast_time_map(spec)


def test_rescaling_table_must_increase():
    with pytest.raises(ValueError):
        TimeRescaling(np.array([0, 1.0]), np.array([0, 0.0]), np.array([0, 0.0]), 1.0)


def _example_decomposer(eps=0.04):
    spec = paper_example(eps=eps)
    rescaling = fast_time_map(spec)
    return spec, rescaling, Decomposer(spec, UNIFORM8, rescaling)


def test_rescaled_blocks_from_original_time_blocks():
    spec, rescaling, dec = _example_decomposer(0.2)
    blocks = dec.blocks(1.0)
    scaled = rescaled_matrices(blocks, rescaling, 2.0, 0.2)
    np.testing.assert_allclose(scaled.A11, blocks.A11bar / (2.0 * 0.2))
    np.testing.assert_allclose(scaled.A22, blocks.A22bar / 2.0)
    with pytest.raises(ValueError):
        rescaled_matrices(blocks, rescaling, 3.0, 0.2)


def test_example_rescaled_A11_bound():
    spec, rescaling, dec = _example_decomposer(0.04)
    tf = np.linspace(0, rescaling.tf_max, 50)
    A11 = dec.rescaled_stacks(tf, 0.04)[0]
    assert np.abs(A11).sum(axis=-1).max() <= 2


def test_boundary_layer_generator_without_external_weights():
    weights = {(1, 2): "1", (2, 1): "1", (3, 4): "2", (4, 3): "2"}
    spec = build_spec([[1, 2], [3, 4]], weights, horizon=5.0)
    dec = Decomposer(spec, [np.full(2, 0.5)] * 2, fast_time_map(spec))
    A22 = dec.rescaled_stacks([0.5], 0.0)[3][0]
    blocks = dec.blocks(dec.rescaling.psi(0.5))
    np.testing.assert_allclose(A22, blocks.A22bar / blocks.cI)


def test_limit_is_stable_for_eps_scaled_weights():
    _, _, dec = _example_decomposer()
    A11 = dec.rescaled_stacks([1.0, 5.0], 0.0)[0]
    # two edges of eps (sin t + 2)/3 each way, q = 1/4, c^I = 2, t = t_f / 2
    a = (np.sin(0.5) + 2) / 12
    np.testing.assert_allclose(A11[0], [[-a, a], [a, -a]], atol=1e-9)


def test_unscaled_external_weights_have_no_limit():
    weights = {(1, 2): "1", (2, 1): "1", (3, 4): "1", (4, 3): "1", (1, 3): "0.01", (3, 1): "0.01"}
    spec = build_spec([[1, 2], [3, 4]], weights, eps=0.02, horizon=5.0)
    dec = Decomposer(spec, [np.full(2, 0.5)] * 2, fast_time_map(spec))
    with pytest.raises(UnstableLimitError):
        dec.rescaled_stacks([1.0], 0.0)


def test_dynamics_equivalence_paper_example():
    spec, _, dec = _example_decomposer(0.2)
    residual, _, _ = dynamics_residual(dec, spec.x0, 20.0)
    assert residual < 1e-6


def test_varying_weights_need_drift_correction():
    rng = np.random.default_rng(11)
    spec = random_spec(rng, [3, 3], eps=0.1, horizon=4.0, varying=True)
    path = AggregationPath(spec, 0.0, 4.0)
    printed, _, _ = dynamics_residual(Decomposer(spec, path), spec.x0, 4.0)
    corrected, _, _ = dynamics_residual(Decomposer(spec, path, drift_corrected=True),
                                        spec.x0, 4.0)
    assert corrected < 1e-6
    assert printed > 100 * corrected


def test_no_bound_violations_recorded_when_checked():
    spec = paper_example(eps=0.05)
    report = check_assumptions(spec)
    dec = Decomposer(spec, UNIFORM8, fast_time_map(spec, report))
    assert dec.blocks(0.3, check_bounds=True).violations == ()
    assert dec.rescaled(0.6, 0.05).violations == ()
