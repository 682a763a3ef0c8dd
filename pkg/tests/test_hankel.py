import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chirpjoint.hankel import BlockHankel, HankelParams, build_hankel, detect_order, estimate_subspace, stack_blocks
from chirpjoint.jdear import ManifoldModel, build_manifold
from chirpjoint.scenario import velocity_to_doppler
from chirpjoint.synth import RangeBinSnapshot
from tests.conftest import on_bin_targets, small_scenario, snapshot


def test_definition_example():
    H = build_hankel(np.arange(1, 7), HankelParams.for_length(6, 2))
    assert H.tolist() == [[1, 2, 3], [2, 3, 4], [3, 4, 5], [4, 5, 6]]


def test_params_for_length():
    p = HankelParams.for_length(256)
    assert (p.rows, p.cols_minus_one, p.cols, p.length) == (171, 85, 86, 256)


@pytest.mark.parametrize("rows, q", [(0, 3), (3, 0)])
def test_bad_params(rows, q):
    with pytest.raises(ValueError):
        build_hankel(np.ones(rows + q), HankelParams(rows, q))


def test_length_mismatch():
    with pytest.raises(ValueError):
        build_hankel(np.ones(10), HankelParams(6, 3))


@pytest.mark.property
@settings(max_examples=30)
@given(st.integers(4, 40), st.data())
def test_hankel_structure(m, data):
    q = data.draw(st.integers(1, m - 1))
    s = np.random.default_rng(m * 100 + q).normal(size=m) + 1j
    H = build_hankel(s, HankelParams.for_length(m, q))
    assert H.shape == (m - q, q + 1)
    assert H[-1, -1] == s[-1]
    i, j = np.indices(H.shape)
    for k in range(m):
        assert np.all(H[i + j == k] == s[k])


@given(st.floats(-np.pi, np.pi), st.integers(5, 30))
def test_geometric_sequence_rank_one(phi, m):
    s = 0.7 * np.exp(1j * phi * np.arange(m))
    sv = np.linalg.svd(build_hankel(s, HankelParams.for_length(m)), compute_uv=False)
    assert sv[1] < 1e-12 * sv[0]


def test_two_modes_rank_two():
    m, p = 24, HankelParams.for_length(24)
    z = np.exp(1j * np.array([0.3, -1.1]))
    x = np.array([1.0, 0.4 - 0.2j])
    s = (z[None, :] ** np.arange(m)[:, None]) @ x
    sv = np.linalg.svd(build_hankel(s, p), compute_uv=False)
    # oracle: H = V_rows diag(x) V_cols^T has exact rank 2
    factor = (z[None, :] ** np.arange(p.rows)[:, None]) @ np.diag(x) @ (z[None, :] ** np.arange(p.cols)[:, None]).T
    assert np.allclose(factor, build_hankel(s, p))
    assert sv[1] > 1e-3 * sv[0] and sv[2] < 1e-12 * sv[0]


def test_single_block_stack_equals_block():
    sc = small_scenario(offsets=(0.0,))
    snap = RangeBinSnapshot(0, np.arange(32, dtype=complex)[None, :], sc)
    h = stack_blocks(snap, HankelParams.for_length(32))
    assert np.array_equal(h.stacked, h.blocks[0])


def test_stack_order():
    sc = small_scenario()
    v = np.random.default_rng(1).normal(size=(2, 32)) + 0j
    h = stack_blocks(RangeBinSnapshot(0, v, sc), HankelParams.for_length(32))
    assert np.array_equal(h.stacked[:h.params.rows], build_hankel(v[0], h.params))
    assert np.array_equal(h.stacked[h.params.rows:], build_hankel(v[1], h.params))


@pytest.mark.property
@pytest.mark.parametrize("num_tx, speeds", [(1, [37.0]), (4, [37.0, -120.0])])
def test_noiseless_block_rank(num_tx, speeds):
    sc = small_scenario(num_tx=num_tx, m=64)
    snap = snapshot(sc, on_bin_targets(sc, speeds))
    sv = np.linalg.svd(stack_blocks(snap, HankelParams.for_length(64)).stacked, compute_uv=False)
    d = num_tx * len(speeds)
    assert sv[d] < 1e-8 * sv[0]
    assert sv[d - 1] > 1e-4 * sv[0]


def test_explicit_factorization_matches_stack():
    sc = small_scenario(num_tx=4, m=64)
    targets = on_bin_targets(sc, [37.0, -120.0])
    snap = snapshot(sc, targets, window="rect")
    p = HankelParams.for_length(64)
    phases, labels = [], []
    for t in targets:
        fd = velocity_to_doppler(t.velocity_mps, sc.waveform)
        for k, fk in enumerate(sc.ddm.ddm_freqs_hz):
            phases.append(2 * np.pi * (fd + fk) * sc.t_ri)
            labels.append(k)
    A = build_manifold(ManifoldModel(np.array(phases), np.array(labels), sc, p))
    H = stack_blocks(snap, p).stacked
    Q, _ = np.linalg.qr(A)
    assert np.linalg.norm(H - Q @ (Q.conj().T @ H)) < 1e-9 * np.linalg.norm(H)
    assert np.linalg.matrix_rank(A) == 8


def _noiseless_stack(num_tx, num_targets, m=64):
    sc = small_scenario(num_tx=num_tx, m=m)
    speeds = [-150.0, 23.0, 96.0][:num_targets]
    return stack_blocks(snapshot(sc, on_bin_targets(sc, speeds)), HankelParams.for_length(m))


@pytest.mark.parametrize("criterion", ["mdl", "aic"])
@pytest.mark.parametrize("num_tx", [1, 2, 4])
@pytest.mark.parametrize("num_targets", [1, 2, 3])
def test_order_detection_noiseless(criterion, num_tx, num_targets):
    sub = estimate_subspace(_noiseless_stack(num_tx, num_targets), criterion=criterion)
    assert sub.model_order == num_tx * num_targets
    assert sub.order_criterion == criterion


def test_two_mode_auto_order():
    sub = estimate_subspace(_noiseless_stack(2, 1))
    assert sub.model_order == 2


def test_fixed_order_beyond_rank():
    sub = estimate_subspace(_noiseless_stack(2, 1), order=3)
    assert sub.basis.shape[1] == 3 and sub.order_criterion == "fixed"
    assert sub.singular_values[2] < 1e-12 * sub.singular_values[0]


def test_order_bound():
    h = _noiseless_stack(1, 1, m=12)
    with pytest.raises(ValueError):
        estimate_subspace(h, order=min(h.stacked.shape) + 1)
    with pytest.raises(ValueError):
        estimate_subspace(BlockHankel([], np.zeros((0, 0)), HankelParams(1, 1)))


def test_orthonormal_basis_and_sorted_spectrum():
    rng = np.random.default_rng(9)
    H = rng.normal(size=(40, 12)) + 1j * rng.normal(size=(40, 12))
    sub = estimate_subspace(BlockHankel([H], H, HankelParams(40, 11)), order=5)
    assert np.linalg.norm(sub.basis.conj().T @ sub.basis - np.eye(5)) < 1e-10
    assert np.all(np.diff(sub.singular_values) <= 0)


def test_white_noise_order_zero():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(400, 20)) + 1j * rng.normal(size=(400, 20))
    assert detect_order(np.linalg.svd(X, compute_uv=False), 400, "mdl") == 0


def test_unknown_criterion():
    with pytest.raises(ValueError):
        detect_order(np.ones(4), 10, "bic")


def test_small_matrix_warns(caplog):
    sc = small_scenario(m=12)
    h = stack_blocks(snapshot(sc, on_bin_targets(sc, [5.0])), HankelParams.for_length(12, 8))
    estimate_subspace(h, order=2)
    assert not caplog.records
    estimate_subspace(h, order=5)
    assert any("rows=4 should exceed the model order 5" in r.message for r in caplog.records)
