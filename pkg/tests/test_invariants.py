import mpmath
import numpy as np
import pytest

from weightmark import (AmbiguousRecovery, InvalidArgument, PermKey, PrngStream, SingularMatrix,
                        apply_equiv_transform, apply_frame_correction, compute_invariants,
                        condition_number, gen_equiv_params, gen_permutation,
                        permute_invariant_rows, recover_permutation)


def test_identity_weights_give_rows():
    W = np.arange(20.0).reshape(5, 4)
    inv = compute_invariants(W, np.eye(4), np.eye(4), [3, 1])
    np.testing.assert_array_equal(inv.A_m, W[[3, 1]])
    assert inv.source_L_M == (3, 1) and inv.t == 2


def test_zero_row_gives_zero_invariant(rng):
    W = rng.normal(size=(6, 4))
    W[2] = 0
    inv = compute_invariants(W, rng.normal(size=(4, 4)), rng.normal(size=(4, 4)), [2, 0])
    assert not inv.A_m[0].any()


def test_toy_d3_hand_product():
    W = np.zeros((4, 3))
    W[1] = (1, 0, 2)
    inv = compute_invariants(W, np.diag([1.0, 2, 3]), np.eye(3), [1])
    np.testing.assert_array_equal(inv.A_m, [[1, 0, 6]])


def test_invariant_index_errors(rng):
    W = rng.normal(size=(6, 4))
    with pytest.raises(InvalidArgument):
        compute_invariants(W, np.eye(4), np.eye(4), [6])
    with pytest.raises(InvalidArgument):
        compute_invariants(W, np.eye(4), np.eye(4), [1, 1])


def test_permute_rows():
    out = permute_invariant_rows(np.array([[1.0, 2, 3]]), [PermKey([2, 0, 1])])
    assert out.tolist() == [[3, 1, 2]]
    A = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(permute_invariant_rows(A, [PermKey.identity(3)] * 2), A)
    keys = [gen_permutation(PrngStream(i), 3) for i in range(2)]
    back = permute_invariant_rows(permute_invariant_rows(A, keys), [k.inverse() for k in keys])
    np.testing.assert_array_equal(back, A)
    with pytest.raises(InvalidArgument):
        permute_invariant_rows(A, keys[:1])


def test_condition_number_examples(rng):
    assert condition_number(np.eye(5)) == 1.0
    assert condition_number(np.diag([4.0, 1.0])) == pytest.approx(4.0, rel=1e-15)
    M = rng.normal(size=(3, 3))
    sv = mpmath.svd_r(mpmath.matrix(M.tolist()), compute_uv=False)
    oracle = float(max(sv) / min(sv))
    assert abs(condition_number(M) - oracle) <= 1e-9 * oracle


def test_condition_number_scales_with_row():
    assert condition_number(np.diag([3.0 * 2, 1.0])) == pytest.approx(
        2 * condition_number(np.diag([3.0, 1.0])), rel=1e-14)


def test_condition_number_singular():
    with pytest.raises(SingularMatrix):
        condition_number(np.array([[1.0, 2.0], [2.0, 4.0]]))


def test_recover_identity(base_model):
    assert recover_permutation(base_model.W_e, base_model.W_e).is_identity()


def test_recover_scaled_permutation(base_model):
    pi = gen_permutation(PrngStream(21), 64)
    suspect = 2.5 * pi.apply(base_model.W_e)
    assert recover_permutation(base_model.W_e, suspect) == pi


def test_recover_ambiguous(base_model):
    W = np.array(base_model.W_e)
    W[:, 5] = 0.0
    W[:, 9] = W[:, 3]
    # column 5 is zero so its best match is arbitrary; 3 and 9 both claim column 3
    with pytest.raises(AmbiguousRecovery):
        recover_permutation(base_model.W_e, W)


def test_frame_correction(base_model):
    L_M = list(range(10))
    params = gen_equiv_params(PrngStream(8), base_model.d, base_model.d_ff, base_model.n_layers)
    attacked = apply_equiv_transform(base_model, params)
    pi_hat = recover_permutation(base_model.W_e, attacked.W_e)
    assert pi_hat == params.pi
    fixed = apply_frame_correction(attacked, pi_hat)
    first, orig = fixed.layers[0], base_model.layers[0]
    got = compute_invariants(fixed.W_e, first.W_q, first.W_k, L_M).A_m
    want = compute_invariants(base_model.W_e, orig.W_q, orig.W_k, L_M).A_m / params.L_a[0]
    assert np.max(np.abs(got - want)) <= 1e-9 * np.max(np.abs(want))
    assert apply_frame_correction(fixed, PermKey.identity(64)) is fixed
    assert apply_frame_correction(base_model, PermKey.identity(64)) is base_model
