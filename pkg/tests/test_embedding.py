import numpy as np
import pytest

from grain.autodiff import GradChannel, Parameter, backward, sum_all
from grain.embedding import FactorizedEmbedding, factorized_lookup, svd_truncate
from grain.errors import InputError, ParameterError


def test_full_rank_reconstruction():
    rng = np.random.default_rng(0)
    e = rng.standard_normal((16, 8))
    fe = svd_truncate(e, rank=8)
    err = np.linalg.norm(e - fe.reconstruct()) / np.linalg.norm(e)
    assert err < 1e-8


def test_diagonal_truncation_keeps_largest():
    e = np.diag([3.0, 1.0])
    fe = svd_truncate(e, rank=1)
    np.testing.assert_allclose(fe.reconstruct(), np.diag([3.0, 0.0]), atol=1e-8)


def test_param_count_formula():
    rng = np.random.default_rng(1)
    e = rng.standard_normal((64, 32))
    fe = svd_truncate(e, rank=8)
    assert e.size == 2048
    assert fe.param_count() == (64 + 32) * 8 == 768


def test_rank_validation():
    e = np.ones((4, 6))
    with pytest.raises(ParameterError):
        svd_truncate(e, 0)
    with pytest.raises(ParameterError):
        svd_truncate(e, 5)


def test_reconstruction_error_non_increasing_in_rank():
    rng = np.random.default_rng(2)
    for _ in range(5):
        e = rng.standard_normal((16, 8))
        errs = [
            np.linalg.norm(e - svd_truncate(e, r).reconstruct())
            for r in range(1, 9)
        ]
        assert all(a >= b - 1e-10 for a, b in zip(errs, errs[1:]))


def test_singular_values_sorted_nonnegative():
    rng = np.random.default_rng(3)
    fe = svd_truncate(rng.standard_normal((10, 6)), rank=3)
    s = fe.singular_values
    assert np.all(s >= 0)
    assert np.all(np.diff(s) <= 0)


def test_full_rank_lookup_matches_dense():
    rng = np.random.default_rng(4)
    e = rng.standard_normal((12, 6)).astype(np.float32)
    fe = svd_truncate(e, rank=6)
    ids = np.array([[0, 3, 11], [5, 5, 1]])
    out = factorized_lookup(ids, fe)
    np.testing.assert_allclose(out.data, e[ids], atol=1e-5)


def test_zero_row_gives_zero_embedding():
    fe = svd_truncate(np.eye(4), rank=4)
    fe.w_r.value[2] = 0.0
    out = factorized_lookup(np.array([[2]]), fe)
    np.testing.assert_array_equal(out.data, np.zeros((1, 1, 4)))


def test_hand_two_by_two_lookup():
    fe = FactorizedEmbedding(
        w_r=Parameter(np.array([[1.0, 2.0], [3.0, 4.0]])),
        v_r=Parameter(np.array([[5.0, 6.0], [7.0, 8.0]])),
        rank=2,
    )
    out = factorized_lookup(np.array([[1]]), fe)
    np.testing.assert_array_equal(out.data, [[[3 * 5 + 4 * 7, 3 * 6 + 4 * 8]]])


def test_lookup_rejects_out_of_range():
    fe = svd_truncate(np.eye(4), rank=2)
    with pytest.raises(InputError):
        factorized_lookup(np.array([[4]]), fe)


def test_factors_are_trainable():
    fe = svd_truncate(np.random.default_rng(5).standard_normal((6, 4)), rank=2)
    out = factorized_lookup(np.array([[1, 2]]), fe)
    backward(sum_all(out), GradChannel.CE)
    assert np.abs(fe.w_r.grad_ce).sum() > 0
    assert np.abs(fe.v_r.grad_ce).sum() > 0
