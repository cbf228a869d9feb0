import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slsmpc.operator import (BltOperator, CausalityError, SingularBlockError, downshift, induced_inf_norm, inverse,
                             multiply, split_columns)

from conftest import random_blt

dims = st.tuples(st.integers(0, 6), st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**32 - 1))


def test_identity_product():
    rng = np.random.default_rng(0)
    A = random_blt(rng, 4, 2, 3)
    I = BltOperator.identity(4, 3)
    assert np.array_equal((A @ I).to_dense(), A.to_dense())


def test_block_above_diagonal_rejected():
    with pytest.raises(CausalityError):
        BltOperator({(1, 2): np.eye(2)}, 3, 2, 2)


def test_dimension_mismatch():
    rng = np.random.default_rng(1)
    with pytest.raises(ValueError):
        multiply(random_blt(rng, 3, 2, 2), random_blt(rng, 3, 3, 2))
    with pytest.raises(ValueError):
        multiply(random_blt(rng, 3, 2, 2), random_blt(rng, 4, 2, 2))


def test_strictly_causal_product_has_delay_two():
    rng = np.random.default_rng(2)
    A = random_blt(rng, 5, 2, 2, strictly_causal=True)
    B = random_blt(rng, 5, 2, 2, strictly_causal=True)
    C = A @ B
    assert all(k >= 2 for _, k in C.keys())


@settings(max_examples=40, deadline=None)
@given(dims)
def test_dense_consistency(d):
    T, p, q, seed = d
    rng = np.random.default_rng(seed)
    A = random_blt(rng, T, p, q)
    B = random_blt(rng, T, q, p)
    C = random_blt(rng, T, p, q)
    assert np.allclose((A @ B).to_dense(), A.to_dense() @ B.to_dense(), atol=1e-12, rtol=0)
    assert np.allclose((A + C).to_dense(), A.to_dense() + C.to_dense(), atol=1e-12, rtol=0)
    assert np.allclose((A - C).to_dense(), A.to_dense() - C.to_dense(), atol=1e-12, rtol=0)
    assert np.allclose((A * 2.5).to_dense(), 2.5 * A.to_dense(), atol=1e-12, rtol=0)
    # products stay lower triangular
    D = (A @ B).to_dense()
    for i in range(T + 1):
        assert not np.any(D[i * p:(i + 1) * p, (i + 1) * p:])


@settings(max_examples=40, deadline=None)
@given(dims)
def test_inverse_round_trip(d):
    T, n, _, seed = d
    rng = np.random.default_rng(seed)
    N = random_blt(rng, T, n, n, strictly_causal=True, scale=0.5)
    A = BltOperator.identity(T, n) + N
    Ai = inverse(A)
    assert np.max(np.abs((A @ Ai).to_dense() - np.eye((T + 1) * n))) <= 1e-10
    assert np.max(np.abs(inverse(Ai).to_dense() - A.to_dense())) <= 1e-9


def test_inverse_neumann_series():
    rng = np.random.default_rng(3)
    T, n = 5, 2
    N = random_blt(rng, T, n, n, strictly_causal=True)
    series = sum((N ** k for k in range(1, T + 1)), BltOperator.identity(T, n))
    Ai = inverse(BltOperator.identity(T, n) - N)
    assert np.allclose(Ai.to_dense(), series.to_dense(), atol=1e-9, rtol=1e-12)


def test_inverse_identity_and_singular():
    I = BltOperator.identity(3, 2)
    assert np.array_equal(inverse(I).to_dense(), I.to_dense())
    S = BltOperator({(0, 0): np.eye(2), (1, 0): np.zeros((2, 2)), (2, 0): np.eye(2)}, 2, 2, 2)
    with pytest.raises(SingularBlockError) as exc:
        inverse(S)
    assert exc.value.row == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_strictly_causal_nilpotent(T, n, seed):
    rng = np.random.default_rng(seed)
    N = random_blt(rng, T, n, n, strictly_causal=True)
    assert (N ** (T + 1)).is_zero()
    Z = downshift(T, n)
    assert (Z ** (T + 1)).is_zero()
    assert not (Z ** T).is_zero()


def test_induced_norm_examples():
    assert induced_inf_norm(BltOperator.identity(3, 2)) == 1.0
    assert induced_inf_norm(np.array([[1.0, -2.0], [3.0, 0.0]])) == 3.0
    assert induced_inf_norm(BltOperator.zeros(3, 2, 2)) == 0.0


@settings(max_examples=40, deadline=None)
@given(dims)
def test_induced_norm_submultiplicative(d):
    T, p, q, seed = d
    rng = np.random.default_rng(seed)
    A = random_blt(rng, T, p, q)
    B = random_blt(rng, T, q, p)
    assert induced_inf_norm(A @ B) <= induced_inf_norm(A) * induced_inf_norm(B) * (1 + 1e-12)
    assert induced_inf_norm(A) == pytest.approx(np.max(np.abs(A.to_dense()).sum(axis=1)), abs=0)


def test_split_columns():
    P00, P10, P11 = np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]]), np.array([[5.0, 6.0]])
    A = BltOperator({(0, 0): P00, (1, 1): P10, (1, 0): P11}, 1, 1, 2)
    parts = split_columns(A, 2)
    assert np.array_equal(parts.first, np.vstack([P00, P10]))
    assert np.array_equal(parts.rest, np.vstack([np.zeros((1, 2)), P11]))
    assert np.array_equal(parts.reassemble(), A.to_dense())
    with pytest.raises(ValueError):
        split_columns(A, 3)


def test_uncertainty_first_block_row_is_zero():
    rng = np.random.default_rng(4)
    T, n, m = 4, 2, 1
    dA = random_blt(rng, T, n, n)
    dB = random_blt(rng, T, n, m)
    D = downshift(T, n).to_dense() @ np.hstack([dA.to_dense(), dB.to_dense()])
    assert not np.any(D[:n])
