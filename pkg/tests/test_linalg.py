import numpy as np
import pytest

from asamp.linalg import (IndexOutOfRange, NonSymmetric, NotPositiveDefinite,
                          complement, eig_sym_extremes, gram, gram_eigvals,
                          restrict_columns, solve_hpd)
from conftest import rng


def test_solve_hpd_identity():
    b = np.array([1.0, 2.0, 3.0])
    assert np.allclose(solve_hpd(np.eye(3), b), b)


def test_solve_hpd_diagonal():
    M = np.diag([2.0, 4.0])
    assert np.allclose(solve_hpd(M, np.array([2.0, 4.0])), [1.0, 1.0])


def test_solve_hpd_residual_oracle():
    # residual oracle: ||Mx - b|| relative to ||b|| after a direct solve
    r = rng(1)
    G = r.normal(size=(5, 5))
    M = G.T @ G + np.eye(5)
    b = r.normal(size=5)
    x = solve_hpd(M, b)
    assert np.linalg.norm(M @ x - b) < 1e-10 * np.linalg.norm(b)


def test_solve_hpd_rejects_indefinite():
    M = np.diag([1.0, -1.0])
    with pytest.raises(NotPositiveDefinite):
        solve_hpd(M, np.ones(2))


def test_solve_hpd_complex():
    r = rng(2)
    G = r.normal(size=(6, 6)) + 1j * r.normal(size=(6, 6))
    M = G.conj().T @ G + np.eye(6)
    b = r.normal(size=6) + 1j * r.normal(size=6)
    x = solve_hpd(M, b)
    assert np.linalg.norm(M @ x - b) < 1e-10 * np.linalg.norm(b)


@pytest.mark.parametrize("m,n", [(20, 30), (50, 80), (120, 200), (400, 400)])
def test_solve_then_multiply_roundtrip(m, n):
    r = rng(m * 1000 + n)
    A = r.normal(size=(m, n)) / np.sqrt(m)
    M = gram(A) + np.eye(n)
    x_true = r.normal(size=n)
    x = solve_hpd(M, M @ x_true)
    assert np.linalg.norm(x - x_true) < 1e-9 * np.linalg.norm(x_true)


def test_restrict_columns_basic():
    A = np.arange(12.0).reshape(3, 4)
    out = restrict_columns(A, [0, 2])
    assert out.shape == (3, 2)
    assert np.array_equal(out, A[:, [0, 2]])


def test_restrict_columns_identity_and_empty():
    A = np.arange(12.0).reshape(3, 4)
    assert np.array_equal(restrict_columns(A, np.arange(4)), A)
    assert restrict_columns(A, np.array([], dtype=int)).shape == (3, 0)


def test_restrict_columns_out_of_range():
    A = np.zeros((3, 4))
    with pytest.raises(IndexOutOfRange):
        restrict_columns(A, [0, 4])


def test_restrict_extend_product_identity():
    # A_E x_E equals A x for x supported on E
    r = rng(3)
    A = r.normal(size=(6, 10))
    E = np.array([1, 4, 7])
    x = np.zeros(10)
    x[E] = r.normal(size=3)
    assert np.allclose(restrict_columns(A, E) @ x[E], A @ x)


def test_complement():
    assert np.array_equal(complement([0, 2], 5), [1, 3, 4])


def test_eig_extremes_diag_and_zero():
    assert eig_sym_extremes(np.diag([1.0, 3.0, 2.0])) == (1.0, 3.0)
    assert eig_sym_extremes(np.zeros((3, 3))) == (0.0, 0.0)


def test_eig_extremes_vs_full_spectrum_oracle():
    r = rng(4)
    A = r.normal(size=(4, 6))
    M = gram(A)
    lo, hi = eig_sym_extremes(M)
    w = np.linalg.eigvalsh(M)  # dense full-spectrum oracle
    assert abs(lo - w[0]) <= 1e-8 * max(1.0, abs(w[0]))
    assert abs(hi - w[-1]) <= 1e-8 * abs(w[-1])


def test_eig_extremes_rejects_nonsymmetric():
    M = np.array([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(NonSymmetric):
        eig_sym_extremes(M)


def test_eig_extremes_bound_rayleigh_quotients():
    r = rng(5)
    A = r.normal(size=(8, 12))
    M = gram(A)
    lo, hi = eig_sym_extremes(M)
    for _ in range(100):
        z = r.normal(size=12)
        q = z @ M @ z / (z @ z)
        assert lo - 1e-10 <= q <= hi + 1e-10


def test_gram_eigvals_pads_zeros():
    r = rng(6)
    A = r.normal(size=(4, 9))
    tau = gram_eigvals(A)
    assert tau.shape == (9,)
    assert np.count_nonzero(tau < 1e-12) >= 5
    assert np.allclose(np.sort(np.linalg.eigvalsh(gram(A))), tau, atol=1e-9)
