"""Dense linear algebra kernels shared by every solver.

Real and complex fields are handled uniformly through the array dtype.
Matrices are kept column-major so that column restriction is a gather of
contiguous blocks.
"""

import numpy as np
from scipy.linalg import cho_factor, cho_solve


class NotPositiveDefinite(Exception):
    """Cholesky factorization hit a non-positive pivot."""


class NonSymmetric(Exception):
    """Matrix is not Hermitian within tolerance."""


class IndexOutOfRange(IndexError):
    """Column index outside the matrix."""


def ht(A):
    """Hermitian transpose; plain transpose for real arrays."""
    if np.iscomplexobj(A):
        return A.conj().T
    return A.T


def gram(A):
    """A^H A, symmetrized so eigensolvers see an exactly Hermitian matrix."""
    G = ht(A) @ A
    return 0.5 * (G + ht(G))


def solve_hpd(M, b):
    """Solve M x = b for Hermitian positive definite M via Cholesky.

    One step of iterative refinement keeps the backward residual at the
    1e-10 * ||b|| level for the condition numbers seen in practice.
    """
    M = np.asarray(M)
    b = np.asarray(b)
    try:
        c = cho_factor(M, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    x = cho_solve(c, b, check_finite=False)
    x = x + cho_solve(c, b - M @ x, check_finite=False)
    return x


def restrict_columns(A, E):
    """Restriction of A to the columns indexed by E, in order."""
    A = np.asarray(A)
    E = np.asarray(E, dtype=np.intp)
    if E.size and (E.min() < 0 or E.max() >= A.shape[1]):
        raise IndexOutOfRange(f"column index out of range for {A.shape[1]} columns")
    return A[:, E]


def complement(E, n):
    """Indices of [0, n) not in E, sorted."""
    mask = np.ones(n, dtype=bool)
    mask[np.asarray(E, dtype=np.intp)] = False
    return np.flatnonzero(mask)


def eig_sym_extremes(M, sym_tol=1e-10):
    """(smallest, largest) eigenvalue of a Hermitian PSD matrix."""
    M = np.asarray(M)
    if M.size == 0:
        return 0.0, 0.0
    scale = np.linalg.norm(M, np.inf)
    if scale > 0 and np.linalg.norm(M - ht(M), np.inf) > sym_tol * scale:
        raise NonSymmetric("matrix deviates from its Hermitian transpose")
    w = np.linalg.eigvalsh(M)
    return float(w[0]), float(w[-1])


def gram_eigvals(A):
    """Eigenvalues of A^H A (length = #columns), via singular values.

    Columns beyond the rank contribute exact zeros, which matters for the
    trace formulas built on this spectrum.
    """
    A = np.asarray(A)
    m, n = A.shape
    if n == 0:
        return np.zeros(0)
    s = np.linalg.svd(A, compute_uv=False)
    tau = np.zeros(n)
    tau[: s.size] = s**2
    return np.sort(tau)
