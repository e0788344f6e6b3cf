"""Dense linear-algebra primitives.

Everything here works on small dense ``numpy`` arrays (factor matrices of a
few dozen rows, Kronecker products of a few thousand).  Ranks and
pseudo-determinants use a cutoff relative to the largest singular value or
eigenvalue, so generic-position results do not depend on the overall scale.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NotOrthonormal, NotSymmetric, ZeroMatrix

#: Default relative cutoff for ranks, bases and pseudo-determinants.
RANK_TOL = 1e-10

_ORTHO_TOL = 1e-8
_SYM_TOL = 1e-8


def _check_tol(tol):
    if not 0.0 < tol < 1.0:
        raise ValueError(f"relative threshold must lie in (0, 1), got {tol!r}")


def kron(P, Q):
    """Kronecker product; block ``(i, j)`` of the result is ``P[i, j] * Q``."""
    return np.kron(np.asarray(P, dtype=float), np.asarray(Q, dtype=float))


def vec(Y):
    """Column-major vectorisation, so that ``vec(A X B.T) == kron(B, A) @ vec(X)``."""
    return np.asarray(Y).reshape(-1, order="F")


def unvec(y, rows, cols):
    return np.asarray(y).reshape((rows, cols), order="F")


def singular_values(M):
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return np.zeros(0)
    return np.linalg.svd(M, compute_uv=False)


def numerical_rank(M, tol=RANK_TOL):
    """Number of singular values above ``tol * sigma_max`` (0 for a zero matrix)."""
    _check_tol(tol)
    s = singular_values(M)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > tol * s[0]))


def orthonormal_basis(M, tol=RANK_TOL):
    """Orthonormal basis of ``range(M)`` at relative tolerance ``tol``.

    The returned matrix has ``numerical_rank(M, tol)`` columns (the leading
    left singular vectors).

    Raises
    ------
    ZeroMatrix
        If every singular value falls below the threshold.
    """
    _check_tol(tol)
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        raise ZeroMatrix("empty matrix has no range")
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    if s[0] == 0.0:
        raise ZeroMatrix("all singular values are zero")
    r = int(np.count_nonzero(s > tol * s[0]))
    return U[:, :r]


def _check_orthonormal(U, name):
    G = U.T @ U
    err = np.max(np.abs(G - np.eye(G.shape[0]))) if G.size else 0.0
    if err > _ORTHO_TOL:
        raise NotOrthonormal(f"{name} columns are not orthonormal (max |U'U - I| = {err:.3g})")


@dataclass(frozen=True)
class PrincipalAngleSet:
    """Principal angles in ascending order (radians)."""

    angles: np.ndarray

    @classmethod
    def from_cosines(cls, cosines):
        c = np.clip(np.asarray(cosines, dtype=float).ravel(), 0.0, 1.0)
        return cls(np.sort(np.arccos(c)))

    @property
    def cosines(self):
        """Cosines in descending order (matching ascending angles)."""
        return np.cos(self.angles)

    def __len__(self):
        return len(self.angles)


def principal_angles(U1, U2):
    """Principal angles between the column spans of two orthonormal matrices.

    The cosines are the singular values of ``U1.T @ U2``, clamped into
    ``[0, 1]`` before ``arccos``; ``min(cols(U1), cols(U2))`` angles are
    returned.
    """
    U1 = np.asarray(U1, dtype=float)
    U2 = np.asarray(U2, dtype=float)
    if U1.shape[0] != U2.shape[0]:
        raise DimensionMismatch(f"row counts differ: {U1.shape[0]} vs {U2.shape[0]}")
    _check_orthonormal(U1, "U1")
    _check_orthonormal(U2, "U2")
    k = min(U1.shape[1], U2.shape[1])
    s = singular_values(U1.T @ U2)[:k]
    return PrincipalAngleSet.from_cosines(s)


def pseudo_determinant(M, tol=RANK_TOL):
    """Product of the eigenvalues of symmetric PSD ``M`` above ``tol * lambda_max``.

    The zero matrix gives the empty product, 1.0.
    """
    _check_tol(tol)
    M = np.asarray(M, dtype=float)
    if M.size and np.max(np.abs(M - M.T)) > _SYM_TOL:
        raise NotSymmetric("matrix is not symmetric")
    if M.size == 0:
        return 1.0
    w = np.linalg.eigvalsh(0.5 * (M + M.T))
    top = w[-1]
    if top <= 0.0:
        return 1.0
    return float(np.prod(w[w > tol * top]))


def intersection_dimension(U1, U2, tol=RANK_TOL):
    """``dim(range(U1) & range(U2))`` via ``r(U1) + r(U2) - r([U1 U2])``."""
    U1 = np.asarray(U1, dtype=float)
    U2 = np.asarray(U2, dtype=float)
    if U1.shape[0] != U2.shape[0]:
        raise DimensionMismatch(f"row counts differ: {U1.shape[0]} vs {U2.shape[0]}")
    both = np.hstack([U1, U2])
    return numerical_rank(U1, tol) + numerical_rank(U2, tol) - numerical_rank(both, tol)
