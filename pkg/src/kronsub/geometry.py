"""Closed-form geometry of Kronecker-structured subspace pairs."""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .tensorlin import RANK_TOL, PrincipalAngleSet, numerical_rank, orthonormal_basis, principal_angles


def pos(x):
    """Positive part ``max(x, 0)``."""
    return max(x, 0)


def expected_pair_rank(dims):
    """Generic rank of ``[B_i kron A_i, B_j kron A_j]``: ``2 n1 n2 - [2n1-m1]^+ [2n2-m2]^+``."""
    return 2 * dims.n1 * dims.n2 - pos(2 * dims.n1 - dims.m1) * pos(2 * dims.n2 - dims.m2)


def _check_pair(ci, cj):
    if ci.shape != cj.shape:
        raise DimensionMismatch(f"class shapes differ: {ci.shape} vs {cj.shape}")


def ks_pair_rank_numeric(ci, cj, tol=RANK_TOL):
    """Numerical rank of the explicit ``m1 m2 x 2 n1 n2`` concatenation."""
    _check_pair(ci, cj)
    return numerical_rank(np.hstack([ci.basis(), cj.basis()]), tol)


@dataclass(frozen=True)
class DiversityReport:
    """Diversity orders of the K-S model and of an unstructured subspace model of
    the same dimensions.

    ``region`` follows the per-factor case split ``R1`` (both factors have
    ``m > 2n``), ``R2``/``R3`` (one factor with ``n < m < 2n``), ``R4a``/``R4b``
    (both factors with ``n < m < 2n``, split on ``m1 m2`` versus ``2 n1 n2``).
    Dimensions sitting on an edge of those open regions are ``"boundary"``;
    the gap formulas still apply there.
    """

    d_ks: int
    d_std: int
    gap: int
    region: str

    def to_dict(self):
        return {"d_ks": self.d_ks, "d_std": self.d_std, "gap": self.gap, "region": self.region}


def _region(d):
    def mid(m, n):
        return n < m < 2 * n

    if d.m1 > 2 * d.n1 and d.m2 > 2 * d.n2:
        return "R1"
    if mid(d.m1, d.n1) and d.m2 > 2 * d.n2:
        return "R2"
    if mid(d.m2, d.n2) and d.m1 > 2 * d.n1:
        return "R3"
    if mid(d.m1, d.n1) and mid(d.m2, d.n2):
        if d.m1 * d.m2 > 2 * d.n1 * d.n2:
            return "R4a"
        if d.m1 * d.m2 < 2 * d.n1 * d.n2:
            return "R4b"
    return "boundary"


def diversity_order(dims):
    d_ks = dims.n1 * dims.n2 - pos(2 * dims.n1 - dims.m1) * pos(2 * dims.n2 - dims.m2)
    d_std = dims.n1 * dims.n2 - pos(2 * dims.n1 * dims.n2 - dims.m1 * dims.m2)
    return DiversityReport(d_ks, d_std, d_std - d_ks, _region(dims))


def factor_principal_angles(ci, cj):
    """Principal angles of the column factors and of the row factors."""
    _check_pair(ci, cj)
    ang_a = principal_angles(orthonormal_basis(ci.A), orthonormal_basis(cj.A))
    ang_b = principal_angles(orthonormal_basis(ci.B), orthonormal_basis(cj.B))
    return ang_a, ang_b


def ks_principal_angles(ci, cj):
    """Principal angles between ``range(B_i kron A_i)`` and ``range(B_j kron A_j)``.

    Uses ``cos(Theta) = cos(Theta_A) kron cos(Theta_B)``: only the small factor
    SVDs are computed, never the ``m1 m2``-sized one.
    """
    ang_a, ang_b = factor_principal_angles(ci, cj)
    return PrincipalAngleSet.from_cosines(np.outer(ang_a.cosines, ang_b.cosines))
