"""Analytic misclassification and capacity bounds for K-S classes.

The pairwise bounds work from factor Gram matrices: the nonzero spectrum of
``D_i D_i^T + D_j D_j^T`` equals that of the ``2N x 2N`` Gram matrix of
``[D_i D_j]``, whose blocks are ``(B_a^T B_b) kron (A_a^T A_b)``.  No
``M x M`` matrix is formed.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateAngles, InvalidRatio, SingularCovariance
from .geometry import diversity_order, factor_principal_angles, pos
from .model import StructuredCovariance, snr_db_to_sigma2, structured_covariance
from .tensorlin import RANK_TOL, orthonormal_basis, pseudo_determinant

_UNDERFLOW = 1e-14


@dataclass(frozen=True, eq=False)
class GaussianPair:
    """Two Gaussian hypotheses; covariances may be arrays or StructuredCovariance."""

    mu1: np.ndarray
    mu2: np.ndarray
    S1: object
    S2: object


def _dense(S):
    return S.dense() if isinstance(S, StructuredCovariance) else np.asarray(S, dtype=float)


def _chol_logdet(S, what):
    try:
        C = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise SingularCovariance(f"{what} is not positive definite") from None
    return C, 2.0 * np.sum(np.log(np.diag(C)))


def bhattacharyya_exponent(pair):
    """Bhattacharyya distance ``b`` between two Gaussians."""
    S1, S2 = _dense(pair.S1), _dense(pair.S2)
    dmu = np.asarray(pair.mu1, dtype=float) - np.asarray(pair.mu2, dtype=float)
    if S1.shape != S2.shape or S1.shape[0] != dmu.shape[0]:
        raise ValueError("GaussianPair shapes do not conform")
    Sbar = 0.5 * (S1 + S2)
    C, ld_bar = _chol_logdet(Sbar, "average covariance")
    _, ld1 = _chol_logdet(S1, "S1")
    _, ld2 = _chol_logdet(S2, "S2")
    w = np.linalg.solve(C, dmu)
    return 0.5 * (ld_bar - 0.5 * (ld1 + ld2)) + 0.125 * float(w @ w)


def bhattacharyya_bound(pair):
    """Upper bound ``exp(-b) / 2`` on the equal-prior ML error between two Gaussians."""
    return 0.5 * math.exp(-bhattacharyya_exponent(pair))


def pair_gram(ci, cj):
    """Gram matrix of ``[B_i kron A_i, B_j kron A_j]`` built from factor Grams."""
    blocks = [[np.kron(p.B.T @ q.B, p.A.T @ q.A) for q in (ci, cj)] for p in (ci, cj)]
    return np.block(blocks)


def pair_spectrum(ci, cj):
    """Eigenvalues (descending, clipped at 0) of ``D_i D_i^T + D_j D_j^T``, padded to 2N."""
    w = np.linalg.eigvalsh(pair_gram(ci, cj))[::-1]
    return np.clip(w, 0.0, None)


def pair_rank(ci, cj, tol=RANK_TOL):
    """``r*_ij`` from the pair spectrum at relative tolerance ``tol``."""
    w = pair_spectrum(ci, cj)
    if w[0] <= 0:
        return 0
    return int(np.count_nonzero(w > tol * w[0]))


def pairwise_ks_log_bound(ci, cj, sigma2):
    """Natural log of :func:`pairwise_ks_bound`."""
    if sigma2 <= 0:
        raise SingularCovariance("sigma2 must be positive: class covariances are rank deficient without noise")
    N = ci.A.shape[1] * ci.B.shape[1]
    g = pair_spectrum(ci, cj)
    li = structured_covariance(ci, sigma2).eigvals
    lj = structured_covariance(cj, sigma2).eigvals
    # log of |(Si + Sj)/2| / sqrt(|Si||Sj|); the (sigma2)^(M - ...) factors reduce to -N log sigma2
    log_ratio = (
        np.sum(np.log(0.5 * g + sigma2))
        - N * math.log(sigma2)
        - 0.5 * (np.sum(np.log(li + sigma2)) + np.sum(np.log(lj + sigma2)))
    )
    return math.log(0.5) - 0.5 * float(log_ratio)


def pairwise_ks_bound(ci, cj, sigma2):
    """Bhattacharyya bound between two zero-mean K-S classes.

    Equal to :func:`bhattacharyya_bound` on the explicit covariances
    ``D D^T + sigma2 I``, evaluated from eigenvalues only.
    """
    return math.exp(pairwise_ks_log_bound(ci, cj, sigma2))


def union_bound_pe(ens, sigma2):
    """``(1/L) sum_l sum_{l' != l}`` of the pairwise bounds, capped at 1."""
    L = len(ens)
    if L < 2:
        raise ValueError("union bound needs at least two classes")
    total = 0.0
    for i in range(L):
        for j in range(i + 1, L):
            total += 2.0 * pairwise_ks_bound(ens[i], ens[j], sigma2)
    return min(1.0, total / L)


@dataclass(frozen=True)
class AngleBound:
    """High-SNR principal-angle bound for one class pair."""

    bound: float
    c1: float
    t1: int
    t2: int
    r_cap: int
    r_star: int
    exponent: float
    angle_product: float


def angle_thresholds(n1, n2, r_cap, plus_root=False):
    """Excluded leading angle counts ``(t1, t2)``, clamped to ``[0, n1] x [0, n2]``.

    The default is the minus-root form ``floor(((n2-n1) - sqrt((n2-n1)^2 + 4 r_cap)) / 2)``
    (and its mirror), which is never positive.  ``plus_root=True`` takes the
    other root of ``t^2 - (n2-n1) t - r_cap = 0``, giving ``t1 t2 = r_cap``
    whenever that product is attainable.
    """
    sgn = 1.0 if plus_root else -1.0
    t1 = math.floor(((n2 - n1) + sgn * math.sqrt((n2 - n1) ** 2 + 4 * r_cap)) / 2 + 1e-9)
    t2 = math.floor(((n1 - n2) + sgn * math.sqrt((n1 - n2) ** 2 + 4 * r_cap)) / 2 + 1e-9)
    return min(max(t1, 0), n1), min(max(t2, 0), n2)


def _split_eigs(Dp, U_cap, U_minus):
    # eigenvalues of D D^T compressed onto the intersection and onto its
    # orthogonal complement within range(D)
    def comp(U):
        if U.shape[1] == 0:
            return np.zeros(0)
        G = U.T @ Dp
        return np.clip(np.linalg.eigvalsh(G @ G.T), 0.0, None)

    return comp(U_cap), comp(U_minus)


def _complement_in(Q, U_cap):
    # orthonormal basis of range(Q) minus span(U_cap)
    if U_cap.shape[1] == 0:
        return Q
    R = Q - U_cap @ (U_cap.T @ Q)
    k = Q.shape[1] - U_cap.shape[1]
    U, _, _ = np.linalg.svd(R, full_matrices=False)
    return U[:, :k]


def high_snr_angle_bound(ci, cj, sigma2, tol=RANK_TOL, plus_root=False, exact_prefactor=False):
    """Principal-angle form of the high-SNR pairwise bound.

    ``bound = c1 * sigma2^((r* - n1 n2)/2) * prod(1 - cos^2 th^A_p cos^2 th^B_q)^(-1/2)``
    with the product over ``p > t1`` and ``q > t2`` (angles ascending).

    ``c1`` splits each class covariance into its part on the intersection of
    the two K-S subspaces and its part on the orthogonal complement of that
    intersection inside the class subspace (compressions of ``D D^T`` onto
    those bases).  Its power of two is ``2^((n1 n2 - 2)/2)`` by default;
    ``exact_prefactor=True`` uses ``2^((r* - 2)/2)``, which keeps the factor
    ``1/2`` of the averaged covariance and makes the bound equal the
    pairwise Bhattacharyya bound asymptotically.  The default is smaller by
    ``2^((n1 n2 - r_cap)/2)`` and can fall below the true error.

    Raises
    ------
    DegenerateAngles
        When the subspaces coincide (``r_cap == n1 n2``) or a retained product
        term ``1 - cos^2 cos^2`` falls below 1e-14.
    """
    if sigma2 <= 0:
        raise SingularCovariance("sigma2 must be positive")
    m1, m2, n1, n2 = ci.shape
    N = n1 * n2
    r_star = pair_rank(ci, cj, tol)
    r_cap = 2 * N - r_star
    if r_cap >= N:
        raise DegenerateAngles("subspaces overlap completely; the bound is not finite")

    Qi = np.kron(orthonormal_basis(ci.B, tol), orthonormal_basis(ci.A, tol))
    Qj = np.kron(orthonormal_basis(cj.B, tol), orthonormal_basis(cj.A, tol))
    if r_cap > 0:
        # intersection basis: directions of Qi whose cosine with range(Qj) is 1
        Ui, s, _ = np.linalg.svd(Qi.T @ Qj)
        U_cap = Qi @ Ui[:, :r_cap]
    else:
        U_cap = np.zeros((Qi.shape[0], 0))
    Di, Dj = ci.basis(), cj.basis()
    lam_i_cap, lam_i_minus = _split_eigs(Di, U_cap, _complement_in(Qi, U_cap))
    lam_j_cap, lam_j_minus = _split_eigs(Dj, U_cap, _complement_in(Qj, U_cap))

    if r_cap > 0:
        Ci = (U_cap.T @ Di) @ (U_cap.T @ Di).T
        Cj = (U_cap.T @ Dj) @ (U_cap.T @ Dj).T
        pd = pseudo_determinant(0.5 * ((Ci + Cj) + (Ci + Cj).T), tol)
    else:
        pd = 1.0
    log_c1 = (
        0.5 * ((r_star if exact_prefactor else N) - 2) * math.log(2.0)
        - 0.5 * (math.log(pd) - 0.5 * (np.sum(np.log(lam_i_cap)) + np.sum(np.log(lam_j_cap))))
        - 0.25 * (np.sum(np.log(lam_i_minus)) + np.sum(np.log(lam_j_minus)))
    )

    t1, t2 = angle_thresholds(n1, n2, r_cap, plus_root)
    ang_a, ang_b = factor_principal_angles(ci, cj)
    ca = ang_a.cosines[t1:]
    cb = ang_b.cosines[t2:]
    terms = 1.0 - np.outer(ca**2, cb**2)
    if terms.size and terms.min() < _UNDERFLOW:
        raise DegenerateAngles(
            f"angle product term {terms.min():.3g} underflows (t1={t1}, t2={t2}, r_cap={r_cap})"
        )
    log_prod = float(np.sum(np.log(terms)))
    exponent = 0.5 * (r_star - N)
    log_bound = log_c1 + exponent * math.log(sigma2) - 0.5 * log_prod
    return AngleBound(
        bound=math.exp(log_bound),
        c1=math.exp(log_c1),
        t1=t1,
        t2=t2,
        r_cap=r_cap,
        r_star=r_star,
        exponent=exponent,
        angle_product=math.exp(log_prod),
    )


@dataclass(frozen=True, eq=False)
class BoundReport:
    """Analytic bounds of an ensemble over an SNR grid.

    Arrays indexed ``[pair, snr]`` follow ``pairs`` (``i < j``).  Angle-bound
    entries are NaN for pairs where that bound is undefined; ``angle_reason``
    then says why.
    """

    snr_db: np.ndarray
    pairs: tuple
    pairwise_bound: np.ndarray
    union_bound: np.ndarray
    angle_bound: np.ndarray
    c1: np.ndarray
    t1: tuple
    t2: tuple
    angle_reason: tuple


def bound_report(ens, snr_db, plus_root=False, exact_prefactor=False):
    snr_db = np.atleast_1d(np.asarray(snr_db, dtype=float))
    sig = snr_db_to_sigma2(snr_db)
    pairs = tuple((i, j) for i in range(len(ens)) for j in range(i + 1, len(ens)))
    pw = np.array([[pairwise_ks_bound(ens[i], ens[j], s) for s in sig] for i, j in pairs]).reshape(len(pairs), len(sig))
    union = np.array([union_bound_pe(ens, s) for s in sig])
    ang = np.full(pw.shape, np.nan)
    c1 = np.full(len(pairs), np.nan)
    t1, t2, reason = [], [], []
    for p, (i, j) in enumerate(pairs):
        try:
            for k, s in enumerate(sig):
                ab = high_snr_angle_bound(ens[i], ens[j], s, plus_root=plus_root, exact_prefactor=exact_prefactor)
                ang[p, k] = ab.bound
            c1[p] = ab.c1
            t1.append(ab.t1)
            t2.append(ab.t2)
            reason.append(None)
        except DegenerateAngles as e:
            ang[p] = np.nan
            t1.append(None)
            t2.append(None)
            reason.append(str(e))
    return BoundReport(snr_db, pairs, pw, union, ang, c1, tuple(t1), tuple(t2), tuple(reason))


@dataclass(frozen=True)
class CapacityParams:
    """Dimension ratios ``m_i ~ kappa_i m`` and ``n_i ~ nu_i m`` plus noise power."""

    kappa1: float
    kappa2: float
    nu1: float
    nu2: float
    sigma2: float

    def __post_init__(self):
        for k, v in (("1", (self.kappa1, self.nu1)), ("2", (self.kappa2, self.nu2))):
            kappa, nu = v
            if not (0.0 < nu <= kappa <= 1.0):
                raise InvalidRatio(f"need 0 < nu{k} <= kappa{k} <= 1, got nu{k}={nu}, kappa{k}={kappa}")
        if not 0.0 < self.sigma2 < 1.0:
            raise InvalidRatio(f"need 0 < sigma2 < 1, got {self.sigma2}")


@dataclass(frozen=True)
class CapacityBounds:
    """Capacity bounds without their O(1) terms."""

    upper: float
    lower: float
    prelog_upper: float
    prelog_lower: float


def capacity_prelogs(p):
    k1, k2, v1, v2 = p.kappa1, p.kappa2, p.nu1, p.nu2
    upper = min(v1, v2) * (k1 - v1 + k2 - v2) / (2 * k1 * k2)
    lower = (v1 * v2 - pos(2 * v1 - k1) * pos(2 * v2 - k2)) / (2 * k1 * k2)
    return upper, lower


def capacity_bounds(p):
    """Upper and lower capacity bounds; the prelogs multiply ``log2(1/sigma2)``."""
    pu, pl = capacity_prelogs(p)
    scale = math.log2(1.0 / p.sigma2)
    return CapacityBounds(pu * scale, pl * scale, pu, pl)


def achievable_rate_margin(dims, lambda_threshold, sigma2, form="derived"):
    """Largest classification rate certified by the union/Bhattacharyya argument.

    ``form="derived"`` returns
    ``d_ks / (2 m1 m2) * log2(1 + lambda / sigma2) - (n1 n2 - 2) / (2 m1 m2)``,
    which is what requiring the log-error bound to go negative gives;
    ``lambda`` lower-bounds the smallest retained eigenvalue of the pair
    covariance sum.  ``form="flipped"`` flips both signs,
    ``(n1 n2 - 2) / (2 m1 m2) - d_ks / (2 m1 m2) * log2(1 + lambda / sigma2)``.
    """
    if lambda_threshold <= 0 or sigma2 <= 0:
        raise ValueError("lambda_threshold and sigma2 must be positive")
    M = dims.m1 * dims.m2
    d = diversity_order(dims).d_ks
    gain = d / (2 * M) * math.log2(1.0 + lambda_threshold / sigma2)
    offset = (dims.N - 2) / (2 * M)
    if form == "derived":
        return gain - offset
    if form == "flipped":
        return offset - gain
    raise ValueError(f"unknown form {form!r}")
