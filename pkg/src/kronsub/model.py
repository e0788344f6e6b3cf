"""Kronecker-structured generative model.

A signal of class ``l`` is ``Y = A_l X B_l^T + Z`` with ``X`` and ``Z``
i.i.d. Gaussian, so ``vec(Y) ~ N(0, (B_l kron A_l)(B_l kron A_l)^T + sigma2 I)``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch
from .tensorlin import kron


@dataclass(frozen=True)
class Dims:
    m1: int
    m2: int
    n1: int
    n2: int
    L: int = 2

    def __post_init__(self):
        for name in ("m1", "m2", "n1", "n2", "L"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise TypeError(f"{name} must be an integer, got {v!r}")
        if not 1 <= self.n1 <= self.m1:
            raise ValueError(f"need 1 <= n1 <= m1, got n1={self.n1}, m1={self.m1}")
        if not 1 <= self.n2 <= self.m2:
            raise ValueError(f"need 1 <= n2 <= m2, got n2={self.n2}, m2={self.m2}")
        if self.L < 1:
            raise ValueError(f"need L >= 1, got {self.L}")

    @property
    def M(self):
        return self.m1 * self.m2

    @property
    def N(self):
        return self.n1 * self.n2


@dataclass(frozen=True, eq=False)
class KSClass:
    """Dictionary pair of one class: ``A`` (m1 x n1) for columns, ``B`` (m2 x n2) for rows."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        B = np.array(self.B, dtype=float)
        if A.ndim != 2 or B.ndim != 2:
            raise DimensionMismatch("A and B must be 2-D")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ValueError("dictionary entries must be finite")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def shape(self):
        """``(m1, m2, n1, n2)``."""
        return (self.A.shape[0], self.B.shape[0], self.A.shape[1], self.B.shape[1])

    def basis(self):
        """Explicit ``kron(B, A)``; only meant for small problems and oracles."""
        return kron(self.B, self.A)


@dataclass(frozen=True, eq=False)
class KSEnsemble:
    dims: Dims
    classes: tuple

    def __post_init__(self):
        classes = tuple(self.classes)
        d = self.dims
        for i, c in enumerate(classes):
            if c.shape != (d.m1, d.m2, d.n1, d.n2):
                raise DimensionMismatch(f"class {i} has shape {c.shape}, expected {(d.m1, d.m2, d.n1, d.n2)}")
        if len(classes) != d.L:
            raise DimensionMismatch(f"expected {d.L} classes, got {len(classes)}")
        object.__setattr__(self, "classes", classes)

    @classmethod
    def from_classes(cls, classes):
        classes = tuple(classes)
        m1, m2, n1, n2 = classes[0].shape
        return cls(Dims(m1, m2, n1, n2, len(classes)), classes)

    def __len__(self):
        return len(self.classes)

    def __getitem__(self, i):
        return self.classes[i]

    def __iter__(self):
        return iter(self.classes)


def _as_key(index):
    if isinstance(index, (tuple, list)):
        return tuple(int(i) for i in index)
    return (int(index),)


@dataclass(frozen=True)
class RngStream:
    """Addressable random stream.

    ``(seed, stream_index)`` maps to a ``numpy`` ``SeedSequence`` whose spawn
    key is the index, so every stream is reproducible on its own and distinct
    indices are independent.  ``stream_index`` may be an integer or a tuple of
    integers; :meth:`child` extends the tuple.
    """

    seed: int
    stream_index: object = 0
    _key: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.seed) < 0:
            raise ValueError("seed must be nonnegative")
        object.__setattr__(self, "_key", _as_key(self.stream_index))

    def child(self, *index):
        return RngStream(self.seed, self._key + tuple(int(i) for i in index))

    def generator(self):
        ss = np.random.SeedSequence(int(self.seed), spawn_key=self._key)
        return np.random.Generator(np.random.PCG64(ss))


def sample_ensemble(dims, rng):
    """Draw ``L`` dictionary pairs from the Gaussian prior.

    Entries of ``A`` are ``N(0, 1/n1)`` and entries of ``B`` are ``N(0, 1/n2)``.
    Class ``l`` is drawn from substream ``rng.child(l)``.
    """
    classes = []
    for l in range(dims.L):
        g = rng.child(l).generator()
        A = g.normal(0.0, np.sqrt(1.0 / dims.n1), size=(dims.m1, dims.n1))
        B = g.normal(0.0, np.sqrt(1.0 / dims.n2), size=(dims.m2, dims.n2))
        classes.append(KSClass(A, B))
    return KSEnsemble(dims, tuple(classes))


def sample_signals(cls, sigma2, count, rng):
    """Draw ``count`` signals ``A X B^T + Z`` as an array of shape (count, m1, m2)."""
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    g = rng.generator() if isinstance(rng, RngStream) else rng
    m1, m2, n1, n2 = cls.shape
    X = g.standard_normal((count, n1, n2))
    Y = cls.A @ X @ cls.B.T
    if sigma2 > 0:
        Y += np.sqrt(sigma2) * g.standard_normal((count, m1, m2))
    return Y


def sample_signal(cls, sigma2, rng):
    """One signal ``Y = A X B^T + Z`` of shape (m1, m2)."""
    return sample_signals(cls, sigma2, 1, rng)[0]


def vec_batch(Y):
    """Column-major vectorisation of a stack (count, m1, m2) -> (count, m1*m2)."""
    Y = np.asarray(Y)
    return Y.transpose(0, 2, 1).reshape(Y.shape[0], -1)


@dataclass(frozen=True, eq=False)
class StructuredCovariance:
    """``Sigma = U diag(eigvals) U^T + sigma2 I`` with orthonormal ``U`` (M x N)."""

    U: np.ndarray
    eigvals: np.ndarray
    sigma2: float

    @property
    def M(self):
        return self.U.shape[0]

    def dense(self):
        return (self.U * self.eigvals) @ self.U.T + self.sigma2 * np.eye(self.M)

    def logdet(self):
        n = len(self.eigvals)
        return float(np.sum(np.log(self.eigvals + self.sigma2)) + (self.M - n) * np.log(self.sigma2))


def _factor_eig(F):
    # eigenpairs of F F^T restricted to range(F), via the thin SVD
    U, s, _ = np.linalg.svd(F, full_matrices=False)
    return U, s**2


def structured_covariance(cls, sigma2):
    """Eigen-factored class covariance.

    ``D D^T = (B B^T) kron (A A^T)`` so its eigenvectors are ``kron(U_B, U_A)``
    and its eigenvalues are ``kron(lambda_B, lambda_A)``; both are sorted so the
    eigenvalues descend.
    """
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    UA, lA = _factor_eig(cls.A)
    UB, lB = _factor_eig(cls.B)
    lam = np.kron(lB, lA)
    U = np.kron(UB, UA)
    order = np.argsort(-lam, kind="stable")
    return StructuredCovariance(U[:, order], lam[order], float(sigma2))


def snr_db_to_sigma2(snr_db):
    """Noise variance for an SNR in dB, with unit signal power: ``10**(-snr/10)``."""
    return 10.0 ** (-np.asarray(snr_db, dtype=float) / 10.0)


def sigma2_to_snr_db(sigma2):
    return 10.0 * np.log10(1.0 / np.asarray(sigma2, dtype=float))
