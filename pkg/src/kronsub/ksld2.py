"""K-SLD2: discriminative learning of per-class Kronecker dictionary pairs.

Each class ``i`` owns a pair ``(A_i, B_i)``.  A training signal ``Y`` of class
``i`` is coded over every pair, ``Y ~ sum_l A_l X^l B_l^T``, and the learner
minimises, summed over all training signals,

    ||Y - sum_l A_l X^l B_l^T||^2 + ||Y - A_i X^i B_i^T||^2 + mu sum_{l != i} ||A_l X^l B_l^T||^2

by exact block coordinate descent.  A test signal is coded jointly over all
pairs and assigned to the class whose own pair reconstructs it best.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .dataio import dumps_dicts, load_dict_file
from .errors import DimensionMismatch, EmptyClass, ObjectiveIncrease, SingularGram, ZeroSignal
from .model import Dims, KSClass, RngStream, sample_ensemble

#: Relative slack allowed when checking that an update did not raise the objective.
MONOTONE_SLACK = 1e-9


@dataclass(frozen=True)
class KSLD2Config:
    n1: int
    n2: int
    mu: float = 0.9
    max_iters: int = 200
    rel_tol: float = 1e-6
    ridge: float = 1e-8
    init_seed: int = 0
    debug: bool = False

    def __post_init__(self):
        if self.n1 < 1 or self.n2 < 1:
            raise ValueError("n1 and n2 must be >= 1")
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")


@dataclass(frozen=True, eq=False)
class LearnedModel:
    dicts: tuple
    mu: float
    history: tuple = ()
    config: KSLD2Config = None

    def __post_init__(self):
        dicts = tuple(self.dicts)
        if not dicts:
            raise ValueError("a model needs at least one dictionary pair")
        for d in dicts[1:]:
            if d.shape != dicts[0].shape:
                raise DimensionMismatch(f"dictionary shapes differ: {dicts[0].shape} vs {d.shape}")
        object.__setattr__(self, "dicts", dicts)
        object.__setattr__(self, "history", tuple(float(h) for h in self.history))

    @property
    def L(self):
        return len(self.dicts)

    @property
    def shape(self):
        return self.dicts[0].shape

    @property
    def ridge(self):
        return self.config.ridge if self.config is not None else 0.0

    def n_params(self):
        """Stored dictionary entries, ``L (m1 n1 + m2 n2)``."""
        return sum(d.A.size + d.B.size for d in self.dicts)

    def to_text(self, comments=()):
        meta = {
            "kind": "ksld2",
            "mu": self.mu,
            "history": list(self.history),
            "config": dataclasses.asdict(self.config) if self.config is not None else None,
        }
        return dumps_dicts(self.dicts, meta, comments)

    def save(self, path, comments=()):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_text(comments))

    @classmethod
    def load(cls, path):
        dicts, meta = load_dict_file(path)
        cfg = meta.get("config")
        return cls(
            dicts,
            float(meta.get("mu", 0.0)),
            meta.get("history", ()),
            KSLD2Config(**cfg) if cfg else None,
        )


def _unpack(dicts):
    As = [np.asarray(d.A, dtype=float) for d in dicts]
    Bs = [np.asarray(d.B, dtype=float) for d in dicts]
    return As, Bs


def _reconstructions(As, Bs, X):
    # (S, L, m1, m2): A_l X^l B_l^T for every signal and class
    return np.stack([A @ X[:, l] @ B.T for l, (A, B) in enumerate(zip(As, Bs))], axis=1)


def _objective(Y, labels, P, mu):
    S = Y.shape[0]
    rows = np.arange(S)
    full = np.sum((Y - P.sum(axis=1)) ** 2)
    own = np.sum((Y - P[rows, labels]) ** 2)
    energy = np.sum(P**2, axis=(2, 3))
    cross = energy.sum() - energy[rows, labels].sum()
    return float(full + own + mu * cross)


def objective(data, dicts, coeffs, mu):
    """Training objective for coefficients ``coeffs`` of shape (S, L, n1, n2)."""
    As, Bs = _unpack(dicts)
    X = np.asarray(coeffs, dtype=float)
    S = len(data)
    L = len(As)
    if X.ndim != 4 or X.shape[:2] != (S, L):
        raise DimensionMismatch(f"coefficients must have shape ({S}, {L}, n1, n2), got {X.shape}")
    m1, m2 = data.dims
    for l, (A, B) in enumerate(zip(As, Bs)):
        if A.shape != (m1, X.shape[2]) or B.shape != (m2, X.shape[3]):
            raise DimensionMismatch(f"class {l} dictionaries do not conform to signals {data.dims} and blocks {X.shape[2:]}")
    if S == 0:
        return 0.0
    return _objective(data.signals, data.labels, _reconstructions(As, Bs, X), mu)


def _ridged_cho(G, ridge, what):
    n = G.shape[0]
    if ridge > 0:
        G = G + (ridge * np.trace(G) / n) * np.eye(n)
    try:
        return linalg.cho_factor(G, check_finite=True)
    except (linalg.LinAlgError, ValueError):
        raise SingularGram(f"{what} Gram matrix is singular") from None


def _solve_right(num, G, ridge, what):
    # num @ inv(G + ridge) for symmetric G
    return linalg.cho_solve(_ridged_cho(G, ridge, what), num.T).T


def _stacked_gram(As, Bs):
    blocks = [[np.kron(Bi.T @ Bj, Ai.T @ Aj) for Aj, Bj in zip(As, Bs)] for Ai, Bi in zip(As, Bs)]
    return np.block(blocks)


def _vec_stack(M):
    # column-major vec of each matrix in a stack (S, p, q) -> (S, p*q)
    return M.transpose(0, 2, 1).reshape(M.shape[0], -1)


def _duplicate_groups(As, Bs):
    # classes whose dictionary pairs are bit-identical share one group
    reps, group_of = [], []
    for A, B in zip(As, Bs):
        for g, r in enumerate(reps):
            if np.array_equal(As[r], A) and np.array_equal(Bs[r], B):
                group_of.append(g)
                break
        else:
            group_of.append(len(reps))
            reps.append(len(group_of) - 1)
    return reps, np.array(group_of)


def infer_coefficients(Y, dicts, ridge=0.0):
    """Joint least-squares code of ``Y`` over all dictionary pairs.

    Solves the normal equations of the stacked dictionary
    ``[B_1 kron A_1, ..., B_L kron A_L]``; the Gram blocks are
    ``(B_l^T B_k) kron (A_l^T A_k)`` so the stacked matrix is never formed.
    ``ridge`` is relative to the mean diagonal of the Gram matrix.

    Classes with bit-identical pairs receive equal shares of their group's
    code, which is the exact ridge solution, so their reconstructions tie
    exactly.

    ``Y`` of shape (m1, m2) gives blocks of shape (L, n1, n2); a stack
    (S, m1, m2) gives (S, L, n1, n2).
    """
    As, Bs = _unpack(dicts)
    Y = np.asarray(Y, dtype=float)
    single = Y.ndim == 2
    Ys = Y[None] if single else Y
    m1, m2, n1, n2 = As[0].shape[0], Bs[0].shape[0], As[0].shape[1], Bs[0].shape[1]
    if Ys.ndim != 3 or Ys.shape[1:] != (m1, m2):
        raise DimensionMismatch(f"signals must be {m1}x{m2}, got {Y.shape}")
    S, L, N = Ys.shape[0], len(As), n1 * n2
    reps, group_of = _duplicate_groups(As, Bs)
    if len(reps) < L and ridge == 0:
        raise SingularGram("stacked dictionary Gram matrix is singular (repeated dictionary pairs)")
    Ar, Br = [As[r] for r in reps], [Bs[r] for r in reps]
    G = _stacked_gram(Ar, Br)
    sizes = np.bincount(group_of)
    if ridge > 0:
        # ridge scale of the full stacked Gram, spread over each group's members
        lam = ridge * sum(np.trace(As[l].T @ As[l]) * np.trace(Bs[l].T @ Bs[l]) for l in range(L)) / (L * N)
        G = G + np.diag(np.repeat(lam / sizes, N))
    rhs = np.concatenate([_vec_stack(A.T @ Ys @ B) for A, B in zip(Ar, Br)], axis=1)
    z = linalg.cho_solve(_ridged_cho(G, 0.0, "stacked dictionary"), rhs.T).T
    Z = z.reshape(S, len(reps), n2, n1).transpose(0, 1, 3, 2)
    X = Z[:, group_of] / sizes[group_of][None, :, None, None]
    return X[0] if single else X


def initialize(data, config):
    """Starting point of :func:`fit`: prior draws with orthonormalised columns,
    coefficients from :func:`infer_coefficients`."""
    m1, m2 = data.dims
    if config.n1 > m1 or config.n2 > m2:
        raise DimensionMismatch(f"need n1 <= m1 and n2 <= m2, got ({config.n1}, {config.n2}) for {data.dims}")
    ens = sample_ensemble(Dims(m1, m2, config.n1, config.n2, data.L), RngStream(config.init_seed))
    As = [np.linalg.qr(c.A)[0] for c in ens]
    Bs = [np.linalg.qr(c.B)[0] for c in ens]
    X = infer_coefficients(data.signals, [KSClass(A, B) for A, B in zip(As, Bs)], config.ridge)
    return As, Bs, X


class _Sweeper:
    """Mutable state of one fit; every method is an exact block minimisation."""

    def __init__(self, data, config, As, Bs, X):
        self.Y = data.signals
        self.labels = data.labels
        self.mu = float(config.mu)
        self.ridge = config.ridge
        self.debug = config.debug
        self.As, self.Bs, self.X = As, Bs, X
        self.P = _reconstructions(As, Bs, X)
        self.total = self.P.sum(axis=1)
        self.value = self.objective()

    def objective(self):
        return _objective(self.Y, self.labels, self.P, self.mu)

    def _refresh(self, l, sel=slice(None)):
        new = self.As[l] @ self.X[sel, l] @ self.Bs[l].T
        self.total[sel] += new - self.P[sel, l]
        self.P[sel, l] = new

    def _check(self, what):
        if not self.debug:
            return
        new = self.objective()
        if new > self.value + MONOTONE_SLACK * max(abs(self.value), 1e-300):
            raise ObjectiveIncrease(f"{what} update raised the objective from {self.value!r} to {new!r}")
        self.value = new

    def _targets(self, l):
        # residual of the full code with block l removed, plus per-signal weights
        own = self.labels == l
        R = self.Y - (self.total - self.P[:, l])
        T = R + own[:, None, None] * self.Y
        c = np.where(own, 2.0, 1.0 + self.mu)
        return T, c

    def update_A(self, l):
        T, c = self._targets(l)
        W = self.X[:, l] @ self.Bs[l].T
        num = np.einsum("sij,skj->ik", T, W)
        G = np.einsum("s,sij,skj->ik", c, W, W)
        self.As[l] = _solve_right(num, G, self.ridge, f"A_{l}")
        self._refresh(l)
        self._check(f"A_{l}")

    def update_B(self, l):
        T, c = self._targets(l)
        Pm = self.As[l] @ self.X[:, l]
        num = np.einsum("sij,sik->jk", T, Pm)
        G = np.einsum("s,sij,sik->jk", c, Pm, Pm)
        self.Bs[l] = _solve_right(num, G, self.ridge, f"B_{l}")
        self._refresh(l)
        self._check(f"B_{l}")

    def update_X(self, l, sel, in_class):
        A, B = self.As[l], self.Bs[l]
        R = self.Y[sel] - (self.total[sel] - self.P[sel, l])
        T = 0.5 * (R + self.Y[sel]) if in_class else R / (1.0 + self.mu)
        left = linalg.cho_solve(_ridged_cho(A.T @ A, self.ridge, f"A_{l}^T A_{l}"), np.eye(A.shape[1]))
        right = linalg.cho_solve(_ridged_cho(B.T @ B, self.ridge, f"B_{l}^T B_{l}"), np.eye(B.shape[1]))
        self.X[sel, l] = left @ A.T @ T @ B @ right
        self._refresh(l, sel)
        self._check(f"X^{l} ({'in' if in_class else 'out-of'}-class)")

    def sweep(self):
        L = len(self.As)
        for l in range(L):
            self.update_A(l)
        for l in range(L):
            self.update_B(l)
        for l in range(L):
            self.update_X(l, self.labels == l, True)
        for l in range(L):
            sel = self.labels != l
            if np.any(sel):
                self.update_X(l, sel, False)
        self.value = self.objective()
        return self.value


def fit(data, config):
    """Learn one dictionary pair per class by alternating exact block updates.

    A sweep updates every ``A_l``, then every ``B_l``, then the in-class code
    blocks, then the out-of-class ones.  ``history[0]`` is the objective at
    the initialisation and each further entry follows one sweep; iteration
    stops when the relative change drops below ``config.rel_tol``.
    """
    counts = np.bincount(data.labels, minlength=data.L)
    if np.any(counts == 0):
        raise EmptyClass(f"class {int(np.argmin(counts))} has no training signals")
    As, Bs, X = initialize(data, config)
    state = _Sweeper(data, config, As, Bs, X)
    history = [state.value]
    for _ in range(config.max_iters):
        prev = history[-1]
        cur = state.sweep()
        history.append(cur)
        if abs(prev - cur) <= config.rel_tol * abs(prev):
            break
    dicts = tuple(KSClass(A, B) for A, B in zip(state.As, state.Bs))
    return LearnedModel(dicts, float(config.mu), history, config)


def class_errors(Y, model):
    """Per-class reconstruction errors ``||Y - A_i X^i B_i^T||^2`` under the joint code.

    Returns an array (L,) for one signal or (S, L) for a stack.
    """
    X = infer_coefficients(Y, model.dicts, model.ridge)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 2:
        return np.array([np.sum((Y - d.A @ X[l] @ d.B.T) ** 2) for l, d in enumerate(model.dicts)])
    return np.stack([np.sum((Y - d.A @ X[:, l] @ d.B.T) ** 2, axis=(1, 2)) for l, d in enumerate(model.dicts)], axis=1)


def _argmin_low(err, rtol=1e-12):
    # errors equal up to rounding count as a tie, which goes to the lowest index
    best = err.min(axis=-1, keepdims=True)
    return np.argmax(err <= best + rtol * np.abs(best), axis=-1)


def classify_by_reconstruction(Y, model):
    """``(label, errors)`` for one signal of shape (m1, m2)."""
    err = class_errors(Y, model)
    return int(_argmin_low(err)), err


def classify_batch(Ys, model):
    """Labels (S,) and errors (S, L) for a stack of signals."""
    err = class_errors(Ys, model)
    return _argmin_low(err), err


def reconstruct(Y, model, label=None):
    """Reconstruction of ``Y`` by one class pair under the joint code; the
    predicted class when ``label`` is None."""
    X = infer_coefficients(Y, model.dicts, model.ridge)
    if label is None:
        label = int(_argmin_low(np.array([np.sum((Y - d.A @ X[l] @ d.B.T) ** 2) for l, d in enumerate(model.dicts)])))
    d = model.dicts[label]
    return d.A @ X[label] @ d.B.T


def nre(Y, Yhat):
    """Normalised reconstruction error ``||Y - Yhat||^2 / ||Y||^2``."""
    Y = np.asarray(Y, dtype=float)
    Yhat = np.asarray(Yhat, dtype=float)
    if Y.shape != Yhat.shape:
        raise DimensionMismatch(f"shapes differ: {Y.shape} vs {Yhat.shape}")
    denom = float(np.sum(Y**2))
    if denom == 0:
        raise ZeroSignal("reference signal is zero")
    return float(np.sum((Y - Yhat) ** 2)) / denom
