"""Labelled 2-D datasets, the ``kst`` text format and synthetic generation.

``kst`` v1 layout::

    kst 1 K m1 m2 L
    <K integer labels>
    <blank>
    <block 0: m1 lines of m2 floats>
    <blank>
    <block 1> ...

Floats are written with 17 significant digits, so a save/load round trip is
exact.  Lines starting with ``#`` before the header are comments (the CLI
stores its run manifest there).
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, ShapeMismatch
from .model import KSClass, sample_signals

MAGIC = "kst"
VERSION = 1


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    signals: np.ndarray
    labels: np.ndarray
    L: int

    def __post_init__(self):
        signals = np.asarray(self.signals, dtype=float)
        labels = np.asarray(self.labels, dtype=np.int64)
        if signals.ndim != 3:
            raise ShapeMismatch(f"signals must have shape (K, m1, m2), got {signals.shape}")
        if labels.shape != (signals.shape[0],):
            raise ShapeMismatch(f"{labels.shape[0] if labels.ndim else 0} labels for {signals.shape[0]} signals")
        if labels.size and (labels.min() < 0 or labels.max() >= self.L):
            raise ShapeMismatch(f"labels must lie in [0, {self.L})")
        object.__setattr__(self, "signals", signals)
        object.__setattr__(self, "labels", labels)

    @property
    def dims(self):
        return self.signals.shape[1:]

    def __len__(self):
        return self.signals.shape[0]

    def of_class(self, l):
        return self.signals[self.labels == l]

    def equals(self, other):
        return (
            self.L == other.L
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.signals, other.signals)
        )


def synth_dataset(ens, per_class, sigma2, rng):
    """``per_class`` signals from each class of ``ens``, class-major order.

    Class ``l`` uses substream ``rng.child(l)``.
    """
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    blocks, labels = [], []
    for l, cls in enumerate(ens):
        blocks.append(sample_signals(cls, sigma2, per_class, rng.child(l)))
        labels.extend([l] * per_class)
    return LabeledDataset(np.concatenate(blocks), np.array(labels), len(ens))


def format_block(M):
    return "\n".join(" ".join(f"{v:.17g}" for v in row) for row in M)


def dumps(data, comments=()):
    K = len(data)
    m1, m2 = data.dims
    lines = [f"# {c}" for c in comments]
    lines.append(f"{MAGIC} {VERSION} {K} {m1} {m2} {data.L}")
    lines.append(" ".join(str(int(l)) for l in data.labels))
    for Y in data.signals:
        lines.append("")
        lines.append(format_block(Y))
    return "\n".join(lines) + "\n"


def save_tensor_file(path, data, comments=()):
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps(data, comments))


class _Lines:
    """Line cursor that remembers 1-based line numbers for error messages."""

    def __init__(self, text):
        self.lines = text.splitlines()
        self.pos = 0

    def skip_comments(self):
        while self.pos < len(self.lines) and self.lines[self.pos].startswith("#"):
            self.pos += 1

    def comments(self):
        out = []
        for ln in self.lines:
            if not ln.startswith("#"):
                break
            out.append(ln[1:].strip())
        return out

    @property
    def lineno(self):
        return self.pos + 1

    def next(self, what):
        if self.pos >= len(self.lines):
            raise ParseError(f"unexpected end of file while reading {what}", self.lineno)
        ln = self.lines[self.pos]
        self.pos += 1
        return ln

    def blank(self, what):
        ln = self.next(what)
        if ln.strip():
            raise ParseError(f"expected blank line before {what}", self.lineno - 1)

    def at_end(self):
        return all(not ln.strip() for ln in self.lines[self.pos:])


def _int(tok, cursor, what):
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"{what}: {tok!r} is not an integer", cursor.lineno - 1) from None


def read_block(cursor, rows, cols, what):
    out = np.empty((rows, cols))
    for r in range(rows):
        ln = cursor.next(what)
        toks = ln.split()
        if len(toks) != cols:
            raise ParseError(f"{what}: expected {cols} values, found {len(toks)}", cursor.lineno - 1)
        try:
            out[r] = [float(t) for t in toks]
        except ValueError:
            raise ParseError(f"{what}: malformed number", cursor.lineno - 1) from None
        if not np.all(np.isfinite(out[r])):
            raise ParseError(f"{what}: non-finite value", cursor.lineno - 1)
    return out


def loads(text):
    cur = _Lines(text)
    cur.skip_comments()
    toks = cur.next("header").split()
    if len(toks) != 6 or toks[0] != MAGIC:
        raise ParseError("header must read 'kst 1 K m1 m2 L'", cur.lineno - 1)
    version, K, m1, m2, L = (_int(t, cur, "header") for t in toks[1:])
    if version != VERSION:
        raise ParseError(f"unsupported kst version {version}", cur.lineno - 1)
    if min(m1, m2, L) < 1 or K < 0:
        raise ParseError("header dimensions must be positive", cur.lineno - 1)
    labels = [_int(t, cur, "labels") for t in cur.next("labels").split()]
    if len(labels) != K:
        raise ShapeMismatch(f"header declares K={K} signals but {len(labels)} labels are given")
    signals = np.empty((K, m1, m2))
    for k in range(K):
        what = f"block {k}"
        cur.blank(what)
        signals[k] = read_block(cur, m1, m2, what)
    if not cur.at_end():
        raise ShapeMismatch(f"file body holds more data than K*m1*m2 = {K * m1 * m2} values")
    return LabeledDataset(signals, np.array(labels, dtype=np.int64), L)


def load_tensor_file(path):
    with open(path, encoding="utf-8") as f:
        return loads(f.read())


def read_comments(path):
    with open(path, encoding="utf-8") as f:
        return _Lines(f.read()).comments()


DICT_MAGIC = "ksdict"


def dumps_dicts(classes, meta=None, comments=()):
    """Serialise dictionary pairs: header, one JSON ``meta`` line, then A_0, B_0, A_1, ... blocks."""
    classes = list(classes)
    m1, m2, n1, n2 = classes[0].shape
    lines = [f"# {c}" for c in comments]
    lines.append(f"{DICT_MAGIC} {VERSION} {m1} {m2} {n1} {n2} {len(classes)}")
    lines.append("meta " + json.dumps(meta or {}, sort_keys=True, allow_nan=False))
    for c in classes:
        lines += ["", format_block(c.A), "", format_block(c.B)]
    return "\n".join(lines) + "\n"


def loads_dicts(text):
    """Inverse of :func:`dumps_dicts`; returns ``(classes, meta)``."""
    cur = _Lines(text)
    cur.skip_comments()
    toks = cur.next("header").split()
    if len(toks) != 7 or toks[0] != DICT_MAGIC:
        raise ParseError("header must read 'ksdict 1 m1 m2 n1 n2 L'", cur.lineno - 1)
    version, m1, m2, n1, n2, L = (_int(t, cur, "header") for t in toks[1:])
    if version != VERSION:
        raise ParseError(f"unsupported ksdict version {version}", cur.lineno - 1)
    if min(m1, m2, n1, n2, L) < 1:
        raise ParseError("header dimensions must be positive", cur.lineno - 1)
    ln = cur.next("meta")
    if not ln.startswith("meta "):
        raise ParseError("expected 'meta {...}' line", cur.lineno - 1)
    try:
        meta = json.loads(ln[5:])
    except json.JSONDecodeError as e:
        raise ParseError(f"meta is not valid JSON: {e.msg}", cur.lineno - 1) from None
    classes = []
    for l in range(L):
        cur.blank(f"A_{l}")
        A = read_block(cur, m1, n1, f"A_{l}")
        cur.blank(f"B_{l}")
        B = read_block(cur, m2, n2, f"B_{l}")
        classes.append(KSClass(A, B))
    if not cur.at_end():
        raise ShapeMismatch(f"file body holds more than the {L} declared dictionary pairs")
    return classes, meta


def save_dict_file(path, classes, meta=None, comments=()):
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_dicts(classes, meta, comments))


def load_dict_file(path):
    with open(path, encoding="utf-8") as f:
        return loads_dicts(f.read())
