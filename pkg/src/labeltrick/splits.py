"""Label matrices and the random input/output partitions of the training set."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ._rng import make_rng
from .errors import EnumerationTooLarge

MAX_ENUMERATION = 20


@dataclass(frozen=True, eq=False)
class LabelMatrix:
    """Node labels ``Y`` (n x c) and the training index set.

    Rows outside ``train_idx`` are kept for evaluation but never reach a
    predictor; ``y_tr`` zeroes them.
    """

    Y: np.ndarray
    train_idx: np.ndarray
    kind: str = "one_hot"

    def __post_init__(self):
        y = np.array(self.Y, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        idx = np.asarray(self.train_idx, dtype=np.int64).ravel()
        if len(np.unique(idx)) != len(idx):
            raise ValueError("duplicate training index")
        if len(idx) and (idx.min() < 0 or idx.max() >= y.shape[0]):
            raise ValueError("training index out of range")
        if self.kind not in ("one_hot", "real"):
            raise ValueError(f"unknown label kind {self.kind!r}")
        if self.kind == "one_hot" and len(idx):
            rows = y[idx]
            if not (np.all((rows == 0) | (rows == 1)) and np.all(rows.sum(axis=1) == 1)):
                raise ValueError("one-hot labels must have exactly one 1 per training row")
        idx = np.sort(idx)
        y.setflags(write=False)
        idx.setflags(write=False)
        object.__setattr__(self, "Y", y)
        object.__setattr__(self, "train_idx", idx)

    @classmethod
    def from_classes(cls, classes, train_idx, num_classes: Optional[int] = None) -> "LabelMatrix":
        classes = np.asarray(classes, dtype=np.int64)
        c = int(num_classes if num_classes is not None else classes.max() + 1)
        y = np.zeros((len(classes), c))
        y[np.arange(len(classes)), classes] = 1.0
        return cls(y, train_idx, "one_hot")

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def c(self) -> int:
        return self.Y.shape[1]

    @property
    def m(self) -> int:
        return len(self.train_idx)

    @property
    def train_mask(self) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        mask[self.train_idx] = True
        return mask

    @property
    def y_tr(self) -> np.ndarray:
        out = np.zeros_like(self.Y)
        out[self.train_idx] = self.Y[self.train_idx]
        return out

    def classes(self) -> np.ndarray:
        return np.argmax(self.Y, axis=1)

    def with_train(self, train_idx) -> "LabelMatrix":
        return LabelMatrix(self.Y, train_idx, self.kind)


@dataclass(frozen=True, eq=False)
class SplitMask:
    """One partition of the training nodes into ``D_in`` and ``D_out``.

    ``weight`` is the probability of the split under exact enumeration,
    ``1/m`` for the one-versus-all family, and 1 for a single sample.
    ``alpha`` is ``None`` for splits not drawn from the Bernoulli law.
    """

    in_mask: np.ndarray
    out_mask: np.ndarray
    alpha: Optional[float] = None
    weight: float = 1.0

    def __post_init__(self):
        a = np.asarray(self.in_mask, dtype=bool)
        b = np.asarray(self.out_mask, dtype=bool)
        if a.shape != b.shape:
            raise ValueError("in/out masks differ in length")
        if np.any(a & b):
            raise ValueError("a node cannot be both input and output")
        if not 0.0 < self.weight <= 1.0:
            raise ValueError("split weight must lie in (0, 1]")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "in_mask", a)
        object.__setattr__(self, "out_mask", b)

    def check(self, labels: LabelMatrix) -> None:
        if len(self.in_mask) != labels.n:
            raise ValueError("split does not match the label matrix size")
        if not np.array_equal(self.in_mask | self.out_mask, labels.train_mask):
            raise ValueError("split must partition exactly the training nodes")


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


def split_from_inputs(labels: LabelMatrix, in_train, alpha=None, weight: float = 1.0) -> SplitMask:
    """Build a mask from a boolean vector over the training nodes (in ``train_idx`` order)."""
    in_train = np.asarray(in_train, dtype=bool)
    in_mask = np.zeros(labels.n, dtype=bool)
    out_mask = np.zeros(labels.n, dtype=bool)
    in_mask[labels.train_idx[in_train]] = True
    out_mask[labels.train_idx[~in_train]] = True
    return SplitMask(in_mask, out_mask, alpha, weight)


def full_input_split(labels: LabelMatrix) -> SplitMask:
    """All training labels as inputs; the split used at inference time."""
    return split_from_inputs(labels, np.ones(labels.m, dtype=bool))


def sample_inputs(m: int, alpha: float, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """Bernoulli(alpha) input indicators over ``m`` training nodes."""
    shape = (m,) if size is None else (size, m)
    return rng.random(shape) < alpha


def sample_split(labels: LabelMatrix, alpha: float, seed: Union[int, np.random.Generator]) -> SplitMask:
    """Put each training node in ``D_in`` independently with probability alpha."""
    alpha = _check_alpha(alpha)
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    return split_from_inputs(labels, sample_inputs(labels.m, alpha, rng), alpha)


def one_vs_all_splits(labels: LabelMatrix) -> list[SplitMask]:
    """The ``m`` splits with a single output node each."""
    m = labels.m
    if m == 0:
        raise ValueError("empty training set")
    out = []
    for i in range(m):
        in_train = np.ones(m, dtype=bool)
        in_train[i] = False
        out.append(split_from_inputs(labels, in_train, None, 1.0 / m))
    return out


def split_table(m: int, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """All ``2^m`` input patterns (rows, over training positions) and their probabilities."""
    alpha = _check_alpha(alpha)
    if m > MAX_ENUMERATION:
        raise EnumerationTooLarge(
            f"exact enumeration over m={m} training nodes (> {MAX_ENUMERATION}); use Monte Carlo")
    codes = np.arange(2 ** m, dtype=np.int64)
    bits = ((codes[:, None] >> np.arange(m)) & 1).astype(bool)
    k = bits.sum(axis=1)
    weights = alpha ** k * (1.0 - alpha) ** (m - k)
    return bits, weights


def enumerate_splits(labels: LabelMatrix, alpha: float) -> list[SplitMask]:
    """Every subset of the training set as ``D_in``, weighted by its probability."""
    bits, weights = split_table(labels.m, alpha)
    return [split_from_inputs(labels, b, alpha, w) for b, w in zip(bits, weights)]


def masked_labels(labels: LabelMatrix, mask: SplitMask, rescale: bool = False) -> np.ndarray:
    """``Y_in``: labels of ``D_in`` with every other row zero; divided by alpha if ``rescale``."""
    y_in = np.where(mask.in_mask[:, None], labels.Y, 0.0)
    if rescale:
        if mask.alpha is None:
            raise ValueError("rescaling needs a split drawn with a known alpha")
        y_in = y_in / mask.alpha
    return y_in


def write_split_file(path, labels: LabelMatrix, mask: SplitMask) -> None:
    """One line per training node: ``node_id<TAB>in`` or ``node_id<TAB>out``."""
    mask.check(labels)
    lines = [f"{i}\t{'in' if mask.in_mask[i] else 'out'}\n" for i in labels.train_idx]
    Path(path).write_text("".join(lines), encoding="utf-8", newline="\n")


def read_split_file(path, labels: LabelMatrix, alpha: Optional[float] = None) -> SplitMask:
    in_mask = np.zeros(labels.n, dtype=bool)
    out_mask = np.zeros(labels.n, dtype=bool)
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or parts[1].strip() not in ("in", "out"):
            raise ValueError(f"{path}:{lineno}: expected 'node_id<TAB>in|out'")
        try:
            node = int(parts[0])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: bad node id {parts[0]!r}") from None
        if not 0 <= node < labels.n:
            raise ValueError(f"{path}:{lineno}: node id {node} out of range")
        (in_mask if parts[1].strip() == "in" else out_mask)[node] = True
    mask = SplitMask(in_mask, out_mask, alpha)
    mask.check(labels)
    return mask
