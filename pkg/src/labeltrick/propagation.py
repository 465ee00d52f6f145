"""Propagation operators ``P`` and the diagonal quantities built from them."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import DenseModeRequired, NumericalIntegrityError
from .graph import SparseMatrix, spmm

DEFAULT_LAMBDA = 0.6
DEFAULT_STEPS = 50
DEFAULT_DENSE_THRESHOLD = 4096
RADICAND_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PropagationOperator:
    """A propagation matrix together with ``C = diag(P)``.

    ``mode`` is ``closed_form``, ``truncated_series`` or ``explicit``.
    ``matrix`` is the dense ``P`` when it is materialized; a series operator
    above the dense threshold only keeps ``S`` and applies the recursion.
    ``diag_ptp`` is ``diag(P^T P)`` and is present only with ``matrix``.
    """

    mode: str
    n: int
    diag: np.ndarray
    lam: Optional[float] = None
    steps: Optional[int] = None
    matrix: Optional[np.ndarray] = None
    diag_ptp: Optional[np.ndarray] = None
    s: Optional[SparseMatrix] = None

    @property
    def C(self) -> np.ndarray:
        return self.diag

    @property
    def is_materialized(self) -> bool:
        return self.matrix is not None

    def dense(self) -> np.ndarray:
        if self.matrix is None:
            raise DenseModeRequired(
                f"{self.mode} operator with n={self.n} is not materialized; "
                "raise the dense threshold or use a smaller graph")
        return self.matrix

    def apply(self, m) -> np.ndarray:
        m = np.asarray(m, dtype=np.float64)
        if m.shape[0] != self.n:
            raise ValueError(f"dimension mismatch: operator is {self.n}x{self.n}, input has {m.shape[0]} rows")
        if self.mode == "truncated_series":
            return _series_apply(self.s, self.lam, self.steps, m)
        if isinstance(self.matrix, np.ndarray):
            return self.matrix @ m
        return spmm(self.s, m)

    def block(self, rows, cols) -> np.ndarray:
        """Return the dense sub-matrix ``P[rows][:, cols]``."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if self.matrix is not None:
            return self.matrix[np.ix_(rows, cols)]
        basis = np.zeros((self.n, len(cols)))
        basis[cols, np.arange(len(cols))] = 1.0
        return self.apply(basis)[rows]


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lambda must lie in (0, 1), got {lam}")
    return lam


def _series_apply(s: SparseMatrix, lam: float, k: int, m: np.ndarray) -> np.ndarray:
    # F0 = (1-lam) Y so that k steps give exactly (1-lam) sum_{i<=k} lam^i S^i Y
    base = (1.0 - lam) * m
    f = base
    for _ in range(k):
        f = lam * spmm(s, f) + base
    return f


def closed_form_operator(s: SparseMatrix, lam: float = DEFAULT_LAMBDA,
                         dense_threshold: int = DEFAULT_DENSE_THRESHOLD) -> PropagationOperator:
    """Dense ``P = (1 - lam) (I - lam S)^{-1}``."""
    lam = _check_lambda(lam)
    n = s.n_rows
    if s.n_cols != n:
        raise ValueError("S must be square")
    if n > dense_threshold:
        raise DenseModeRequired(
            f"n={n} exceeds the dense threshold {dense_threshold}; use series_operator instead")
    a = np.eye(n) - lam * s.to_dense()
    p = (1.0 - lam) * np.linalg.solve(a, np.eye(n))
    return PropagationOperator("closed_form", n, np.diag(p).copy(), lam=lam,
                               matrix=p, diag_ptp=np.einsum("ki,ki->i", p, p), s=s)


def series_operator(s: SparseMatrix, lam: float = DEFAULT_LAMBDA, k: int = DEFAULT_STEPS,
                    dense_threshold: int = DEFAULT_DENSE_THRESHOLD,
                    block_size: int = 256) -> PropagationOperator:
    """Truncated Neumann series ``(1 - lam) sum_{i=0}^{k} lam^i S^i``.

    ``C`` is exact for the truncated polynomial. At or below the dense
    threshold the polynomial is materialized; above it the diagonal is
    gathered by pushing blocks of basis vectors through the recursion.
    """
    lam = _check_lambda(lam)
    k = int(k)
    if k < 0:
        raise ValueError("k must be non-negative")
    n = s.n_rows
    if s.n_cols != n:
        raise ValueError("S must be square")
    if n <= dense_threshold:
        p = _series_apply(s, lam, k, np.eye(n))
        return PropagationOperator("truncated_series", n, np.diag(p).copy(), lam=lam, steps=k,
                                   matrix=p, diag_ptp=np.einsum("ki,ki->i", p, p), s=s)
    diag = np.empty(n)
    for start in range(0, n, block_size):
        cols = np.arange(start, min(start + block_size, n))
        basis = np.zeros((n, len(cols)))
        basis[cols, np.arange(len(cols))] = 1.0
        diag[cols] = _series_apply(s, lam, k, basis)[cols, np.arange(len(cols))]
    return PropagationOperator("truncated_series", n, diag, lam=lam, steps=k, s=s)


def explicit_operator(p: Union[np.ndarray, SparseMatrix]) -> PropagationOperator:
    """Use a user-supplied matrix (e.g. ``S`` itself) as ``P``."""
    if isinstance(p, SparseMatrix):
        if p.n_rows != p.n_cols:
            raise ValueError("P must be square")
        dense = p.to_dense()
        return PropagationOperator("explicit", p.n_rows, p.diagonal(), matrix=dense,
                                   diag_ptp=np.einsum("ki,ki->i", dense, dense), s=p)
    p = np.array(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ValueError("P must be square")
    return PropagationOperator("explicit", p.shape[0], np.diag(p).copy(), matrix=p,
                               diag_ptp=np.einsum("ki,ki->i", p, p))


def train_column_norms(op: PropagationOperator, train_idx) -> np.ndarray:
    """``sum_{k in train} P_ki^2`` for each training node ``i`` (i.e. ``diag(P^T M_tr P)``)."""
    blk = op.block(train_idx, train_idx)
    return np.einsum("ki,ki->i", blk, blk)


def gamma_matrix(op: PropagationOperator, labels, train_rows_only: bool = True) -> np.ndarray:
    """Row-scaled label matrix whose squared norm gives the label-trick penalty.

    Row ``i`` of the result is ``sqrt(q_i - C_i^2) * y_tr_i``. With
    ``train_rows_only`` (the default) ``q_i`` sums ``P_ki^2`` over training
    rows ``k`` only, which is what the expectation over splits produces
    because the loss never looks at non-training rows. With it off,
    ``q = diag(P^T P)`` over all rows; the two agree when every node is a
    training node.
    """
    idx = labels.train_idx
    out = np.zeros((op.n, labels.c))
    if len(idx) == 0:
        return out
    c = op.diag[idx]
    if train_rows_only:
        q = train_column_norms(op, idx)
    else:
        if op.diag_ptp is None:
            raise DenseModeRequired("diag(P^T P) needs a materialized operator")
        q = op.diag_ptp[idx]
    rad = q - c * c
    if np.any(rad < -RADICAND_TOL):
        worst = int(idx[np.argmin(rad)])
        raise NumericalIntegrityError(f"negative radicand {rad.min():.3e} at node {worst}")
    out[idx] = np.sqrt(np.clip(rad, 0.0, None))[:, None] * labels.Y[idx]
    return out
