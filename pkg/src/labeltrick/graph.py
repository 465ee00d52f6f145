"""Sparse graph containers and the normalized graph operators.

``SparseMatrix`` is a validated compressed-row matrix; products go through
``scipy.sparse`` which sums each row in stored (ascending column) order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy import sparse


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Real matrix in compressed sparse row form.

    Column indices are strictly increasing within each row and explicit
    zeros are never stored.
    """

    n_rows: int
    n_cols: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if indptr.shape != (self.n_rows + 1,):
            raise ValueError("indptr must have n_rows + 1 entries")
        if indptr[0] != 0 or indptr[-1] != len(indices) or len(indices) != len(data):
            raise ValueError("indptr does not match the number of stored values")
        if np.any(np.diff(indptr) < 0):
            raise ValueError("indptr must be non-decreasing")
        if len(indices) and (indices.min() < 0 or indices.max() >= self.n_cols):
            raise ValueError("column index out of range")
        for r in range(self.n_rows):
            row = indices[indptr[r]:indptr[r + 1]]
            if np.any(np.diff(row) <= 0):
                raise ValueError(f"column indices of row {r} are not strictly increasing")
        if np.any(data == 0):
            raise ValueError("explicit zeros are not allowed")
        if not np.all(np.isfinite(data)):
            raise ValueError("values must be finite")
        for name, arr in (("indptr", indptr), ("indices", indices), ("data", data)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return len(self.data)

    @classmethod
    def from_scipy(cls, m) -> "SparseMatrix":
        m = sparse.csr_matrix(m, dtype=np.float64, copy=True)
        m.sum_duplicates()
        m.eliminate_zeros()
        m.sort_indices()
        return cls(m.shape[0], m.shape[1], m.indptr, m.indices, m.data)

    @classmethod
    def from_dense(cls, a) -> "SparseMatrix":
        return cls.from_scipy(sparse.csr_matrix(np.asarray(a, dtype=np.float64)))

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls.from_scipy(sparse.identity(n, format="csr"))

    @classmethod
    def zeros(cls, n_rows: int, n_cols: int) -> "SparseMatrix":
        return cls(n_rows, n_cols, np.zeros(n_rows + 1), np.zeros(0), np.zeros(0))

    @cached_property
    def _csr(self):
        return sparse.csr_matrix((self.data, self.indices, self.indptr), shape=self.shape)

    def to_scipy(self) -> sparse.csr_matrix:
        return self._csr.copy()

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def diagonal(self) -> np.ndarray:
        return self._csr.diagonal()

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self._csr.T)

    def __matmul__(self, other):
        return spmm(self, other)


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph on nodes ``0..n-1``.

    ``edges`` holds each undirected pair once as ``(u, v)`` with ``u <= v``;
    the adjacency matrix represents both directions.
    """

    n: int
    edges: np.ndarray
    weights: Optional[np.ndarray] = None
    features: Optional[np.ndarray] = None
    self_loops: bool = False
    _normalized: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if len(edges) and (edges.min() < 0 or edges.max() >= self.n):
            raise ValueError("edge endpoint out of range")
        edges = np.sort(edges, axis=1)
        if self.weights is None:
            weights = np.ones(len(edges))
        else:
            weights = np.asarray(self.weights, dtype=np.float64).ravel()
            if weights.shape != (len(edges),):
                raise ValueError("need one weight per edge")
            if np.any(weights <= 0):
                raise ValueError("edge weights must be positive")
        if not self.self_loops:
            keep = edges[:, 0] != edges[:, 1]
            edges, weights = edges[keep], weights[keep]
        # dedupe, keeping the first weight seen for a pair
        _, first = np.unique(edges, axis=0, return_index=True)
        first = np.sort(first)
        edges, weights = edges[first], weights[first]
        order = np.lexsort((edges[:, 1], edges[:, 0]))
        edges, weights = edges[order], weights[order]
        edges.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "weights", weights)
        if self.features is not None:
            x = np.asarray(self.features, dtype=np.float64)
            if x.ndim != 2 or x.shape[0] != self.n:
                raise ValueError("features must be an n x d matrix")
            object.__setattr__(self, "features", x)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def adjacency(self) -> SparseMatrix:
        u, v = self.edges[:, 0], self.edges[:, 1]
        off = u != v
        rows = np.concatenate([u, v[off]])
        cols = np.concatenate([v, u[off]])
        vals = np.concatenate([self.weights, self.weights[off]])
        return SparseMatrix.from_scipy(sparse.coo_matrix((vals, (rows, cols)), shape=(self.n, self.n)))

    def degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency().to_scipy().sum(axis=1)).ravel()

    @property
    def normalized_adjacency(self) -> SparseMatrix:
        if "S" not in self._normalized:
            self._normalized["S"] = build_normalized_adjacency(self)
        return self._normalized["S"]


def build_normalized_adjacency(g: Graph) -> SparseMatrix:
    """Return ``S = D^{-1/2} A D^{-1/2}``; degree-0 nodes get zero rows and columns."""
    a = g.adjacency().to_scipy()
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    d = sparse.diags(inv_sqrt)
    return SparseMatrix.from_scipy(d @ a @ d)


def build_laplacian(s: SparseMatrix) -> SparseMatrix:
    """Return ``L = I - S``."""
    if s.n_rows != s.n_cols:
        raise ValueError(f"Laplacian needs a square matrix, got {s.shape}")
    return SparseMatrix.from_scipy(sparse.identity(s.n_rows, format="csr") - s.to_scipy())


def spmm(a: SparseMatrix, b) -> np.ndarray:
    """Sparse-dense product ``a @ b`` returning a dense array of b's rank."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != a.n_cols:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    return np.asarray(a._csr @ b)
