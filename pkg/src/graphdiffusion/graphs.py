"""Sparse graph containers and pair-index arithmetic.

Graphs are undirected, self-loop free, with discrete node and edge labels.
Edge label 0 means "no edge" and is never stored: the edge list only holds
existing edges, canonically oriented (i < j) and sorted by condensed pair
index. All containers are immutable after construction.
"""

from __future__ import annotations

import math
from dataclasses import InitVar, dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "GraphSpec",
    "SparseGraph",
    "GraphBatch",
    "pair_index",
    "pair_from_index",
    "num_pairs",
    "canonicalize",
    "to_dense",
    "from_dense",
    "permute_nodes",
    "batch",
    "unbatch",
]


def num_pairs(n: int) -> int:
    """Number of unordered node pairs without self-loops."""
    return n * (n - 1) // 2


def _as_int_array(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=np.int64))


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class GraphSpec:
    """Label-space description shared by every graph in a dataset.

    Attributes
    ----------
    num_node_classes : int
        Number of node label classes (labels in [0, num_node_classes)).
    num_edge_classes : int
        Number of edge label classes including class 0 = "no edge".
    node_marginals : ndarray, shape (num_node_classes,)
        Marginal probability of each node class in the data.
    edge_marginals : ndarray, shape (num_edge_classes,)
        Marginal probability of each edge class over all node pairs;
        entry 0 is the vacant-slot fraction.
    """

    num_node_classes: int
    num_edge_classes: int
    node_marginals: np.ndarray
    edge_marginals: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "node_marginals",
            _freeze(np.ascontiguousarray(self.node_marginals, dtype=np.float64)))
        object.__setattr__(
            self, "edge_marginals",
            _freeze(np.ascontiguousarray(self.edge_marginals, dtype=np.float64)))
        if self.num_node_classes < 1 or self.num_edge_classes < 2:
            raise ValueError("need at least one node class and two edge classes")
        for name, p, c in (
            ("node_marginals", self.node_marginals, self.num_node_classes),
            ("edge_marginals", self.edge_marginals, self.num_edge_classes),
        ):
            if p.shape != (c,):
                raise ValueError(f"{name} must have length {c}, got {p.shape}")
            if np.any(p < 0):
                raise ValueError(f"{name} has negative entries")
            if abs(p.sum() - 1.0) > 1e-12:
                raise ValueError(f"{name} must sum to 1 within 1e-12 (got {p.sum()!r})")

    @cached_property
    def node_marginal_cdf(self) -> np.ndarray:
        return _freeze(np.cumsum(self.node_marginals))

    @cached_property
    def edge_marginal_cdf(self) -> np.ndarray:
        return _freeze(np.cumsum(self.edge_marginals))

    @cached_property
    def existing_edge_cdf(self) -> np.ndarray:
        """CDF over classes 1..b-1 renormalized; undefined if p[0] == 1."""
        tail = self.edge_marginals[1:]
        s = tail.sum()
        if s <= 0.0:
            return _freeze(np.ones_like(tail))
        return _freeze(np.cumsum(tail / s))


def pair_index(i, j, n: int):
    """Condensed index of pair (i, j), row-major over the strict upper triangle.

    Accepts scalars or equal-shaped integer arrays. Requires 0 <= i < j < n.
    """
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    if np.any(i < 0) or np.any(j >= n) or np.any(i >= j):
        raise ValueError(f"pair out of range for n={n}: require 0 <= i < j < n")
    idx = i * n - i * (i + 1) // 2 + (j - i - 1)
    return int(idx) if idx.ndim == 0 else idx


def _pair_rows(idx: np.ndarray, n: int):
    """Condensed-index inversion without validation (hot path)."""
    if len(idx) <= 32:
        # numpy per-op overhead dominates at this size; exact isqrt loop wins
        out_i = np.empty(len(idx), dtype=np.int64)
        out_j = np.empty(len(idx), dtype=np.int64)
        tn = 2 * n - 1
        for pos, v in enumerate(idx.tolist()):
            i = (tn - math.isqrt(tn * tn - 8 * v)) // 2
            start = i * n - i * (i + 1) // 2
            if start > v:
                i -= 1
                start = i * n - i * (i + 1) // 2
            elif start + (n - 1 - i) <= v:
                i += 1
                start = i * n - i * (i + 1) // 2
            out_i[pos] = i
            out_j[pos] = v - start + i + 1
        return out_i, out_j
    disc = (2 * n - 1) ** 2 - 8 * idx
    i = (((2 * n - 1) - np.sqrt(disc.astype(np.float64))) // 2).astype(np.int64)
    # fix float rounding: the row start must satisfy start(i) <= idx < start(i+1)
    for _ in range(2):
        start = i * n - i * (i + 1) // 2
        over = start > idx
        if over.any():
            i = np.where(over, i - 1, i)
            start = i * n - i * (i + 1) // 2
        under = start + (n - 1 - i) <= idx
        if not under.any():
            break
        i = np.where(under, i + 1, i)
    start = i * n - i * (i + 1) // 2
    return i, idx - start + i + 1


def pair_from_index(idx, n: int):
    """Inverse of :func:`pair_index`. Accepts scalars or integer arrays."""
    idx = np.asarray(idx, dtype=np.int64)
    total = num_pairs(n)
    if np.any(idx < 0) or np.any(idx >= total):
        raise ValueError(f"condensed index out of range for n={n}")
    if idx.ndim == 0:
        # exact integer arithmetic for the scalar path
        v = int(idx)
        disc = (2 * n - 1) ** 2 - 8 * v
        i = ((2 * n - 1) - math.isqrt(disc)) // 2
        while i * n - i * (i + 1) // 2 > v:
            i -= 1
        while (i + 1) * n - (i + 1) * (i + 2) // 2 <= v:
            i += 1
        j = v - (i * n - i * (i + 1) // 2) + i + 1
        return i, j
    return _pair_rows(idx, n)


def _graph_nocheck(num_nodes: int, node_labels: np.ndarray,
                   edge_index: np.ndarray,
                   edge_labels: np.ndarray) -> "SparseGraph":
    """Zero-overhead constructor for internal callers whose outputs satisfy
    the invariants by construction (sampler hot paths)."""
    g = object.__new__(SparseGraph)
    object.__setattr__(g, "num_nodes", num_nodes)
    object.__setattr__(g, "node_labels", node_labels)
    object.__setattr__(g, "edge_index", edge_index)
    object.__setattr__(g, "edge_labels", edge_labels)
    return g


@dataclass(frozen=True)
class SparseGraph:
    """Edge-list graph with integer labels; see module docstring for invariants."""

    num_nodes: int
    node_labels: np.ndarray   # (n,) int64
    edge_index: np.ndarray    # (m, 2) int64 with i < j, sorted by condensed index
    edge_labels: np.ndarray   # (m,) int64, values in [1, num_edge_classes)
    validate: InitVar[bool] = True

    def __post_init__(self, validate: bool):
        object.__setattr__(self, "node_labels", _freeze(_as_int_array(self.node_labels)))
        object.__setattr__(self, "edge_index",
                           _freeze(_as_int_array(self.edge_index).reshape(-1, 2)))
        object.__setattr__(self, "edge_labels", _freeze(_as_int_array(self.edge_labels)))
        if validate:
            self._check()

    def _check(self):
        n = self.num_nodes
        if n < 1:
            raise ValueError("graph needs at least one node")
        if self.node_labels.shape != (n,):
            raise ValueError("node_labels must have length num_nodes")
        if np.any(self.node_labels < 0):
            raise ValueError("negative node label")
        m = self.edge_index.shape[0]
        if self.edge_labels.shape != (m,):
            raise ValueError("edge_labels must align with edge_index")
        if m == 0:
            return
        i, j = self.edge_index[:, 0], self.edge_index[:, 1]
        if np.any(i >= j):
            raise ValueError("edges must be stored with i < j (no self-loops)")
        if np.any(i < 0) or np.any(j >= n):
            raise ValueError("edge endpoint out of range")
        idx = i * n - i * (i + 1) // 2 + (j - i - 1)
        if np.any(np.diff(idx) <= 0):
            raise ValueError("edges must be sorted by condensed index without duplicates")
        if np.any(self.edge_labels < 1):
            raise ValueError("stored edge labels must be >= 1 (class 0 is 'no edge')")

    @property
    def num_edges(self) -> int:
        return self.edge_index.shape[0]

    @cached_property
    def pair_indices(self) -> np.ndarray:
        """Condensed indices of the stored edges (sorted ascending)."""
        if self.num_edges == 0:
            return _freeze(np.empty(0, dtype=np.int64))
        i, j = self.edge_index[:, 0], self.edge_index[:, 1]
        return _freeze(i * self.num_nodes - i * (i + 1) // 2 + (j - i - 1))

    @cached_property
    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.num_nodes, dtype=np.int64)
        if self.num_edges:
            np.add.at(deg, self.edge_index[:, 0], 1)
            np.add.at(deg, self.edge_index[:, 1], 1)
        return _freeze(deg)

    def edge_label_at(self, pairs: np.ndarray) -> np.ndarray:
        """Label of each requested condensed pair index (0 where vacant)."""
        pairs = _as_int_array(pairs)
        own = self.pair_indices
        pos = np.searchsorted(own, pairs)
        pos_c = np.minimum(pos, max(len(own) - 1, 0))
        hit = np.zeros(len(pairs), dtype=bool) if len(own) == 0 else own[pos_c] == pairs
        out = np.zeros(len(pairs), dtype=np.int64)
        if len(own):
            out[hit] = self.edge_labels[pos_c[hit]]
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseGraph):
            return NotImplemented
        return (self.num_nodes == other.num_nodes
                and np.array_equal(self.node_labels, other.node_labels)
                and np.array_equal(self.edge_index, other.edge_index)
                and np.array_equal(self.edge_labels, other.edge_labels))

    __hash__ = None


def canonicalize(pairs: Iterable, labels: Iterable, n: int,
                 spec: GraphSpec | None = None,
                 node_labels: np.ndarray | None = None) -> SparseGraph:
    """Build a SparseGraph from arbitrarily ordered endpoint pairs.

    Pairs are reoriented to i < j and sorted by condensed index. Self-loops and
    duplicate pairs are rejected. When `spec` is given, label ranges are
    validated against it.
    """
    pr = _as_int_array(list(pairs)).reshape(-1, 2)
    lab = _as_int_array(list(labels))
    if pr.shape[0] != lab.shape[0]:
        raise ValueError("pairs and labels must have equal length")
    if np.any(pr[:, 0] == pr[:, 1]):
        raise ValueError("self-loop in edge list")
    lo = np.minimum(pr[:, 0], pr[:, 1])
    hi = np.maximum(pr[:, 0], pr[:, 1])
    if np.any(lo < 0) or np.any(hi >= n):
        raise ValueError("edge endpoint out of range")
    idx = lo * n - lo * (lo + 1) // 2 + (hi - lo - 1)
    order = np.argsort(idx, kind="stable")
    idx = idx[order]
    if len(idx) > 1 and np.any(np.diff(idx) == 0):
        raise ValueError("duplicate pair in edge list")
    if node_labels is None:
        node_labels = np.zeros(n, dtype=np.int64)
    if spec is not None:
        if np.any(lab < 1) or np.any(lab >= spec.num_edge_classes):
            raise ValueError("edge label outside [1, num_edge_classes)")
        if np.any(np.asarray(node_labels) >= spec.num_node_classes):
            raise ValueError("node label outside [0, num_node_classes)")
    g = SparseGraph(n, node_labels,
                    np.column_stack([lo[order], hi[order]]), lab[order])
    return g


def to_dense(g: SparseGraph, spec: GraphSpec | None = None):
    """Dense (node_labels, n x n edge-class matrix) view; oracle/test support."""
    n = g.num_nodes
    mat = np.zeros((n, n), dtype=np.int64)
    if g.num_edges:
        i, j = g.edge_index[:, 0], g.edge_index[:, 1]
        mat[i, j] = g.edge_labels
        mat[j, i] = g.edge_labels
    return g.node_labels.copy(), mat


def from_dense(node_labels: np.ndarray, mat: np.ndarray,
               spec: GraphSpec | None = None) -> SparseGraph:
    """Inverse of :func:`to_dense`; requires a symmetric zero-diagonal matrix."""
    mat = np.asarray(mat)
    n = mat.shape[0]
    if mat.shape != (n, n):
        raise ValueError("edge matrix must be square")
    if not np.array_equal(mat, mat.T):
        raise ValueError("edge matrix must be symmetric")
    if np.any(np.diag(mat) != 0):
        raise ValueError("diagonal must be zero (no self-loops)")
    i, j = np.nonzero(np.triu(mat, k=1))
    return canonicalize(np.column_stack([i, j]), mat[i, j], n, spec,
                        node_labels=np.asarray(node_labels))


def permute_nodes(g: SparseGraph, permutation) -> SparseGraph:
    """Relabel nodes by `permutation` (node v becomes permutation[v])."""
    perm = _as_int_array(permutation)
    n = g.num_nodes
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ValueError("permutation must be a bijection on [0, n)")
    new_labels = np.empty(n, dtype=np.int64)
    new_labels[perm] = g.node_labels
    if g.num_edges == 0:
        return SparseGraph(n, new_labels, np.empty((0, 2), dtype=np.int64),
                           np.empty(0, dtype=np.int64), validate=False)
    return canonicalize(perm[g.edge_index], g.edge_labels, n,
                        node_labels=new_labels)


@dataclass(frozen=True)
class GraphBatch:
    """A sequence of graphs plus prefix-sum node offsets for flat indexing."""

    graphs: tuple[SparseGraph, ...]
    node_offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        if len(self.graphs) == 0:
            raise ValueError("cannot batch an empty sequence of graphs")
        object.__setattr__(self, "graphs", tuple(self.graphs))
        offs = np.zeros(len(self.graphs) + 1, dtype=np.int64)
        np.cumsum([g.num_nodes for g in self.graphs], out=offs[1:])
        object.__setattr__(self, "node_offsets", _freeze(offs))

    def __len__(self) -> int:
        return len(self.graphs)

    def __iter__(self):
        return iter(self.graphs)

    @property
    def total_nodes(self) -> int:
        return int(self.node_offsets[-1])


def batch(graphs: Sequence[SparseGraph]) -> GraphBatch:
    return GraphBatch(tuple(graphs))


def unbatch(b: GraphBatch) -> tuple[SparseGraph, ...]:
    return b.graphs
