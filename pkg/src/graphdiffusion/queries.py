"""Query-edge selection and message-graph construction.

The denoiser only predicts a per-graph uniform sample of node pairs (the
query edges); its computational graph is the union of the noisy graph's
edges and those query pairs, so the loss sees the same class balance as a
dense model would while the edge-feature rows stay sparse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graphs import GraphBatch, SparseGraph, num_pairs

__all__ = [
    "QueryEdgeSet",
    "MessageGraph",
    "query_count",
    "sample_query_pairs",
    "sample_query_edges",
    "build_message_graph",
]


def query_count(n: int, sparsity: float) -> int:
    """Number of query pairs: ceil(sparsity * n(n-1)/2)."""
    return math.ceil(sparsity * num_pairs(n))


@dataclass(frozen=True)
class QueryEdgeSet:
    """Per-graph sorted condensed query indices plus the sparsity used."""

    pair_indices: tuple[np.ndarray, ...]
    sparsity: float

    def __post_init__(self):
        if not 0.0 < self.sparsity <= 1.0:
            raise ValueError("sparsity must lie in (0, 1]")
        frozen = []
        for arr in self.pair_indices:
            a = np.ascontiguousarray(arr, dtype=np.int64)
            a.flags.writeable = False
            frozen.append(a)
        object.__setattr__(self, "pair_indices", tuple(frozen))

    def __len__(self) -> int:
        return len(self.pair_indices)


def sample_query_pairs(n: int, sparsity: float,
                       rng: np.random.Generator) -> np.ndarray:
    """Uniform without-replacement query sample for a single graph."""
    if not 0.0 < sparsity <= 1.0:
        raise ValueError("sparsity must lie in (0, 1]")
    total = num_pairs(n)
    count = query_count(n, sparsity)
    return np.sort(rng.choice(total, size=count, replace=False))


def sample_query_edges(batch: GraphBatch, sparsity: float,
                       rng: np.random.Generator) -> QueryEdgeSet:
    """Per-graph independent query sampling across a batch.

    Sampling per graph keeps the class composition of the queried pairs an
    unbiased estimate of each graph's own slot distribution.
    """
    picks = tuple(sample_query_pairs(g.num_nodes, sparsity, rng)
                  for g in batch)
    return QueryEdgeSet(picks, sparsity)


@dataclass(frozen=True)
class MessageGraph:
    """Union of noisy and query edges with per-edge provenance flags.

    Edges are stored once (i < j) sorted by condensed index; `edge_labels`
    carries the noisy graph's label, or 0 for query pairs absent from it.
    """

    num_nodes: int
    node_labels: np.ndarray
    pair_indices: np.ndarray   # (M,) condensed, sorted
    edge_index: np.ndarray     # (M, 2)
    edge_labels: np.ndarray    # (M,)
    is_noisy: np.ndarray       # (M,) bool
    is_query: np.ndarray       # (M,) bool

    def __post_init__(self):
        for name in ("node_labels", "pair_indices", "edge_index", "edge_labels",
                     "is_noisy", "is_query"):
            a = np.ascontiguousarray(getattr(self, name))
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @property
    def num_edges(self) -> int:
        return len(self.pair_indices)

    @property
    def query_positions(self) -> np.ndarray:
        """Row positions of the query edges within the message edge list."""
        return np.flatnonzero(self.is_query)


def build_message_graph(noisy: SparseGraph, query_pairs: np.ndarray) -> MessageGraph:
    """Union the noisy edges with the given condensed query indices."""
    from .graphs import pair_from_index

    n = noisy.num_nodes
    qp = np.asarray(query_pairs, dtype=np.int64)
    if len(qp) and (qp.min() < 0 or qp.max() >= num_pairs(n)):
        raise ValueError("query pair index out of range")
    qp = np.unique(qp)
    noisy_idx = noisy.pair_indices
    all_idx = np.union1d(noisy_idx, qp)
    # membership of each union entry in either source (both inputs sorted)
    pos_n = np.searchsorted(noisy_idx, all_idx)
    pos_n_c = np.minimum(pos_n, max(len(noisy_idx) - 1, 0))
    is_noisy = (noisy_idx[pos_n_c] == all_idx) if len(noisy_idx) else \
        np.zeros(len(all_idx), dtype=bool)
    pos_q = np.searchsorted(qp, all_idx)
    pos_q_c = np.minimum(pos_q, max(len(qp) - 1, 0))
    is_query = (qp[pos_q_c] == all_idx) if len(qp) else \
        np.zeros(len(all_idx), dtype=bool)
    labels = np.zeros(len(all_idx), dtype=np.int64)
    if len(noisy_idx):
        labels[is_noisy] = noisy.edge_labels[pos_n_c[is_noisy]]
    if len(all_idx):
        i, j = pair_from_index(all_idx, n)
        edge_index = np.column_stack([i, j])
    else:
        edge_index = np.empty((0, 2), dtype=np.int64)
    return MessageGraph(n, noisy.node_labels, all_idx, edge_index, labels,
                        is_noisy, is_query)
