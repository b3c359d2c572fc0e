"""Structural and positional input features for the denoiser.

Laplacian spectrum, cycle counts, degree statistics, per-pair shortest
distances and Adamic-Adar scores. These features condition the network but
are constants with respect to its parameters: no gradient flows through
them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import GraphSpec, SparseGraph, num_pairs, pair_from_index

__all__ = [
    "EncodingConfig",
    "EncodedFeatures",
    "compute_encodings",
    "node_feature_dim",
    "pair_feature_dim",
    "graph_feature_dim",
    "TIMESTEP_SLOT",
    "normalized_laplacian",
    "laplacian_spectrum",
    "cycle_counts",
    "shortest_distances",
    "adamic_adar",
]

# reserved position of the diffusion-time scalar in the graph feature row
TIMESTEP_SLOT = 0

_EIG_ZERO_TOL = 1e-8


@dataclass(frozen=True)
class EncodingConfig:
    """Feature-family switches and sizes."""

    k_eig: int = 8
    hop_cap: int = 10
    use_spectral: bool = True
    use_cycles: bool = True
    use_degree: bool = True
    use_distance: bool = True
    use_adamic_adar: bool = True

    def __post_init__(self):
        if self.k_eig < 0:
            raise ValueError("k_eig must be >= 0")
        if self.hop_cap < 1:
            raise ValueError("hop_cap must be >= 1")


@dataclass(frozen=True)
class EncodedFeatures:
    """Deterministic per-node / per-pair / per-graph feature rows."""

    node_features: np.ndarray    # (n, node_feature_dim)
    pair_features: np.ndarray    # (P, pair_feature_dim), aligned with the pair list
    graph_features: np.ndarray   # (graph_feature_dim,)

    def __post_init__(self):
        for name in ("node_features", "pair_features", "graph_features"):
            a = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(a)):
                raise ValueError(f"non-finite entries in {name}")
            a.flags.writeable = False
            object.__setattr__(self, name, a)


def node_feature_dim(cfg: EncodingConfig) -> int:
    d = 0
    if cfg.use_spectral:
        d += cfg.k_eig
    if cfg.use_degree:
        d += 1
    return max(d, 1)


def pair_feature_dim(cfg: EncodingConfig) -> int:
    d = 0
    if cfg.use_distance:
        d += cfg.hop_cap + 1        # distances 1..hop_cap plus a capped bucket
    if cfg.use_adamic_adar:
        d += 1
    return max(d, 1)


def graph_feature_dim(cfg: EncodingConfig, spec: GraphSpec) -> int:
    d = 1                           # timestep slot
    if cfg.use_spectral:
        d += cfg.k_eig
    if cfg.use_cycles:
        d += 3
    if cfg.use_degree:
        d += 3
    d += spec.num_node_classes + spec.num_edge_classes
    return d


def _dense_adjacency(g: SparseGraph) -> np.ndarray:
    a = np.zeros((g.num_nodes, g.num_nodes), dtype=np.float64)
    if g.num_edges:
        i, j = g.edge_index[:, 0], g.edge_index[:, 1]
        a[i, j] = 1.0
        a[j, i] = 1.0
    return a


def normalized_laplacian(g: SparseGraph) -> np.ndarray:
    """I - D^{-1/2} A D^{-1/2}, with the isolated-node convention D^{-1/2}=0."""
    a = _dense_adjacency(g)
    deg = a.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    lap = np.eye(g.num_nodes) - inv_sqrt[:, None] * a * inv_sqrt[None, :]
    return lap


def laplacian_spectrum(g: SparseGraph):
    """Eigenvalues (clipped to [0, 2]) and sign-fixed eigenvectors, ascending."""
    lap = normalized_laplacian(g)
    try:
        vals, vecs = np.linalg.eigh(lap)
    except np.linalg.LinAlgError as exc:   # pragma: no cover - eigh on symmetric input
        raise RuntimeError(f"eigendecomposition failed on n={g.num_nodes} graph") from exc
    vals = np.clip(vals, 0.0, 2.0)
    # per-vector sign convention: largest-magnitude entry positive
    picks = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[picks, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vals, vecs * signs[None, :]


def cycle_counts(g: SparseGraph) -> tuple[int, int, int]:
    """Exact 3-, 4-, and 5-cycle counts from adjacency-power traces."""
    a = _dense_adjacency(g)
    deg = a.sum(axis=1)
    m = g.num_edges
    a2 = a @ a
    a3 = a2 @ a
    tr3 = np.trace(a3)
    c3 = tr3 / 6.0
    tr4 = np.einsum("ij,ji->", a2, a2)
    c4 = (tr4 - 2.0 * np.sum(deg ** 2) + 2.0 * m) / 8.0
    a5_diag = np.einsum("ij,ji->i", a2, a3)
    tr5 = a5_diag.sum()
    diag_a3 = np.diag(a3)
    c5 = (tr5 - 5.0 * tr3 - 5.0 * np.sum((deg - 2.0) * diag_a3)) / 10.0
    return int(round(c3)), int(round(c4)), int(round(c5))


def _adjacency_lists(g: SparseGraph) -> list[np.ndarray]:
    neigh: list[list[int]] = [[] for _ in range(g.num_nodes)]
    for i, j in g.edge_index:
        neigh[i].append(int(j))
        neigh[j].append(int(i))
    return [np.asarray(x, dtype=np.int64) for x in neigh]


def shortest_distances(g: SparseGraph, pairs_ij: np.ndarray, hop_cap: int) -> np.ndarray:
    """Capped BFS distance per pair; hop_cap + 1 marks capped or unreachable."""
    n = g.num_nodes
    neigh = _adjacency_lists(g)
    out = np.full(len(pairs_ij), hop_cap + 1, dtype=np.int64)
    if len(pairs_ij) == 0:
        return out
    by_source: dict[int, list[int]] = {}
    for row, (i, _) in enumerate(pairs_ij):
        by_source.setdefault(int(i), []).append(row)
    dist = np.empty(n, dtype=np.int64)
    for src, rows in by_source.items():
        dist.fill(-1)
        dist[src] = 0
        frontier = np.array([src], dtype=np.int64)
        d = 0
        while len(frontier) and d < hop_cap:
            d += 1
            nxt = np.concatenate([neigh[v] for v in frontier]) if len(frontier) else frontier
            nxt = np.unique(nxt)
            nxt = nxt[dist[nxt] < 0]
            dist[nxt] = d
            frontier = nxt
        for row in rows:
            dj = dist[pairs_ij[row][1]]
            if dj > 0:
                out[row] = dj
    return out


def adamic_adar(g: SparseGraph, pairs_ij: np.ndarray) -> np.ndarray:
    """Sum of 1/log(deg) over common neighbors of each pair.

    Any common neighbor has degree >= 2, so the log never vanishes.
    """
    if len(pairs_ij) == 0:
        return np.zeros(0)
    adj = _dense_adjacency(g).astype(bool)
    deg = adj.sum(axis=1).astype(np.float64)
    inv_log = np.zeros_like(deg)
    ok = deg >= 2
    inv_log[ok] = 1.0 / np.log(deg[ok])
    common = adj[pairs_ij[:, 0]] & adj[pairs_ij[:, 1]]
    return common @ inv_log


def compute_encodings(g: SparseGraph, pairs: np.ndarray, cfg: EncodingConfig,
                      spec: GraphSpec) -> EncodedFeatures:
    """All enabled feature families for `g` and the requested condensed pairs.

    The graph feature row reserves TIMESTEP_SLOT (filled by the caller with
    t/T); everything else is a deterministic function of the graph.
    """
    n = g.num_nodes
    pairs = np.asarray(pairs, dtype=np.int64)
    if len(pairs) and (pairs.min() < 0 or pairs.max() >= num_pairs(n)):
        raise ValueError("requested pair index out of range")
    deg = g.degrees.astype(np.float64)
    denom = max(n - 1, 1)

    node_cols = []
    graph_cols = [np.zeros(1)]                      # timestep slot
    if cfg.use_spectral:
        vals, vecs = laplacian_spectrum(g)
        nonzero = np.flatnonzero(vals > _EIG_ZERO_TOL)
        take = nonzero[: cfg.k_eig]
        eigvals = np.zeros(cfg.k_eig)
        eigvals[: len(take)] = vals[take]
        eigvecs = np.zeros((n, cfg.k_eig))
        eigvecs[:, : len(take)] = vecs[:, take]
        node_cols.append(eigvecs)
        graph_cols.append(eigvals)
    if cfg.use_degree:
        node_cols.append((deg / denom)[:, None])
        graph_cols.append(np.array([deg.mean() / denom,
                                    deg.std() / denom,
                                    deg.max() / denom if n else 0.0]))
    if cfg.use_cycles:
        c3, c4, c5 = cycle_counts(g)
        graph_cols.append(np.array([c3, c4, c5], dtype=np.float64) / n)
    node_freq = np.bincount(g.node_labels, minlength=spec.num_node_classes
                            ).astype(np.float64) / n
    total = num_pairs(n)
    edge_freq = np.bincount(g.edge_labels, minlength=spec.num_edge_classes
                            ).astype(np.float64)
    if total > 0:
        edge_freq[0] = total - g.num_edges
        edge_freq /= total
    else:
        edge_freq[0] = 1.0
    graph_cols.extend([node_freq, edge_freq])

    node_features = (np.concatenate(node_cols, axis=1) if node_cols
                     else np.zeros((n, 1)))
    graph_features = np.concatenate(graph_cols)

    pair_cols = []
    if len(pairs):
        i, j = pair_from_index(pairs, n)
        pairs_ij = np.column_stack([i, j])
    else:
        pairs_ij = np.empty((0, 2), dtype=np.int64)
    if cfg.use_distance:
        dist = shortest_distances(g, pairs_ij, cfg.hop_cap)
        one_hot = np.zeros((len(pairs), cfg.hop_cap + 1))
        if len(pairs):
            one_hot[np.arange(len(pairs)), dist - 1] = 1.0
        pair_cols.append(one_hot)
    if cfg.use_adamic_adar:
        pair_cols.append(adamic_adar(g, pairs_ij)[:, None])
    pair_features = (np.concatenate(pair_cols, axis=1) if pair_cols
                     else np.zeros((len(pairs), 1)))
    return EncodedFeatures(node_features, pair_features, graph_features)
