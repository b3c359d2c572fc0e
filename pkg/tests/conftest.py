import numpy as np
import pytest

from graphdiffusion.encodings import (EncodingConfig, graph_feature_dim,
                                      node_feature_dim, pair_feature_dim)
from graphdiffusion.graphs import GraphSpec, SparseGraph, from_dense
from graphdiffusion.network import NetworkConfig


def random_graph(n: int, spec: GraphSpec, density: float,
                 rng: np.random.Generator) -> SparseGraph:
    """Random labeled graph via its dense matrix (test construction only)."""
    mat = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < density:
                mat[i, j] = mat[j, i] = rng.integers(1, spec.num_edge_classes)
    labels = rng.integers(0, spec.num_node_classes, size=n)
    return from_dense(labels, mat, spec)


def make_network_config(spec: GraphSpec, enc_cfg: EncodingConfig,
                        **overrides) -> NetworkConfig:
    kwargs = dict(
        num_node_classes=spec.num_node_classes,
        num_edge_classes=spec.num_edge_classes,
        node_feature_dim=node_feature_dim(enc_cfg),
        pair_feature_dim=pair_feature_dim(enc_cfg),
        graph_feature_dim=graph_feature_dim(enc_cfg, spec),
        num_layers=2, node_dim=16, edge_dim=8, graph_dim=8, num_heads=2,
    )
    kwargs.update(overrides)
    return NetworkConfig(**kwargs)


@pytest.fixture
def labeled_spec() -> GraphSpec:
    return GraphSpec(2, 3, np.array([0.6, 0.4]), np.array([0.7, 0.2, 0.1]))


@pytest.fixture
def plain_spec() -> GraphSpec:
    """Unattributed graphs: one node class, edge classes {vacant, present}."""
    return GraphSpec(1, 2, np.array([1.0]), np.array([0.8, 0.2]))


@pytest.fixture
def tiny_enc_cfg() -> EncodingConfig:
    return EncodingConfig(k_eig=2, hop_cap=3)
