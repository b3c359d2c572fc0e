"""Reverse generation: chunked per-step inference and the stride ladder.

Each reverse step partitions all node pairs into ceil(1/lambda) chunks,
predicts every chunk against the same frozen noisy graph, combines the
predictions with the exact diffusion posterior, and accumulates the sampled
existing edges. Node labels are decided once per step, in the first chunk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .encodings import EncodingConfig, compute_encodings
from .graphs import GraphSpec, SparseGraph, num_pairs, pair_from_index
from .network import NetworkWeights, forward
from .noise import NoiseSchedule, posterior_rows, prior_sample
from .queries import build_message_graph

__all__ = [
    "SamplerConfig", "ChunkPlan", "plan_chunks", "denoise_step",
    "stride_ladder", "generate",
]


@dataclass(frozen=True)
class SamplerConfig:
    """Reverse-process knobs; `inference_steps` < num_steps strides the ladder."""

    num_steps: int                # T, must match the schedule
    inference_steps: int          # S <= T
    sparsity: float               # lambda
    seed: int = 0

    def __post_init__(self):
        if self.inference_steps < 1 or self.inference_steps > self.num_steps:
            raise ValueError("inference_steps must lie in [1, num_steps]")
        if not 0.0 < self.sparsity <= 1.0:
            raise ValueError("sparsity must lie in (0, 1]")


@dataclass(frozen=True)
class ChunkPlan:
    """Equal-sized random chunks of condensed pair indices covering all pairs.

    When the chunk count does not divide the pair count, the final chunk is
    padded with trailing indices of the previous chunk, so only the last two
    chunks may overlap.
    """

    chunks: tuple[np.ndarray, ...]
    overlap: int                   # padded entries duplicated into the last chunk

    def __post_init__(self):
        frozen = []
        for arr in self.chunks:
            a = np.ascontiguousarray(arr, dtype=np.int64)
            a.flags.writeable = False
            frozen.append(a)
        object.__setattr__(self, "chunks", tuple(frozen))


def plan_chunks(n: int, sparsity: float, rng: np.random.Generator) -> ChunkPlan:
    """Fresh random equal-sized partition of all pairs into ceil(1/lambda) chunks."""
    if n < 2:
        raise ValueError("n must be >= 2")
    if not 0.0 < sparsity <= 1.0:
        raise ValueError("sparsity must lie in (0, 1]")
    total = num_pairs(n)
    k = min(math.ceil(1.0 / sparsity), total)
    size = math.ceil(total / k)
    perm = rng.permutation(total)
    chunks = []
    for c in range(k - 1):
        chunks.append(np.sort(perm[c * size:(c + 1) * size]))
    tail = perm[(k - 1) * size:]
    overlap = size - len(tail)
    if overlap:
        prev = perm[(k - 2) * size:(k - 1) * size]
        tail = np.concatenate([tail, prev[-overlap:]])
    chunks.append(np.sort(tail))
    return ChunkPlan(tuple(chunks), overlap)


def _categorical_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(len(probs))
    picks = (cdf < u[:, None]).sum(axis=1)
    return np.minimum(picks, probs.shape[1] - 1)


def denoise_step(weights: NetworkWeights, g_t: SparseGraph, t: int, k: int,
                 sparsity: float, schedule: NoiseSchedule, spec: GraphSpec,
                 enc_cfg: EncodingConfig, rng: np.random.Generator,
                 stats: dict | None = None) -> SparseGraph:
    """One reverse step G^t -> G^{t-k}.

    All chunks condition on the same frozen G^t. Pairs repeated by the
    chunk-plan padding are decided by the first chunk containing them.
    When `stats` is given, `peak_edge_rows` records the largest live
    message-edge row count of the step.
    """
    if not 1 <= k <= t:
        raise ValueError("need 1 <= k <= t")
    n = g_t.num_nodes
    plan = plan_chunks(n, sparsity, rng)
    t_norm = t / schedule.num_steps
    new_node_labels = g_t.node_labels
    edge_idx_parts: list[np.ndarray] = []
    edge_lab_parts: list[np.ndarray] = []
    for ci, chunk in enumerate(plan.chunks):
        fresh = np.ones(len(chunk), dtype=bool)
        if ci == len(plan.chunks) - 1 and plan.overlap and len(plan.chunks) > 1:
            prev = plan.chunks[ci - 1]
            pos = np.searchsorted(prev, chunk)
            pos = np.minimum(pos, len(prev) - 1)
            fresh = prev[pos] != chunk
        mg = build_message_graph(g_t, chunk)
        if stats is not None:
            stats["peak_edge_rows"] = max(stats.get("peak_edge_rows", 0),
                                          mg.num_edges)
        enc = compute_encodings(g_t, mg.pair_indices, enc_cfg, spec)
        pred = forward(weights, mg, enc, t_norm)
        observed = g_t.edge_label_at(chunk)
        post = posterior_rows(observed, pred.edge_probs, t, k, schedule,
                              spec.edge_marginals)
        labels = _categorical_rows(post, rng)
        keep = fresh & (labels > 0)
        edge_idx_parts.append(chunk[keep])
        edge_lab_parts.append(labels[keep])
        if ci == 0:
            node_post = posterior_rows(g_t.node_labels, pred.node_probs, t, k,
                                       schedule, spec.node_marginals)
            new_node_labels = _categorical_rows(node_post, rng)
    all_idx = np.concatenate(edge_idx_parts)
    all_lab = np.concatenate(edge_lab_parts)
    order = np.argsort(all_idx)
    all_idx, all_lab = all_idx[order], all_lab[order]
    if len(all_idx):
        i, j = pair_from_index(all_idx, n)
        edge_index = np.column_stack([i, j])
    else:
        edge_index = np.empty((0, 2), dtype=np.int64)
    return SparseGraph(n, new_node_labels, edge_index, all_lab, validate=False)


def stride_ladder(num_steps: int, inference_steps: int) -> list[tuple[int, int]]:
    """Rounded uniform grid over [0, T] as (t, k) reverse steps."""
    grid = np.round(np.linspace(num_steps, 0, inference_steps + 1)).astype(int)
    steps = []
    prev = num_steps
    for value in grid[1:]:
        v = int(value)
        if v < prev:
            steps.append((prev, prev - v))
            prev = v
    return steps


def generate(weights: NetworkWeights, node_count_source, cfg: SamplerConfig,
             schedule: NoiseSchedule, spec: GraphSpec,
             enc_cfg: EncodingConfig, count: int = 1,
             stats: dict | None = None) -> list[SparseGraph]:
    """Sample `count` graphs: empirical node count, prior draw, stride ladder.

    `node_count_source` is either a fixed integer or an array of observed
    node counts (one is drawn uniformly per graph). Deterministic given
    `cfg.seed`.
    """
    if cfg.num_steps != schedule.num_steps:
        raise ValueError("sampler config and schedule disagree on num_steps")
    rng = np.random.default_rng(cfg.seed)
    ladder = stride_ladder(cfg.num_steps, cfg.inference_steps)
    out = []
    for _ in range(count):
        if np.isscalar(node_count_source):
            n = int(node_count_source)
        else:
            counts = np.asarray(node_count_source, dtype=np.int64)
            n = int(counts[rng.integers(len(counts))])
        g = prior_sample(n, spec, rng)
        for t, k in ladder:
            g = denoise_step(weights, g, t, k, cfg.sparsity, schedule, spec,
                             enc_cfg, rng, stats=stats)
        out.append(g)
    return out
