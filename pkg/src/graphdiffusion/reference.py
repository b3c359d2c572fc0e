"""Dense and brute-force reference implementations.

Everything here recomputes a quantity the sparse code paths produce, using
the most direct dense formulation available (explicit matrix products,
per-slot loops, exhaustive enumeration). These are the oracles behind the
verify command and the test suite; they trade speed for obviousness and
must stay independent of the sparse implementations they check.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy import stats as sstats

from .encodings import EncodingConfig, compute_encodings
from .graphs import GraphSpec, SparseGraph, num_pairs, pair_from_index, to_dense
from .network import NetworkWeights, Prediction, forward
from .noise import NoiseSchedule
from .queries import build_message_graph

__all__ = [
    "dense_single_step_matrix", "dense_cumulative_matrix",
    "dense_corruption_distributions", "dense_reverse_distributions",
    "dense_all_pairs_edge_loss", "uniform_prediction_chain_density",
    "count_cycles_brute_force", "naive_mmd2", "binomial_tail_exact",
    "chi_square_pvalue",
]


def dense_single_step_matrix(schedule: NoiseSchedule, t: int,
                             marginals: np.ndarray) -> np.ndarray:
    p = np.asarray(marginals, dtype=np.float64)
    c = len(p)
    q = np.empty((c, c))
    for row in range(c):
        for col in range(c):
            q[row, col] = (1.0 - schedule.alpha[t]) * p[col]
            if row == col:
                q[row, col] += schedule.alpha[t]
    return q


def dense_cumulative_matrix(schedule: NoiseSchedule, t: int,
                            marginals: np.ndarray) -> np.ndarray:
    """Explicit ordered product Q^1 Q^2 ... Q^t."""
    c = len(marginals)
    out = np.eye(c)
    for s in range(1, t + 1):
        out = out @ dense_single_step_matrix(schedule, s, marginals)
    return out


def dense_corruption_distributions(g: SparseGraph, t: int,
                                   schedule: NoiseSchedule, spec: GraphSpec):
    """Exact per-node and per-slot label distributions of q(G^t | G)."""
    qx = dense_cumulative_matrix(schedule, t, spec.node_marginals)
    qy = dense_cumulative_matrix(schedule, t, spec.edge_marginals)
    node_rows = qx[g.node_labels]
    _, dense = to_dense(g)
    n = g.num_nodes
    slots = np.arange(num_pairs(n))
    i, j = pair_from_index(slots, n)
    slot_labels = dense[i, j]
    slot_rows = qy[slot_labels]
    return node_rows, slot_rows


def _dense_posterior_row(z_t: int, belief: np.ndarray, q_step: np.ndarray,
                         q_bar_prev: np.ndarray,
                         q_bar_t: np.ndarray) -> np.ndarray:
    c = len(belief)
    out = np.zeros(c)
    for x0 in range(c):
        if belief[x0] == 0.0:
            continue
        denom = q_bar_t[x0, z_t]
        for prev in range(c):
            out[prev] += belief[x0] * q_step[prev, z_t] * q_bar_prev[x0, prev] / denom
    return out / out.sum()


def dense_reverse_distributions(weights: NetworkWeights, g_t: SparseGraph,
                                t: int, k: int, schedule: NoiseSchedule,
                                spec: GraphSpec, enc_cfg: EncodingConfig):
    """Exact node and slot distributions of a dense (lambda = 1) reverse step.

    The network prediction is shared with the sparse path (it defines the
    step); the Bayes combination is redone densely, slot by slot, from the
    explicit matrix products.
    """
    n = g_t.num_nodes
    all_pairs = np.arange(num_pairs(n))
    mg = build_message_graph(g_t, all_pairs)
    enc = compute_encodings(g_t, mg.pair_indices, enc_cfg, spec)
    pred = forward(weights, mg, enc, t / schedule.num_steps)

    def step_product(marginals):
        c = len(marginals)
        q = np.eye(c)
        for s in range(t - k + 1, t + 1):
            q = q @ dense_single_step_matrix(schedule, s, marginals)
        return q

    qy_step = step_product(spec.edge_marginals)
    qy_prev = dense_cumulative_matrix(schedule, t - k, spec.edge_marginals)
    qy_t = dense_cumulative_matrix(schedule, t, spec.edge_marginals)
    _, dense = to_dense(g_t)
    i, j = pair_from_index(all_pairs, n)
    slot_labels = dense[i, j]
    slot_rows = np.stack([
        _dense_posterior_row(int(slot_labels[s]), pred.edge_probs[s],
                             qy_step, qy_prev, qy_t)
        for s in range(len(all_pairs))
    ])
    qx_step = step_product(spec.node_marginals)
    qx_prev = dense_cumulative_matrix(schedule, t - k, spec.node_marginals)
    qx_t = dense_cumulative_matrix(schedule, t, spec.node_marginals)
    node_rows = np.stack([
        _dense_posterior_row(int(g_t.node_labels[v]), pred.node_probs[v],
                             qx_step, qx_prev, qx_t)
        for v in range(n)
    ])
    return node_rows, slot_rows


def dense_all_pairs_edge_loss(clean: SparseGraph, slot_probs: np.ndarray,
                              edge_weight: float) -> float:
    """c * sum over ALL pairs of CE(true slot label, predicted row)."""
    n = clean.num_nodes
    _, dense = to_dense(clean)
    total = 0.0
    for slot in range(num_pairs(n)):
        i, j = pair_from_index(slot, n)
        label = int(dense[i, j])
        total += -math.log(max(slot_probs[slot, label], 1e-12))
    return edge_weight * total


def uniform_prediction_chain_density(spec: GraphSpec, schedule: NoiseSchedule,
                                     ladder) -> float:
    """Expected final existing-edge probability per slot when the denoiser
    outputs uniform distributions at every step (independent slot chains)."""
    b = spec.num_edge_classes
    belief = np.full(b, 1.0 / b)
    dist = spec.edge_marginals.copy()
    for t, k in ladder:
        q_step = np.eye(b)
        for s in range(t - k + 1, t + 1):
            q_step = q_step @ dense_single_step_matrix(schedule, s,
                                                       spec.edge_marginals)
        q_prev = dense_cumulative_matrix(schedule, t - k, spec.edge_marginals)
        q_t = dense_cumulative_matrix(schedule, t, spec.edge_marginals)
        kernel = np.stack([
            _dense_posterior_row(z, belief, q_step, q_prev, q_t)
            for z in range(b)
        ])
        dist = dist @ kernel
    return float(1.0 - dist[0])


def count_cycles_brute_force(g: SparseGraph, length: int) -> int:
    """Count simple cycles of exactly `length` nodes by enumeration."""
    _, dense = to_dense(g)
    adj = dense > 0
    count = 0
    for nodes in itertools.combinations(range(g.num_nodes), length):
        first = nodes[0]
        rest = nodes[1:]
        for perm in itertools.permutations(rest):
            if perm[0] > perm[-1]:
                continue          # fix orientation: each cycle counted once
            cycle = (first,) + perm
            if all(adj[cycle[p], cycle[(p + 1) % length]]
                   for p in range(length)):
                count += 1
    return count


def naive_mmd2(set_a, set_b, sigma: float) -> float:
    """Double-loop biased MMD^2 with the TV kernel; no vectorization."""

    def tv(p, q):
        width = max(len(p), len(q))
        pp = np.zeros(width)
        qq = np.zeros(width)
        pp[: len(p)] = p
        qq[: len(q)] = q
        return 0.5 * float(np.abs(pp - qq).sum())

    def kern(p, q):
        d = tv(p, q)
        return math.exp(-(d * d) / (2.0 * sigma * sigma))

    def mean_kernel(xs, ys):
        return sum(kern(x, y) for x in xs for y in ys) / (len(xs) * len(ys))

    return mean_kernel(set_a, set_a) + mean_kernel(set_b, set_b) \
        - 2.0 * mean_kernel(set_a, set_b)


def binomial_tail_exact(n_trials: int, p: float, threshold_count: int) -> float:
    """P[Binomial(n_trials, p) >= threshold_count], exact."""
    return float(sstats.binom.sf(threshold_count - 1, n_trials, p))


def chi_square_pvalue(counts: np.ndarray, probs: np.ndarray) -> float:
    """Goodness-of-fit p-value of observed counts against exact cell probs.

    Cells with expected count below 5 are merged into the most likely cell
    to keep the chi-square approximation honest.
    """
    counts = np.asarray(counts, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    total = counts.sum()
    expected = probs * total
    keep = expected >= 5.0
    if keep.sum() < 2:
        return 1.0          # nothing to test at this resolution
    if not np.all(keep):
        sink = int(np.argmax(expected))
        merged_c = counts[keep].copy()
        merged_e = expected[keep].copy()
        sink_pos = int(np.flatnonzero(np.flatnonzero(keep) == sink)[0]) \
            if keep[sink] else 0
        merged_c[sink_pos] += counts[~keep].sum()
        merged_e[sink_pos] += expected[~keep].sum()
        counts, expected = merged_c, merged_e
    stat = float(((counts - expected) ** 2 / expected).sum())
    dof = len(counts) - 1
    return float(sstats.chi2.sf(stat, dof))
