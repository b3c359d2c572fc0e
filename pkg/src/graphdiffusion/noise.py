"""Marginal-transition discrete diffusion: schedules, corruption, posteriors.

The forward kernel for a label space with marginals p is
``Q^t = alpha^t I + (1 - alpha^t) 1 p'``; its t-step composition has the same
form with the cumulative alpha-bar, which is what makes a sparse three-step
corruption possible: resample stored labels, then add binomially many new
edges on uniformly chosen vacant slots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graphs import (GraphSpec, SparseGraph, _graph_nocheck, _pair_rows,
                     num_pairs)

__all__ = [
    "NoiseSchedule",
    "build_schedule",
    "transition_matrix",
    "vacant_ranks_to_pair_indices",
    "sample_vacant_pairs",
    "apply_noise",
    "posterior_distribution",
    "posterior_rows",
    "prior_sample",
    "LemmaBoundQuery",
    "lemma_bound",
    "lemma_monte_carlo",
    "NumericalDegeneracyError",
]


class NumericalDegeneracyError(ArithmeticError):
    """A posterior denominator vanished for a class with nonzero weight."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step keep probabilities alpha^t and their cumulative products.

    Arrays are indexed directly by t in 1..T; index 0 holds the empty-product
    conventions alpha_bar[0] = 1 (and alpha[0] = 1, unused).
    """

    num_steps: int                  # T
    alpha: np.ndarray               # (T+1,), alpha[t] for t >= 1
    alpha_bar: np.ndarray           # (T+1,), alpha_bar[0] = 1

    def __post_init__(self):
        a = np.ascontiguousarray(self.alpha, dtype=np.float64)
        ab = np.ascontiguousarray(self.alpha_bar, dtype=np.float64)
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "alpha_bar", ab)
        T = self.num_steps
        if T < 1 or a.shape != (T + 1,) or ab.shape != (T + 1,):
            raise ValueError("alpha/alpha_bar must have length num_steps + 1")
        if np.any(a[1:] <= 0) or np.any(a[1:] > 1):
            raise ValueError("alpha values must lie in (0, 1]")
        if abs(ab[0] - 1.0) > 1e-15:
            raise ValueError("alpha_bar[0] must be 1 (empty product)")
        if not np.allclose(ab[1:], np.cumprod(a[1:]), rtol=1e-12, atol=1e-300):
            raise ValueError("alpha_bar must be the cumulative product of alpha")
        a.flags.writeable = False
        ab.flags.writeable = False

    @property
    def beta(self) -> np.ndarray:
        return 1.0 - self.alpha

    def check_step(self, t: int):
        if not 1 <= t <= self.num_steps:
            raise ValueError(f"timestep {t} outside [1, {self.num_steps}]")


def build_schedule(num_steps: int, kind: str = "cosine") -> NoiseSchedule:
    """Construct a schedule; only the cosine curve (s = 0.008) is wired."""
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    if kind != "cosine":
        raise ValueError(f"unknown schedule kind {kind!r}")
    s = 0.008
    t = np.arange(num_steps + 1, dtype=np.float64)
    f = np.cos(((t / num_steps + s) / (1.0 + s)) * (np.pi / 2.0)) ** 2
    alpha_bar = f / f[0]
    alpha = np.ones(num_steps + 1)
    alpha[1:] = alpha_bar[1:] / alpha_bar[:-1]
    return NoiseSchedule(num_steps, alpha, alpha_bar)


def _marginal_matrix(alpha: float, marginals: np.ndarray) -> np.ndarray:
    p = np.asarray(marginals, dtype=np.float64)
    return alpha * np.eye(len(p)) + (1.0 - alpha) * np.tile(p, (len(p), 1))


def transition_matrix(schedule: NoiseSchedule, t: int, marginals: np.ndarray,
                      cumulative: bool = False) -> np.ndarray:
    """Row-stochastic single-step Q^t or cumulative Q-bar^t for `marginals`."""
    schedule.check_step(t)
    p = np.asarray(marginals, dtype=np.float64)
    if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ValueError("marginals must be a probability vector")
    alpha = schedule.alpha_bar[t] if cumulative else schedule.alpha[t]
    return _marginal_matrix(float(alpha), p)


def vacant_ranks_to_pair_indices(ranks: np.ndarray, occupied: np.ndarray) -> np.ndarray:
    """Map ranks within the vacant set to absolute condensed indices.

    `occupied` must be sorted and unique. Rank r maps to the r-th smallest
    index not in `occupied`; computed by repeatedly shifting each rank up by
    the number of occupied indices at or below it (binary search), so no
    dense pair array is ever materialized.
    """
    ranks = np.asarray(ranks, dtype=np.int64)
    occupied = np.asarray(occupied, dtype=np.int64)
    if len(occupied) == 0:
        return ranks.copy()
    rank_list = ranks.tolist()
    if len(rank_list) <= 32 and len(occupied) <= 4096 and \
            all(a < b for a, b in zip(rank_list, rank_list[1:])):
        # sorted input: a single merge walk beats the vectorized iteration
        occ = occupied.tolist()
        out = np.empty(len(rank_list), dtype=np.int64)
        oi = 0
        for pos, r in enumerate(rank_list):
            val = r + oi
            while oi < len(occ) and occ[oi] <= val:
                oi += 1
                val = r + oi
            out[pos] = val
        return out
    idx = ranks
    while True:
        shifted = ranks + np.searchsorted(occupied, idx, side="right")
        if (shifted == idx).all():
            return shifted
        idx = shifted


def _sample_without_replacement(total: int, count: int,
                                rng: np.random.Generator) -> np.ndarray:
    """Sorted uniform `count`-subset of [0, total)."""
    if 4 * count >= total:
        return np.sort(rng.permutation(total)[:count])
    # Floyd's algorithm: one bulk draw, then the dedup walk
    u = rng.random(count)
    base = total - count
    chosen: set[int] = set()
    picks: list[int] = []
    for pos in range(count):
        pick = int(u[pos] * (base + pos + 1))
        if pick in chosen:
            pick = base + pos
        chosen.add(pick)
        picks.append(pick)
    picks.sort()
    return np.asarray(picks, dtype=np.int64)


def sample_vacant_pairs(n: int, occupied: np.ndarray, count: int,
                        rng: np.random.Generator) -> np.ndarray:
    """Uniform without-replacement sample of `count` vacant condensed indices.

    `occupied` is a sorted, unique array of condensed indices below
    n(n-1)/2; the result is sorted, unique, and disjoint from it.
    """
    occupied = np.asarray(occupied, dtype=np.int64)
    total = num_pairs(n)
    vacant = total - len(occupied)
    if count > vacant:
        raise ValueError(f"requested {count} vacant pairs but only {vacant} available")
    if count == 0:
        return np.empty(0, dtype=np.int64)
    ranks = _sample_without_replacement(vacant, count, rng)
    return vacant_ranks_to_pair_indices(ranks, occupied)


def _sample_rows_cdf(cdf: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. categorical draws given a cdf over classes."""
    return cdf.searchsorted(rng.random(size), side="right")


def apply_noise(g: SparseGraph, t: int, schedule: NoiseSchedule,
                spec: GraphSpec, rng: np.random.Generator) -> SparseGraph:
    """Sample the noisy graph G^t ~ q(G^t | G) without dense tensors.

    Three steps: resample stored node labels and stored edge labels from the
    cumulative kernel (dropping edges that land on class 0), then add
    Binomial(n_pairs - m, 1 - Qbar[0,0]) new edges on uniformly sampled
    vacant slots with labels from the renormalized Qbar[0, 1:] row.
    """
    schedule.check_step(t)
    ab = float(schedule.alpha_bar[t])
    n = g.num_nodes
    m = g.num_edges
    # Q-bar rows are the mixture ab * one_hot(label) + (1-ab) * marginals,
    # so sampling "keep w.p. ab else marginal draw" is exact.
    u = rng.random(2 * n + 2 * m)
    keep = u[:n] < ab
    node_labels = np.where(
        keep, g.node_labels,
        spec.node_marginal_cdf.searchsorted(u[n:2 * n], side="right"))
    if m:
        keep_e = u[2 * n:2 * n + m] < ab
        resampled = np.where(
            keep_e, g.edge_labels,
            spec.edge_marginal_cdf.searchsorted(u[2 * n + m:], side="right"))
        survived = resampled > 0
        kept_rows = g.edge_index[survived]
        kept_idx = g.pair_indices[survived]
        kept_lab = resampled[survived]
    else:
        kept_rows = np.empty((0, 2), dtype=np.int64)
        kept_idx = np.empty(0, dtype=np.int64)
        kept_lab = np.empty(0, dtype=np.int64)
    p0 = float(spec.edge_marginals[0])
    q_new = (1.0 - ab) * (1.0 - p0)       # 1 - Qbar[0, 0]
    n_new = int(rng.binomial(num_pairs(n) - m, q_new)) if q_new > 0 else 0
    if n_new:
        new_idx = sample_vacant_pairs(n, g.pair_indices, n_new, rng)
        new_lab = 1 + _sample_rows_cdf(spec.existing_edge_cdf, n_new, rng)
        ni, nj = _pair_rows(new_idx, n)
        new_rows = np.empty((n_new, 2), dtype=np.int64)
        new_rows[:, 0] = ni
        new_rows[:, 1] = nj
        merged = np.concatenate([kept_idx, new_idx])
        order = np.argsort(merged)
        pair_idx = merged[order]
        edge_index = np.concatenate([kept_rows, new_rows])[order]
        edge_labels = np.concatenate([kept_lab, new_lab])[order]
    else:
        pair_idx, edge_index, edge_labels = kept_idx, kept_rows, kept_lab
    out = _graph_nocheck(n, node_labels, edge_index, edge_labels)
    out.__dict__["pair_indices"] = pair_idx     # pre-fill the cached property
    return out


def _step_product(schedule: NoiseSchedule, t: int, k: int,
                  marginals: np.ndarray) -> np.ndarray:
    """Ordered product Q^{t-k+1} ... Q^t."""
    q = np.eye(len(marginals))
    for s in range(t - k + 1, t + 1):
        q = q @ _marginal_matrix(float(schedule.alpha[s]), marginals)
    return q


def posterior_rows(observed: np.ndarray, clean_probs: np.ndarray, t: int, k: int,
                   schedule: NoiseSchedule, marginals: np.ndarray) -> np.ndarray:
    """Vectorized q(z^{t-k} | z^t, clean) mixed over predicted clean classes.

    `observed` holds one class id per row of `clean_probs`; the result has one
    probability row per input row.
    """
    schedule.check_step(t)
    if not 1 <= k <= t:
        raise ValueError(f"stride k={k} must satisfy 1 <= k <= t={t}")
    marginals = np.asarray(marginals, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.int64)
    clean_probs = np.asarray(clean_probs, dtype=np.float64)
    q_step = _step_product(schedule, t, k, marginals)          # (c, c)
    q_bar_prev = _marginal_matrix(float(schedule.alpha_bar[t - k]), marginals)
    q_bar_t = _marginal_matrix(float(schedule.alpha_bar[t]), marginals)
    denom = q_bar_t[:, observed].T                              # (rows, c_x0)
    bad = (denom <= 0.0) & (clean_probs > 0.0)
    if np.any(bad):
        raise NumericalDegeneracyError(
            "posterior denominator is zero for a clean class with nonzero weight")
    weights = np.where(denom > 0.0, clean_probs / np.where(denom > 0.0, denom, 1.0), 0.0)
    # out[r, j] = sum_x0 w[r, x0] * q_bar_prev[x0, j] * q_step[j, observed[r]]
    out = (weights @ q_bar_prev) * q_step[:, observed].T
    s = out.sum(axis=1, keepdims=True)
    if np.any(s <= 0.0):
        raise NumericalDegeneracyError("posterior normalization collapsed to zero")
    return out / s


def posterior_distribution(z_t: int, p_x0: np.ndarray, t: int, k: int,
                           schedule: NoiseSchedule,
                           marginals: np.ndarray) -> np.ndarray:
    """Distribution of z^{t-k} given the observed z^t and a clean-label belief."""
    p_x0 = np.asarray(p_x0, dtype=np.float64)
    if p_x0.ndim != 1 or np.any(p_x0 < 0) or abs(p_x0.sum() - 1.0) > 1e-9:
        raise ValueError("p_x0 must be a probability vector")
    return posterior_rows(np.array([z_t]), p_x0[None, :], t, k, schedule,
                          marginals)[0]


def prior_sample(n: int, spec: GraphSpec, rng: np.random.Generator) -> SparseGraph:
    """Draw G^T from the marginal prior: i.i.d. labels over nodes and slots."""
    if n < 1:
        raise ValueError("n must be >= 1")
    node_labels = _sample_rows_cdf(spec.node_marginal_cdf, n, rng)
    p_exist = 1.0 - float(spec.edge_marginals[0])
    m = int(rng.binomial(num_pairs(n), p_exist)) if p_exist > 0 else 0
    if m == 0:
        return SparseGraph(n, node_labels, np.empty((0, 2), dtype=np.int64),
                           np.empty(0, dtype=np.int64), validate=False)
    idx = sample_vacant_pairs(n, np.empty(0, dtype=np.int64), m, rng)
    labels = 1 + _sample_rows_cdf(spec.existing_edge_cdf, m, rng)
    i, j = _pair_rows(idx, n)
    out = _graph_nocheck(n, node_labels, np.stack([i, j], axis=1), labels)
    out.__dict__["pair_indices"] = idx
    return out


@dataclass(frozen=True)
class LemmaBoundQuery:
    """Inputs of the noisy-graph sparsity tail bound."""

    n: int          # node count
    r: float        # clean edge ratio m / (n(n-1)/2)
    k: float        # tail threshold, r < k < 1

    def __post_init__(self):
        if not 0.0 < self.r < 0.25:
            raise ValueError("edge ratio r must lie in (0, 1/4)")
        if not self.r < self.k < 1.0:
            raise ValueError("threshold k must lie in (r, 1)")
        if self.n < 2:
            raise ValueError("n must be >= 2")


def lemma_bound(query: LemmaBoundQuery) -> float:
    """Closed-form exponent bounding log P[noisy edge ratio >= k].

    Returns -(n(n-1)/2) * (k*log(k/r) + (1-r)*log((1-k)/(1-r))). Negative
    (informative) throughout the sparse regime; the exponent changes sign for
    k close to 1, where the bound becomes vacuous.
    """
    n, r, k = query.n, query.r, query.k
    exponent = k * math.log(k / r) + (1.0 - r) * math.log((1.0 - k) / (1.0 - r))
    return -num_pairs(n) * exponent


def lemma_monte_carlo(n: int, r: float, k: float, trials: int,
                      rng: np.random.Generator,
                      chunk: int = 1_000_000) -> float:
    """Empirical P[Binomial(n(n-1)/2, r) / n(n-1)/2 >= k] under the
    worst-case slot-wise Bernoulli(r) model."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    total = num_pairs(n)
    threshold = k * total
    hits = 0
    remaining = trials
    while remaining > 0:
        size = min(chunk, remaining)
        counts = rng.binomial(total, r, size=size)
        hits += int(np.count_nonzero(counts >= threshold))
        remaining -= size
    return hits / trials
