"""Self-check suites at desk scale: each check replays an invariant against
its dense or closed-form oracle and reports a machine-readable summary.

These are faster variants of the acceptance tests, wired to the `verify`
CLI subcommand; thresholds match the acceptance criteria, sample counts are
scaled down to run in seconds.
"""

from __future__ import annotations

import math

import numpy as np

from . import reference as ref
from .encodings import EncodingConfig, compute_encodings
from .graphs import GraphSpec, SparseGraph, from_dense, num_pairs
from .network import (NetworkConfig, NetworkWeights, Prediction, TrainExample,
                      gradients, init_network, loss)
from .noise import (LemmaBoundQuery, NoiseSchedule, apply_noise, build_schedule,
                    lemma_bound, lemma_monte_carlo, posterior_distribution)
from .queries import build_message_graph, sample_query_pairs
from .training import prepare_example

__all__ = ["run_check", "CHECK_KINDS"]

P_GATE = 1e-3


def _random_graph(n: int, spec: GraphSpec, density: float,
                  rng: np.random.Generator) -> SparseGraph:
    mat = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < density:
                mat[i, j] = mat[j, i] = rng.integers(1, spec.num_edge_classes)
    labels = rng.integers(0, spec.num_node_classes, size=n)
    return from_dense(labels, mat, spec)


def _slot_counts(g_t: SparseGraph, node_counts, slot_counts):
    labels = g_t.edge_label_at(np.arange(num_pairs(g_t.num_nodes)))
    np.add.at(slot_counts, (np.arange(len(labels)), labels), 1)
    np.add.at(node_counts, (np.arange(g_t.num_nodes), g_t.node_labels), 1)


def check_noise(seed: int = 0, graphs: int = 3, n: int = 6, samples: int = 20_000,
                timesteps=(1, 3, 5), num_steps: int = 5) -> dict:
    """Sparse corruption matches the dense per-slot cumulative rows."""
    rng = np.random.default_rng(seed)
    spec = GraphSpec(2, 3, np.array([0.6, 0.4]), np.array([0.7, 0.2, 0.1]))
    schedule = build_schedule(num_steps)
    worst_p = 1.0
    cells = 0
    for _ in range(graphs):
        g = _random_graph(n, spec, 0.3, rng)
        for t in timesteps:
            node_rows, slot_rows = ref.dense_corruption_distributions(
                g, t, schedule, spec)
            node_counts = np.zeros_like(node_rows)
            slot_counts = np.zeros_like(slot_rows)
            for _ in range(samples):
                g_t = apply_noise(g, t, schedule, spec, rng)
                _slot_counts(g_t, node_counts, slot_counts)
            for row in range(len(slot_rows)):
                p = ref.chi_square_pvalue(slot_counts[row], slot_rows[row])
                worst_p = min(worst_p, p)
                cells += 1
            for row in range(len(node_rows)):
                p = ref.chi_square_pvalue(node_counts[row], node_rows[row])
                worst_p = min(worst_p, p)
                cells += 1
    return {"kind": "noise", "passed": bool(worst_p > P_GATE),
            "min_p_value": worst_p, "slots_tested": cells,
            "samples_per_slot": samples}


def check_lemma(seed: int = 0, trials: int = 200_000) -> dict:
    """Monte-Carlo tail never exceeds the closed-form bound; n=10 exact."""
    rng = np.random.default_rng(seed)
    results = []
    ok = True
    for n, r, k in ((20, 0.05, 0.15), (50, 0.05, 0.10)):
        est = lemma_monte_carlo(n, r, k, trials, rng)
        bound = lemma_bound(LemmaBoundQuery(n, r, k))
        log_est = math.log(est) if est > 0 else None
        entry = {"n": n, "r": r, "k": k, "estimate": est, "log_bound": bound,
                 "log_estimate": log_est}
        if log_est is not None and log_est > bound:
            ok = False
        results.append(entry)
    n, r, k = 10, 0.05, 0.2
    total = num_pairs(n)
    exact = ref.binomial_tail_exact(total, r, math.ceil(k * total))
    est = lemma_monte_carlo(n, r, k, trials, rng)
    sigma = math.sqrt(exact * (1.0 - exact) / trials)
    within = abs(est - exact) <= 3.0 * sigma + 1e-12
    ok = ok and within
    results.append({"n": n, "exact_tail": exact, "estimate": est,
                    "within_3_sigma": bool(within)})
    return {"kind": "lemma", "passed": bool(ok), "cases": results}


def _tiny_setup(seed: int):
    rng = np.random.default_rng(seed)
    spec = GraphSpec(2, 3, np.array([0.6, 0.4]), np.array([0.7, 0.2, 0.1]))
    enc_cfg = EncodingConfig(k_eig=2, hop_cap=3)
    from .encodings import graph_feature_dim, node_feature_dim, pair_feature_dim
    cfg = NetworkConfig(
        num_node_classes=2, num_edge_classes=3,
        node_feature_dim=node_feature_dim(enc_cfg),
        pair_feature_dim=pair_feature_dim(enc_cfg),
        graph_feature_dim=graph_feature_dim(enc_cfg, spec),
        num_layers=2, node_dim=16, edge_dim=8, graph_dim=8, num_heads=2)
    return rng, spec, enc_cfg, cfg


def gradcheck_max_errors(seed: int = 0, entries_per_tensor: int | None = 8,
                         step: float = 1e-5) -> dict[str, float]:
    """Max relative error of analytic vs central-difference gradients.

    `entries_per_tensor=None` sweeps every entry (acceptance mode).
    """
    from . import autodiff as ad
    from .network import _as_params, _example_loss

    rng, spec, enc_cfg, cfg = _tiny_setup(seed)
    schedule = build_schedule(6)
    g = _random_graph(5, spec, 0.4, rng)
    ex = prepare_example(g, schedule, spec, enc_cfg, sparsity=0.5, rng=rng,
                         augment=False)
    weights = init_network(cfg, rng)
    grads, _ = gradients(weights, [ex])

    def loss_value(w: NetworkWeights) -> float:
        with ad.no_grad():
            total, _ = _example_loss(_as_params(w, False), cfg, ex)
        return float(total.value)

    pick_rng = np.random.default_rng(seed + 1)
    errors: dict[str, float] = {}
    for name, arr in weights.tensors.items():
        flat_size = arr.size
        if entries_per_tensor is None or entries_per_tensor >= flat_size:
            picks = np.arange(flat_size)
        else:
            picks = pick_rng.choice(flat_size, size=entries_per_tensor,
                                    replace=False)
        worst = 0.0
        for k in picks:
            base = {nm: a.copy() for nm, a in weights.tensors.items()}
            base[name].ravel()[k] += step
            up = loss_value(NetworkWeights(cfg, base))
            base = {nm: a.copy() for nm, a in weights.tensors.items()}
            base[name].ravel()[k] -= step
            down = loss_value(NetworkWeights(cfg, base))
            fd = (up - down) / (2.0 * step)
            an = grads[name].ravel()[k]
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
        errors[name] = worst
    return errors


def check_gradcheck(seed: int = 0, entries_per_tensor: int | None = 8) -> dict:
    errors = gradcheck_max_errors(seed, entries_per_tensor)
    worst = max(errors.values())
    return {"kind": "gradcheck", "passed": bool(worst < 1e-4),
            "max_rel_error": worst,
            "worst_tensor": max(errors, key=errors.get)}


def check_loss_unbiased(seed: int = 0, draws: int = 20_000) -> dict:
    """(c/lambda)-scaled query edge loss is an unbiased dense-loss estimate."""
    rng = np.random.default_rng(seed)
    spec = GraphSpec(1, 2, np.array([1.0]), np.array([0.7, 0.3]))
    n = 6
    g = _random_graph(n, spec, 0.4, rng)
    total = num_pairs(n)
    slot_probs = rng.dirichlet(np.ones(2), size=total)
    node_probs = np.ones((n, 1))
    c = 5.0
    dense = ref.dense_all_pairs_edge_loss(g, slot_probs, c)
    cases = []
    ok = True
    for sparsity in (0.2, 0.5, 1.0):
        means = 0.0
        n_draws = 1 if sparsity == 1.0 else draws
        for _ in range(n_draws):
            qp = sample_query_pairs(n, sparsity, rng)
            pred = Prediction(node_probs, qp, slot_probs[qp])
            means += loss(pred, g, edge_weight=c).edge_term
        mc = means / n_draws
        rel = abs(mc - dense) / dense
        threshold = 1e-10 if sparsity == 1.0 else 0.01
        ok = ok and rel < threshold
        cases.append({"sparsity": sparsity, "mc_mean": mc, "dense": dense,
                      "rel_error": rel, "threshold": threshold})
    return {"kind": "loss-unbiased", "passed": bool(ok), "cases": cases}


def check_posterior(seed: int = 0, chains: int = 20) -> dict:
    """k-step posterior equals the marginalized single-step composition."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(chains):
        c = int(rng.integers(2, 5))
        marg = rng.dirichlet(np.ones(c))
        schedule = build_schedule(8)
        t = 8
        for k in (2, 4, 8):
            for x0 in range(c):
                belief = np.zeros(c)
                belief[x0] = 1.0
                for z_t in range(c):
                    direct = posterior_distribution(z_t, belief, t, k,
                                                    schedule, marg)
                    # compose single steps, marginalizing the intermediate state
                    dist = np.zeros(c)
                    dist[z_t] = 1.0
                    for s in range(t, t - k, -1):
                        nxt = np.zeros(c)
                        for z, w in enumerate(dist):
                            if w > 0:
                                nxt += w * posterior_distribution(
                                    z, belief, s, 1, schedule, marg)
                        dist = nxt
                    worst = max(worst, float(np.max(np.abs(direct - dist))))
    return {"kind": "posterior", "passed": bool(worst < 1e-10),
            "max_abs_error": worst}


CHECK_KINDS = {
    "noise": check_noise,
    "lemma": check_lemma,
    "gradcheck": check_gradcheck,
    "loss-unbiased": check_loss_unbiased,
    "posterior": check_posterior,
}


def run_check(kind: str, seed: int = 0) -> dict:
    if kind not in CHECK_KINDS:
        raise ValueError(f"unknown verify kind {kind!r}; "
                         f"choose from {sorted(CHECK_KINDS)}")
    return CHECK_KINDS[kind](seed=seed)
