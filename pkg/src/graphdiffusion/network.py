"""Sparse message-passing graph transformer: forward pass, loss, gradients,
optimizer step, and named-tensor checkpointing.

The network reads a message graph (noisy plus query edges), per-edge and
per-node structural encodings, and the normalized timestep; it emits one
class distribution per node and per query pair. Attention runs over the
directed copies of the message edges only, so live edge-feature rows stay
proportional to the message edge count, never to n^2.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encodings import EncodedFeatures, TIMESTEP_SLOT
from .graphs import SparseGraph, num_pairs, pair_from_index
from .queries import MessageGraph

__all__ = [
    "NetworkConfig", "NetworkWeights", "Prediction", "LossBreakdown",
    "TrainExample", "Hyperparams", "TrainState",
    "parameter_shapes", "parameter_count", "init_network",
    "forward", "forward_link_pred", "link_prediction_logits",
    "loss", "gradients", "init_train_state", "train_step",
    "save_checkpoint", "load_checkpoint", "CheckpointError",
]

_LN_EPS = 1e-8
_PNA_EPS = 1e-8
_PROB_FLOOR = 1e-12

CHECKPOINT_MAGIC = b"GRAPHDIFFUSION-CKPT\n"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture and loss hyperparameters.

    `node_feature_dim` / `pair_feature_dim` / `graph_feature_dim` are the raw
    encoding widths (before the label one-hots are appended); they must match
    the EncodingConfig used to produce inputs.
    """

    num_node_classes: int
    num_edge_classes: int
    node_feature_dim: int
    pair_feature_dim: int
    graph_feature_dim: int
    num_layers: int = 4
    node_dim: int = 64
    edge_dim: int = 32
    graph_dim: int = 32
    num_heads: int = 4
    mode: str = "transformer"            # or "link_pred"
    edge_loss_weight: float = 5.0        # c
    sparsity: float = 1.0                # lambda used during training
    ffn_mult: int = 2

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.node_dim % self.num_heads != 0:
            raise ValueError("node_dim must be divisible by num_heads")
        if self.mode not in ("transformer", "link_pred"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0.0 < self.sparsity <= 1.0:
            raise ValueError("sparsity must lie in (0, 1]")

    @property
    def head_dim(self) -> int:
        return self.node_dim // self.num_heads

    @property
    def node_input_dim(self) -> int:
        return self.num_node_classes + self.node_feature_dim

    @property
    def edge_input_dim(self) -> int:
        return self.num_edge_classes + self.pair_feature_dim


def parameter_shapes(cfg: NetworkConfig) -> dict[str, tuple[int, ...]]:
    """Named, ordered shape inventory; the checkpoint layout follows it."""
    dx, de, dg = cfg.node_dim, cfg.edge_dim, cfg.graph_dim
    a, b = cfg.num_node_classes, cfg.num_edge_classes
    hx, he, hg = cfg.ffn_mult * dx, cfg.ffn_mult * de, cfg.ffn_mult * dg
    shapes: dict[str, tuple[int, ...]] = {
        "embed_node.w": (cfg.node_input_dim, dx), "embed_node.b": (dx,),
        "embed_edge.w": (cfg.edge_input_dim, de), "embed_edge.b": (de,),
        "embed_graph.w": (cfg.graph_feature_dim, dg), "embed_graph.b": (dg,),
    }
    for layer in range(cfg.num_layers):
        p = f"layers.{layer}."
        shapes.update({
            p + "attn.w_q": (dx, dx),
            p + "attn.w_k": (dx, dx),
            p + "attn.w_v": (dx, dx),
            p + "attn.w_e": (de, dx),
            p + "attn.w_e2": (de, dx),
            p + "film_node.w1": (dx, dg),
            p + "film_node.w2": (dx, dg),
            p + "ff_node.w1": (dg, hx), p + "ff_node.b1": (hx,),
            p + "ff_node.w2": (hx, dx), p + "ff_node.b2": (dx,),
            p + "ln_node.scale": (dx,), p + "ln_node.shift": (dx,),
            p + "edge_mix.src": (dx, de),
            p + "edge_mix.dst": (dx, de),
            p + "edge_mix.self": (de, de),
            p + "film_edge.w1": (de, dg),
            p + "film_edge.w2": (de, dg),
            p + "ff_edge.w1": (dg, he), p + "ff_edge.b1": (he,),
            p + "ff_edge.w2": (he, de), p + "ff_edge.b2": (de,),
            p + "ln_edge.scale": (de,), p + "ln_edge.shift": (de,),
            p + "pna_node.w": (4 * dx, dg),
            p + "pna_edge.w": (4 * de, dg),
            p + "ff_graph.w1": (dg, hg), p + "ff_graph.b1": (hg,),
            p + "ff_graph.w2": (hg, dg), p + "ff_graph.b2": (dg,),
        })
    shapes["head_node.w"] = (dx, a)
    shapes["head_node.b"] = (a,)
    if cfg.mode == "transformer":
        shapes["head_edge.w"] = (de, b)
        shapes["head_edge.b"] = (b,)
    else:
        shapes["link_mlp.w1"] = (2 * dx, dx)
        shapes["link_mlp.b1"] = (dx,)
        shapes["link_mlp.w2"] = (dx, b)
        shapes["link_mlp.b2"] = (b,)
    return shapes


def parameter_count(cfg: NetworkConfig) -> int:
    return sum(int(np.prod(s)) for s in parameter_shapes(cfg).values())


@dataclass
class NetworkWeights:
    """All learnable tensors, keyed and ordered by `parameter_shapes`."""

    config: NetworkConfig
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        expected = parameter_shapes(self.config)
        if list(self.tensors.keys()) != list(expected.keys()):
            raise ValueError("tensor names/order do not match the config inventory")
        for name, arr in self.tensors.items():
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            if arr.shape != expected[name]:
                raise ValueError(f"{name}: expected shape {expected[name]}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name}: non-finite entries")
            self.tensors[name] = arr


def init_network(cfg: NetworkConfig, rng: np.random.Generator) -> NetworkWeights:
    """Uniform +-1/sqrt(fan_in) weights, zero biases/shifts, unit LN scales."""
    tensors: dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith(".scale"):
            tensors[name] = np.ones(shape)
        elif len(shape) == 1:
            tensors[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    return NetworkWeights(cfg, tensors)


@dataclass(frozen=True)
class Prediction:
    """Per-node and per-query-pair class distributions."""

    node_probs: np.ndarray     # (n, a)
    query_pairs: np.ndarray    # (Q,) condensed indices, sorted
    edge_probs: np.ndarray     # (Q, b)

    def __post_init__(self):
        for name in ("node_probs", "edge_probs"):
            p = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if p.size and (np.any(p < 0) or
                           np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-6):
                raise ValueError(f"{name} rows must be probability vectors")
            p.flags.writeable = False
            object.__setattr__(self, name, p)
        q = np.ascontiguousarray(self.query_pairs, dtype=np.int64)
        q.flags.writeable = False
        object.__setattr__(self, "query_pairs", q)


def _one_hot(labels: np.ndarray, depth: int) -> np.ndarray:
    out = np.zeros((len(labels), depth))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def _film(m: Tensor, g: Tensor, w1: Tensor, w2: Tensor) -> Tensor:
    return ad.matmul(m, w1) + ad.mul(ad.matmul(m, w2), g) + g


def _ffn(x: Tensor, p: dict[str, Tensor], prefix: str) -> Tensor:
    h = ad.relu(ad.linear(x, p[prefix + ".w1"], p[prefix + ".b1"]))
    return ad.linear(h, p[prefix + ".w2"], p[prefix + ".b2"])


def _pna(x: Tensor, w: Tensor) -> Tensor:
    """cat(max, min, mean, std) over the row set, projected to graph width."""
    mean = ad.reduce_mean(x, axis=0)
    centered = ad.sub(x, ad.reshape(mean, (1, -1)))
    var = ad.reduce_mean(ad.mul(centered, centered), axis=0)
    std = ad.sqrt(ad.add(var, ad.constant(_PNA_EPS)))
    pooled = ad.concat([ad.reduce_max(x, axis=0), ad.reduce_min(x, axis=0),
                        mean, std], axis=0)
    return ad.matmul(ad.reshape(pooled, (1, -1)), w)


def _layer_inputs(cfg: NetworkConfig, mg_labels_nodes, mg_labels_edges,
                  enc: EncodedFeatures, t_norm: float):
    x_in = np.concatenate([_one_hot(mg_labels_nodes, cfg.num_node_classes),
                           enc.node_features], axis=1)
    e_in = np.concatenate([_one_hot(mg_labels_edges, cfg.num_edge_classes),
                           enc.pair_features], axis=1) \
        if len(mg_labels_edges) else np.zeros((0, cfg.edge_input_dim))
    g_in = enc.graph_features.copy()
    g_in[TIMESTEP_SLOT] = t_norm
    return x_in, e_in, g_in[None, :]


def _run_layers(p: dict[str, Tensor], cfg: NetworkConfig,
                edge_index: np.ndarray, x: Tensor, e: Tensor, g: Tensor):
    """The shared stack of attention + FiLM/FFN update layers."""
    n = x.shape[0]
    m = edge_index.shape[0]
    if m:
        ei, ej = edge_index[:, 0], edge_index[:, 1]
        recv = np.concatenate([ei, ej])      # message receiver per directed copy
        send = np.concatenate([ej, ei])
        parent = np.concatenate([np.arange(m), np.arange(m)])
    H, dh, dx = cfg.num_heads, cfg.head_dim, cfg.node_dim
    inv_sqrt_dh = 1.0 / np.sqrt(dh)
    for layer in range(cfg.num_layers):
        pre = f"layers.{layer}."
        if m:
            q = ad.matmul(x, p[pre + "attn.w_q"])
            k = ad.matmul(x, p[pre + "attn.w_k"])
            v = ad.matmul(x, p[pre + "attn.w_v"])
            e_k = ad.matmul(e, p[pre + "attn.w_e"])
            e_v = ad.matmul(e, p[pre + "attn.w_e2"])
            q_r = ad.reshape(ad.gather(q, recv), (2 * m, H, dh))
            k_s = ad.reshape(ad.add(ad.gather(k, send), ad.gather(e_k, parent)),
                             (2 * m, H, dh))
            scores = ad.mul(ad.reduce_sum(ad.mul(q_r, k_s), axis=2),
                            ad.constant(inv_sqrt_dh))
            attn = ad.segment_softmax(scores, recv, n)
            v_s = ad.reshape(ad.add(ad.gather(v, send), ad.gather(e_v, parent)),
                             (2 * m, H, dh))
            weighted = ad.mul(ad.reshape(attn, (2 * m, H, 1)), v_s)
            msg = ad.segment_sum(ad.reshape(weighted, (2 * m, dx)), recv, n)
        else:
            msg = ad.constant(np.zeros((n, dx)))
        node_f = _film(msg, g, p[pre + "film_node.w1"], p[pre + "film_node.w2"])
        x = ad.layer_norm(ad.add(x, _ffn(node_f, p, pre + "ff_node")),
                          p[pre + "ln_node.scale"], p[pre + "ln_node.shift"],
                          _LN_EPS)
        if not np.all(np.isfinite(x.value)):
            raise FloatingPointError(f"non-finite node activation at layer {layer}")
        if m:
            x_i = ad.gather(x, ei)
            x_j = ad.gather(x, ej)
            e_self = ad.matmul(e, p[pre + "edge_mix.self"])
            mix_fwd = ad.matmul(x_i, p[pre + "edge_mix.src"]) + \
                ad.matmul(x_j, p[pre + "edge_mix.dst"]) + e_self
            mix_rev = ad.matmul(x_j, p[pre + "edge_mix.src"]) + \
                ad.matmul(x_i, p[pre + "edge_mix.dst"]) + e_self
            upd_fwd = _ffn(_film(mix_fwd, g, p[pre + "film_edge.w1"],
                                 p[pre + "film_edge.w2"]), p, pre + "ff_edge")
            upd_rev = _ffn(_film(mix_rev, g, p[pre + "film_edge.w1"],
                                 p[pre + "film_edge.w2"]), p, pre + "ff_edge")
            # direction-averaged so the stored undirected row stays symmetric
            upd = ad.mul(ad.add(upd_fwd, upd_rev), ad.constant(0.5))
            e = ad.layer_norm(ad.add(e, upd), p[pre + "ln_edge.scale"],
                              p[pre + "ln_edge.shift"], _LN_EPS)
            if not np.all(np.isfinite(e.value)):
                raise FloatingPointError(f"non-finite edge activation at layer {layer}")
        pooled = _pna(x, p[pre + "pna_node.w"])
        if m:
            pooled = ad.add(pooled, _pna(e, p[pre + "pna_edge.w"]))
        g = ad.add(g, _ffn(pooled, p, pre + "ff_graph"))
    return x, e, g


def _run_transformer(p: dict[str, Tensor], cfg: NetworkConfig,
                     mg: MessageGraph, enc: EncodedFeatures, t_norm: float):
    x_in, e_in, g_in = _layer_inputs(cfg, mg.node_labels, mg.edge_labels,
                                     enc, t_norm)
    x = ad.linear(ad.constant(x_in), p["embed_node.w"], p["embed_node.b"])
    e = ad.linear(ad.constant(e_in), p["embed_edge.w"], p["embed_edge.b"])
    g = ad.linear(ad.constant(g_in), p["embed_graph.w"], p["embed_graph.b"])
    x, e, _ = _run_layers(p, cfg, mg.edge_index, x, e, g)
    node_probs = ad.softmax_rows(ad.linear(x, p["head_node.w"], p["head_node.b"]))
    qpos = mg.query_positions
    if len(qpos):
        eq = ad.gather(e, qpos)
        edge_probs = ad.softmax_rows(ad.linear(eq, p["head_edge.w"],
                                               p["head_edge.b"]))
    else:
        edge_probs = ad.constant(np.zeros((0, cfg.num_edge_classes)))
    return node_probs, edge_probs


def link_prediction_logits(weights: NetworkWeights, node_states: np.ndarray,
                           pairs_ij: np.ndarray) -> np.ndarray:
    """Symmetrized endpoint MLP: mlp(x_i, x_j) + mlp(x_j, x_i)."""
    p = weights.tensors
    xi = node_states[pairs_ij[:, 0]]
    xj = node_states[pairs_ij[:, 1]]

    def mlp(first, second):
        h = np.maximum(np.concatenate([first, second], axis=1) @ p["link_mlp.w1"]
                       + p["link_mlp.b1"], 0.0)
        return h @ p["link_mlp.w2"] + p["link_mlp.b2"]

    return mlp(xi, xj) + mlp(xj, xi)


def _link_mlp_tensors(p: dict[str, Tensor], x: Tensor,
                      pairs_ij: np.ndarray) -> Tensor:
    xi = ad.gather(x, pairs_ij[:, 0])
    xj = ad.gather(x, pairs_ij[:, 1])

    def mlp(first, second):
        h = ad.relu(ad.linear(ad.concat([first, second], axis=1),
                              p["link_mlp.w1"], p["link_mlp.b1"]))
        return ad.linear(h, p["link_mlp.w2"], p["link_mlp.b2"])

    return ad.add(mlp(xi, xj), mlp(xj, xi))


def _run_link_pred(p: dict[str, Tensor], cfg: NetworkConfig,
                   noisy: SparseGraph, query_pairs: np.ndarray,
                   enc: EncodedFeatures, t_norm: float):
    """Message passing over noisy edges only; query logits from node states."""
    x_in, e_in, g_in = _layer_inputs(cfg, noisy.node_labels, noisy.edge_labels,
                                     enc, t_norm)
    x = ad.linear(ad.constant(x_in), p["embed_node.w"], p["embed_node.b"])
    e = ad.linear(ad.constant(e_in), p["embed_edge.w"], p["embed_edge.b"])
    g = ad.linear(ad.constant(g_in), p["embed_graph.w"], p["embed_graph.b"])
    x, _, _ = _run_layers(p, cfg, noisy.edge_index, x, e, g)
    node_probs = ad.softmax_rows(ad.linear(x, p["head_node.w"], p["head_node.b"]))
    qp = np.asarray(query_pairs, dtype=np.int64)
    if len(qp):
        i, j = pair_from_index(qp, noisy.num_nodes)
        logits = _link_mlp_tensors(p, x, np.column_stack([i, j]))
        edge_probs = ad.softmax_rows(logits)
    else:
        edge_probs = ad.constant(np.zeros((0, cfg.num_edge_classes)))
    return node_probs, edge_probs


def _as_params(weights: NetworkWeights, trainable: bool) -> dict[str, Tensor]:
    make = ad.parameter if trainable else ad.constant
    return {name: make(arr) for name, arr in weights.tensors.items()}


def forward(weights: NetworkWeights, mg: MessageGraph, enc: EncodedFeatures,
            t_norm: float) -> Prediction:
    """Inference-mode forward pass of the sparse transformer."""
    if weights.config.mode != "transformer":
        raise ValueError("forward requires mode='transformer'")
    with ad.no_grad():
        p = _as_params(weights, trainable=False)
        node_probs, edge_probs = _run_transformer(p, weights.config, mg, enc,
                                                  t_norm)
    return Prediction(node_probs.value,
                      mg.pair_indices[mg.query_positions],
                      edge_probs.value)


def forward_link_pred(weights: NetworkWeights, noisy: SparseGraph,
                      query_pairs: np.ndarray, enc: EncodedFeatures,
                      t_norm: float) -> Prediction:
    """Inference-mode forward pass of the link-prediction baseline."""
    if weights.config.mode != "link_pred":
        raise ValueError("forward_link_pred requires mode='link_pred'")
    qp = np.sort(np.asarray(query_pairs, dtype=np.int64))
    with ad.no_grad():
        p = _as_params(weights, trainable=False)
        node_probs, edge_probs = _run_link_pred(p, weights.config, noisy, qp,
                                                enc, t_norm)
    return Prediction(node_probs.value, qp, edge_probs.value)


@dataclass(frozen=True)
class LossBreakdown:
    """Total objective plus its node and (rescaled) edge contributions."""

    total: float
    node_term: float
    edge_term: float
    num_clamped: int = 0


def _edge_scale(cfg_weight: float, n: int, num_queries: int) -> float:
    # c divided by the realized query fraction; equals c/lambda whenever
    # lambda * n(n-1)/2 is integral, and keeps the estimator unbiased when
    # the ceil rounding makes it fractional.
    if num_queries == 0:
        return 0.0
    return cfg_weight * num_pairs(n) / num_queries


def loss(pred: Prediction, clean: SparseGraph,
         edge_weight: float = 5.0) -> LossBreakdown:
    """Cross-entropy of the clean graph under `pred` (natural log).

    The edge sum runs over the query pairs only and is rescaled by
    c / (realized query fraction); a query pair absent from the clean edge
    list has true class 0. Probabilities are clamped at 1e-12 and the clamp
    count is reported.
    """
    node_p = pred.node_probs[np.arange(clean.num_nodes), clean.node_labels]
    edge_targets = clean.edge_label_at(pred.query_pairs)
    edge_p = pred.edge_probs[np.arange(len(pred.query_pairs)), edge_targets] \
        if len(pred.query_pairs) else np.zeros(0)
    clamped = int(np.count_nonzero(node_p <= _PROB_FLOOR) +
                  np.count_nonzero(edge_p <= _PROB_FLOOR))
    node_term = float(-np.log(np.maximum(node_p, _PROB_FLOOR)).sum())
    scale = _edge_scale(edge_weight, clean.num_nodes, len(pred.query_pairs))
    edge_term = float(scale * -np.log(np.maximum(edge_p, _PROB_FLOOR)).sum()) \
        if len(pred.query_pairs) else 0.0
    return LossBreakdown(node_term + edge_term, node_term, edge_term, clamped)


@dataclass(frozen=True)
class TrainExample:
    """One training instance: inputs plus clean-label targets."""

    message_graph: MessageGraph
    encodings: EncodedFeatures
    t_norm: float
    node_targets: np.ndarray
    edge_targets: np.ndarray            # aligned with the query positions
    noisy_graph: SparseGraph | None = None      # link_pred mode only
    query_pairs: np.ndarray | None = None       # link_pred mode only


def _loss_tensors(cfg: NetworkConfig, node_probs: Tensor, edge_probs: Tensor,
                  node_targets: np.ndarray, edge_targets: np.ndarray,
                  n: int) -> tuple[Tensor, LossBreakdown]:
    node_mask = _one_hot(node_targets, cfg.num_node_classes)
    picked_n = ad.reduce_sum(ad.mul(node_probs, ad.constant(node_mask)), axis=1)
    node_term = ad.neg(ad.reduce_sum(ad.log(ad.clip_min(picked_n, _PROB_FLOOR))))
    total = node_term
    edge_value = 0.0
    clamped = int(np.count_nonzero(picked_n.value <= _PROB_FLOOR))
    if len(edge_targets):
        edge_mask = _one_hot(edge_targets, cfg.num_edge_classes)
        picked_e = ad.reduce_sum(ad.mul(edge_probs, ad.constant(edge_mask)),
                                 axis=1)
        clamped += int(np.count_nonzero(picked_e.value <= _PROB_FLOOR))
        scale = _edge_scale(cfg.edge_loss_weight, n, len(edge_targets))
        edge_term = ad.mul(
            ad.neg(ad.reduce_sum(ad.log(ad.clip_min(picked_e, _PROB_FLOOR)))),
            ad.constant(scale))
        total = ad.add(total, edge_term)
        edge_value = float(edge_term.value)
    detail = LossBreakdown(float(total.value), float(node_term.value),
                           edge_value, clamped)
    return total, detail


def _example_loss(params: dict[str, Tensor], cfg: NetworkConfig,
                  ex: TrainExample) -> tuple[Tensor, LossBreakdown]:
    if cfg.mode == "transformer":
        node_probs, edge_probs = _run_transformer(
            params, cfg, ex.message_graph, ex.encodings, ex.t_norm)
        n = ex.message_graph.num_nodes
    else:
        node_probs, edge_probs = _run_link_pred(
            params, cfg, ex.noisy_graph, ex.query_pairs, ex.encodings,
            ex.t_norm)
        n = ex.noisy_graph.num_nodes
    return _loss_tensors(cfg, node_probs, edge_probs, ex.node_targets,
                         ex.edge_targets, n)


def gradients(weights: NetworkWeights, examples) -> tuple[dict[str, np.ndarray],
                                                          LossBreakdown]:
    """Exact reverse-mode gradients of the mean example loss."""
    cfg = weights.config
    acc = {name: np.zeros_like(arr) for name, arr in weights.tensors.items()}
    totals = np.zeros(3)
    clamped = 0
    examples = list(examples)
    for ex in examples:
        params = _as_params(weights, trainable=True)
        total, detail = _example_loss(params, cfg, ex)
        ad.backward(total)
        for name, t in params.items():
            if t.grad is not None:
                acc[name] += t.grad
        totals += (detail.total, detail.node_term, detail.edge_term)
        clamped += detail.num_clamped
    k = len(examples)
    for name in acc:
        grad = acc[name] / k
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError(f"non-finite gradient for {name}")
        acc[name] = grad
    return acc, LossBreakdown(totals[0] / k, totals[1] / k, totals[2] / k,
                              clamped)


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 2e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainState:
    """Weights plus first/second moment accumulators of the optimizer."""

    weights: NetworkWeights
    moment1: dict[str, np.ndarray]
    moment2: dict[str, np.ndarray]
    step: int = 0


def init_train_state(weights: NetworkWeights) -> TrainState:
    zeros = {name: np.zeros_like(arr) for name, arr in weights.tensors.items()}
    return TrainState(weights, zeros,
                      {name: arr.copy() for name, arr in zeros.items()})


def adamw_update(state: TrainState, grads: dict[str, np.ndarray],
                 hp: Hyperparams) -> TrainState:
    """One decoupled-weight-decay adaptive-moment step (new state, pure)."""
    step = state.step + 1
    bc1 = 1.0 - hp.beta1 ** step
    bc2 = 1.0 - hp.beta2 ** step
    new_w, new_m, new_v = {}, {}, {}
    for name, w in state.weights.tensors.items():
        g = grads[name]
        m = hp.beta1 * state.moment1[name] + (1.0 - hp.beta1) * g
        v = hp.beta2 * state.moment2[name] + (1.0 - hp.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + hp.eps)
        new_w[name] = w - hp.learning_rate * (update + hp.weight_decay * w)
        new_m[name] = m
        new_v[name] = v
    return TrainState(NetworkWeights(state.weights.config, new_w),
                      new_m, new_v, step)


def train_step(state: TrainState, examples, hp: Hyperparams
               ) -> tuple[TrainState, LossBreakdown]:
    """Gradient step on a batch of prepared examples."""
    grads, detail = gradients(state.weights, examples)
    return adamw_update(state, grads, hp), detail


# --- checkpoint serialization --------------------------------------------


def _config_blob(cfg: NetworkConfig, extras: dict | None) -> bytes:
    payload = {"network": asdict(cfg), "extras": extras or {}}
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()


def save_checkpoint(path, weights: NetworkWeights,
                    extras: dict | None = None) -> None:
    """Magic, version, config JSON, then name/shape/float64-LE per tensor."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    blob = _config_blob(weights.config, extras)
    buf.write(struct.pack("<Q", len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<Q", len(weights.tensors)))
    for name, arr in weights.tensors.items():
        nb = name.encode()
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", arr.ndim))
        for d in arr.shape:
            buf.write(struct.pack("<Q", d))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> tuple[NetworkWeights, dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    view = io.BytesIO(data)
    if view.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic string; not a checkpoint file")
    (version,) = struct.unpack("<I", view.read(4))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (blob_len,) = struct.unpack("<Q", view.read(8))
    payload = json.loads(view.read(blob_len).decode())
    cfg = NetworkConfig(**payload["network"])
    (count,) = struct.unpack("<Q", view.read(8))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", view.read(4))
        name = view.read(name_len).decode()
        (ndim,) = struct.unpack("<I", view.read(4))
        shape = tuple(struct.unpack("<Q", view.read(8))[0] for _ in range(ndim))
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(view.read(size * 8), dtype="<f8").reshape(shape)
        tensors[name] = arr.astype(np.float64)
    leftover = view.read(1)
    if leftover:
        raise CheckpointError("trailing bytes after the last tensor")
    return NetworkWeights(cfg, tensors), payload.get("extras", {})
