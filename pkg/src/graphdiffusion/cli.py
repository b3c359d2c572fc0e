"""Command-line entry point: generate-data, train, sample, eval, verify.

Configuration comes from an optional JSON file plus flag overrides (flags
win). Every command is deterministic given (config, seed), and every output
file carries the effective config hash and seed in its header. Exit codes:
0 success, 2 validation failure, 3 runtime or numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import (DatasetFormatError, dataset_stats, gen_er, gen_sbm,
                       load, save)
from .encodings import (EncodingConfig, graph_feature_dim, node_feature_dim,
                        pair_feature_dim)
from .graphs import GraphSpec
from .metrics import evaluate
from .network import (Hyperparams, NetworkConfig, load_checkpoint,
                      save_checkpoint)
from .noise import build_schedule
from .sampling import SamplerConfig, generate
from .training import TrainSettings, train_model
from .verify import run_check

__all__ = ["RunConfig", "main", "DATASET_PROFILES"]

# lambda defaults per recognized dataset profile; the *-small profiles also
# carry a synthetic generator for desk-scale runs
DATASET_PROFILES: dict[str, dict] = {
    "qm9": {"sparsity": 1.0},
    "qm9h": {"sparsity": 0.5},
    "moses": {"sparsity": 0.5},
    "planar": {"sparsity": 0.5},
    "sbm": {"sparsity": 0.25},
    "ego": {"sparsity": 0.1},
    "protein": {"sparsity": 0.1},
    "er-small": {
        "sparsity": 0.5,
        "generator": {"kind": "er", "count": 200, "n_min": 16, "n_max": 16,
                      "p": 0.15},
    },
    "sbm-small": {
        "sparsity": 0.25,
        "generator": {"kind": "sbm", "count": 200, "block_size_min": 10,
                      "block_size_max": 14, "num_blocks_min": 2,
                      "num_blocks_max": 2, "p_in": 0.3, "p_out": 0.05},
    },
}


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "run_output"
    dataset: str | None = None
    dataset_profile: str | None = None
    generator: dict | None = None
    diffusion_steps: int = 1000
    schedule: str = "cosine"
    sparsity: float = 0.5
    num_layers: int = 4
    node_dim: int = 64
    edge_dim: int = 32
    graph_dim: int = 32
    num_heads: int = 4
    mode: str = "transformer"
    edge_loss_weight: float = 5.0
    ffn_mult: int = 2
    k_eig: int = 8
    hop_cap: int = 10
    learning_rate: float = 2e-4
    weight_decay: float = 1e-4
    batch_size: int = 16
    epochs: int = 10
    augment_permutation: bool = True
    checkpoint_every: int = 0
    inference_steps: int | None = None
    num_samples: int = 64
    n_nodes: int | None = None
    sigma_degree: float = 1.0
    sigma_clustering: float = 0.1
    sigma_spectral: float = 1.0
    repeats: int = 1
    workers: int = 1

    @staticmethod
    def from_sources(config_path: str | None, overrides: dict) -> "RunConfig":
        """File values first, then profile defaults, then flag overrides."""
        known = {f.name for f in dataclasses.fields(RunConfig)}
        values: dict = {}
        if config_path:
            with open(config_path, "r", encoding="utf-8") as fh:
                file_values = json.load(fh)
            unknown = set(file_values) - known
            if unknown:
                raise ValueError(f"unknown config keys: {sorted(unknown)}")
            values.update(file_values)
        profile = overrides.get("dataset_profile") or values.get("dataset_profile")
        if profile:
            if profile not in DATASET_PROFILES:
                raise ValueError(f"unknown dataset profile {profile!r}; "
                                 f"choose from {sorted(DATASET_PROFILES)}")
            for key, val in DATASET_PROFILES[profile].items():
                values.setdefault(key, val)
        for key, val in overrides.items():
            if val is not None:
                values[key] = val
        cfg = RunConfig(**values)
        if not 0.0 < cfg.sparsity <= 1.0:
            raise ValueError("sparsity must lie in (0, 1]")
        if cfg.diffusion_steps < 1:
            raise ValueError("diffusion_steps must be >= 1")
        return cfg

    def hash(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def encoding_config(self) -> EncodingConfig:
        return EncodingConfig(k_eig=self.k_eig, hop_cap=self.hop_cap)

    def network_config(self, spec: GraphSpec) -> NetworkConfig:
        enc_cfg = self.encoding_config()
        return NetworkConfig(
            num_node_classes=spec.num_node_classes,
            num_edge_classes=spec.num_edge_classes,
            node_feature_dim=node_feature_dim(enc_cfg),
            pair_feature_dim=pair_feature_dim(enc_cfg),
            graph_feature_dim=graph_feature_dim(enc_cfg, spec),
            num_layers=self.num_layers, node_dim=self.node_dim,
            edge_dim=self.edge_dim, graph_dim=self.graph_dim,
            num_heads=self.num_heads, mode=self.mode,
            edge_loss_weight=self.edge_loss_weight, sparsity=self.sparsity,
            ffn_mult=self.ffn_mult)

    def sigmas(self) -> dict[str, float]:
        return {"degree": self.sigma_degree,
                "clustering": self.sigma_clustering,
                "spectral": self.sigma_spectral}


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(cfg: RunConfig, out: Path) -> None:
    payload = dict(dataclasses.asdict(cfg), config_hash=cfg.hash())
    (out / "effective_config.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _provenance(cfg: RunConfig) -> dict:
    return {"seed": cfg.seed, "config_hash": cfg.hash()}


def cmd_generate_data(cfg: RunConfig) -> int:
    gen = cfg.generator
    if gen is None:
        raise ValueError("generate-data needs a generator "
                         "(config key 'generator' or a *-small profile)")
    rng = np.random.default_rng(cfg.seed)
    kind = gen.get("kind")
    if kind == "er":
        graphs = gen_er(gen["count"], gen["n_min"], gen["n_max"], gen["p"], rng)
    elif kind == "sbm":
        graphs = gen_sbm(gen["count"],
                         (gen["block_size_min"], gen["block_size_max"]),
                         (gen["num_blocks_min"], gen["num_blocks_max"]),
                         gen["p_in"], gen["p_out"], rng)
    else:
        raise ValueError(f"unknown generator kind {kind!r}")
    out = _out_dir(cfg)
    _echo_config(cfg, out)
    stats = dataset_stats(graphs, 1, 2)
    path = out / "dataset.jsonl"
    save(path, graphs, 1, 2, header_extra=_provenance(cfg))
    print(json.dumps({"written": str(path), **stats.summary()}, sort_keys=True))
    return 0


def _load_dataset(cfg: RunConfig):
    if not cfg.dataset:
        raise ValueError("a dataset path is required (config key 'dataset')")
    data = load(cfg.dataset)
    stats = dataset_stats(data.graphs, data.num_node_classes,
                          data.num_edge_classes)
    return data, stats


def cmd_train(cfg: RunConfig) -> int:
    data, stats = _load_dataset(cfg)
    spec = stats.to_graph_spec()
    schedule = build_schedule(cfg.diffusion_steps, cfg.schedule)
    enc_cfg = cfg.encoding_config()
    net_cfg = cfg.network_config(spec)
    hyper = Hyperparams(learning_rate=cfg.learning_rate,
                        weight_decay=cfg.weight_decay)
    settings = TrainSettings(sparsity=cfg.sparsity, batch_size=cfg.batch_size,
                             epochs=cfg.epochs,
                             augment_permutation=cfg.augment_permutation)
    out = _out_dir(cfg)
    _echo_config(cfg, out)
    extras = {
        **_provenance(cfg),
        "diffusion_steps": cfg.diffusion_steps,
        "schedule": cfg.schedule,
        "sparsity": cfg.sparsity,
        "encodings": {"k_eig": cfg.k_eig, "hop_cap": cfg.hop_cap},
        "node_marginals": spec.node_marginals.tolist(),
        "edge_marginals": spec.edge_marginals.tolist(),
        "node_counts": stats.node_counts.tolist(),
    }
    log_path = out / "loss_log.jsonl"
    with open(log_path, "w", encoding="utf-8") as log_fh:

        def on_epoch(record: dict, live_state) -> None:
            log_fh.write(json.dumps(record, sort_keys=True) + "\n")
            log_fh.flush()
            print(f"epoch {record['epoch']}: loss {record['mean_loss']:.4f} "
                  f"(node {record['node_term']:.4f}, "
                  f"edge {record['edge_term']:.4f})")
            if cfg.checkpoint_every and \
                    record["epoch"] % cfg.checkpoint_every == 0:
                save_checkpoint(
                    out / f"checkpoint_epoch{record['epoch']}.ckpt",
                    live_state.weights, extras)

        state, logs = train_model(list(data.graphs), spec, schedule, enc_cfg,
                                  net_cfg, hyper, settings, cfg.seed,
                                  epoch_callback=on_epoch)
    ckpt = out / "checkpoint_final.ckpt"
    save_checkpoint(ckpt, state.weights, extras)
    reloaded, _ = load_checkpoint(ckpt)
    for name, arr in state.weights.tensors.items():
        if not np.array_equal(arr, reloaded.tensors[name]):
            raise FloatingPointError("checkpoint round trip mismatch")
    print(json.dumps({"checkpoint": str(ckpt), "epochs": cfg.epochs,
                      "final_loss": logs[-1]["mean_loss"]}, sort_keys=True))
    return 0


def cmd_sample(cfg: RunConfig, checkpoint: str) -> int:
    weights, extras = load_checkpoint(checkpoint)
    spec = GraphSpec(weights.config.num_node_classes,
                     weights.config.num_edge_classes,
                     np.asarray(extras["node_marginals"]),
                     np.asarray(extras["edge_marginals"]))
    schedule = build_schedule(extras["diffusion_steps"], extras["schedule"])
    enc = extras["encodings"]
    enc_cfg = EncodingConfig(k_eig=enc["k_eig"], hop_cap=enc["hop_cap"])
    steps = cfg.inference_steps or extras["diffusion_steps"]
    sampler_cfg = SamplerConfig(num_steps=extras["diffusion_steps"],
                                inference_steps=steps,
                                sparsity=cfg.sparsity, seed=cfg.seed)
    source = cfg.n_nodes if cfg.n_nodes else np.asarray(extras["node_counts"])
    graphs = generate(weights, source, sampler_cfg, schedule, spec, enc_cfg,
                      count=cfg.num_samples)
    out = _out_dir(cfg)
    _echo_config(cfg, out)
    path = out / "samples.jsonl"
    save(path, graphs, spec.num_node_classes, spec.num_edge_classes,
         header_extra={**_provenance(cfg), "inference_steps": steps,
                       "checkpoint": str(checkpoint)})
    print(json.dumps({"written": str(path), "count": len(graphs),
                      "inference_steps": steps}, sort_keys=True))
    return 0


def cmd_eval(cfg: RunConfig, generated_path: str, reference_path: str,
             train_reference_path: str | None) -> int:
    generated = load(generated_path)
    reference = load(reference_path)
    train_ref = load(train_reference_path).graphs if train_reference_path \
        else None
    report = evaluate(list(generated.graphs), list(reference.graphs),
                      list(train_ref) if train_ref else None,
                      sigmas=cfg.sigmas(), repeats=cfg.repeats)
    out = _out_dir(cfg)
    _echo_config(cfg, out)
    payload = {**_provenance(cfg), "report": json.loads(report.to_text())}
    path = out / "eval_report.json"
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    print(report.to_text())
    return 0


def cmd_verify(cfg: RunConfig, kind: str) -> int:
    result = run_check(kind, seed=cfg.seed)
    print(json.dumps(result, sort_keys=True))
    return 0 if result["passed"] else 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphdiffusion",
        description="Sparse discrete denoising diffusion for graph generation")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="RNG seed")
    parser.add_argument("--lambda", dest="sparsity", type=float,
                        help="query-edge fraction in (0, 1]")
    parser.add_argument("--steps", dest="inference_steps", type=int,
                        help="inference step count S")
    parser.add_argument("--out", dest="out_dir", help="output directory")
    parser.add_argument("--workers", type=int, help="worker count")
    parser.add_argument("--n-nodes", dest="n_nodes", type=int,
                        help="fixed node count override for sampling")
    parser.add_argument("--dataset-profile", dest="dataset_profile",
                        help=f"one of {sorted(DATASET_PROFILES)}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate-data", help="write a synthetic dataset file")
    p_train = sub.add_parser("train", help="train a denoiser on a dataset")
    p_train.add_argument("--dataset", help="dataset file path")
    p_train.add_argument("--epochs", type=int)
    p_sample = sub.add_parser("sample", help="generate graphs from a checkpoint")
    p_sample.add_argument("checkpoint")
    p_sample.add_argument("--num-samples", dest="num_samples", type=int)
    p_eval = sub.add_parser("eval", help="evaluate generated vs reference sets")
    p_eval.add_argument("generated")
    p_eval.add_argument("reference")
    p_eval.add_argument("--train-reference", dest="train_reference")
    p_verify = sub.add_parser("verify", help="run an oracle self-check")
    p_verify.add_argument("kind", choices=["noise", "lemma", "gradcheck",
                                           "loss-unbiased", "posterior"])
    return parser


_OVERRIDE_KEYS = ("seed", "sparsity", "inference_steps", "out_dir", "workers",
                  "n_nodes", "dataset_profile", "dataset", "epochs",
                  "num_samples")


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        overrides = {key: getattr(args, key, None) for key in _OVERRIDE_KEYS}
        cfg = RunConfig.from_sources(args.config, overrides)
        if args.command == "generate-data":
            return cmd_generate_data(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "sample":
            return cmd_sample(cfg, args.checkpoint)
        if args.command == "eval":
            return cmd_eval(cfg, args.generated, args.reference,
                            args.train_reference)
        if args.command == "verify":
            return cmd_verify(cfg, args.kind)
        raise ValueError(f"unknown command {args.command!r}")
    except (ValueError, DatasetFormatError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
