"""Synthetic graph generators, dataset file I/O, and corpus statistics.

The interchange format is line-delimited JSON: a header object declaring the
label spaces and format version, then one object per graph. The format is
documented in the README with a worked example.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graphs import GraphSpec, SparseGraph, num_pairs, pair_from_index

__all__ = [
    "DatasetFormatError", "LoadedDataset", "DatasetStats",
    "gen_er", "gen_sbm", "save", "load", "dataset_stats",
    "FORMAT_NAME", "FORMAT_VERSION",
]

FORMAT_NAME = "graph-dataset"
FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    """Malformed dataset file; message carries the offending line number."""


def gen_er(count: int, n_min: int, n_max: int, p: float,
           rng: np.random.Generator) -> list[SparseGraph]:
    """Erdos-Renyi graphs: every pair is an edge independently with prob p.

    Unattributed: one node class, two edge classes (vacant / present).
    """
    if not 0.0 < p < 1.0:
        raise ValueError("edge probability must lie in (0, 1)")
    if n_min > n_max or n_min < 2:
        raise ValueError("need 2 <= n_min <= n_max")
    graphs = []
    for _ in range(count):
        n = int(rng.integers(n_min, n_max + 1))
        mask = rng.random(num_pairs(n)) < p
        idx = np.flatnonzero(mask)
        i, j = pair_from_index(idx, n) if len(idx) else (idx, idx)
        graphs.append(SparseGraph(n, np.zeros(n, dtype=np.int64),
                                  np.column_stack([i, j]),
                                  np.ones(len(idx), dtype=np.int64),
                                  validate=False))
    return graphs


def gen_sbm(count: int, block_size_range: tuple[int, int],
            num_blocks_range: tuple[int, int], p_in: float, p_out: float,
            rng: np.random.Generator) -> list[SparseGraph]:
    """Stochastic block model graphs with uniform block counts and sizes."""
    if not 0.0 <= p_out < p_in <= 1.0:
        raise ValueError("need 0 <= p_out < p_in <= 1")
    lo_b, hi_b = num_blocks_range
    lo_s, hi_s = block_size_range
    if lo_b < 1 or lo_s < 1 or lo_b > hi_b or lo_s > hi_s:
        raise ValueError("invalid block count / size ranges")
    graphs = []
    for _ in range(count):
        blocks = int(rng.integers(lo_b, hi_b + 1))
        sizes = rng.integers(lo_s, hi_s + 1, size=blocks)
        membership = np.repeat(np.arange(blocks), sizes)
        n = int(sizes.sum())
        idx = np.arange(num_pairs(n))
        i, j = pair_from_index(idx, n)
        same = membership[i] == membership[j]
        probs = np.where(same, p_in, p_out)
        keep = rng.random(len(idx)) < probs
        sel = idx[keep]
        graphs.append(SparseGraph(n, np.zeros(n, dtype=np.int64),
                                  np.column_stack([i[keep], j[keep]]),
                                  np.ones(len(sel), dtype=np.int64),
                                  validate=False))
    return graphs


@dataclass(frozen=True)
class LoadedDataset:
    graphs: tuple[SparseGraph, ...]
    num_node_classes: int
    num_edge_classes: int
    header: dict


def _graph_record(g: SparseGraph, name: str | None) -> dict:
    rec = {
        "n": g.num_nodes,
        "node_labels": g.node_labels.tolist(),
        "edges": g.edge_index.tolist(),
        "edge_labels": g.edge_labels.tolist(),
    }
    if name is not None:
        rec["name"] = name
    return rec


def save(path, graphs: Sequence[SparseGraph], num_node_classes: int,
         num_edge_classes: int, header_extra: dict | None = None,
         names: Sequence[str] | None = None) -> None:
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "num_node_classes": num_node_classes,
        "num_edge_classes": num_edge_classes,
    }
    if header_extra:
        header.update(header_extra)
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
    for pos, g in enumerate(graphs):
        name = names[pos] if names is not None else None
        lines.append(json.dumps(_graph_record(g, name), sort_keys=True,
                                separators=(",", ":")))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load(path) -> LoadedDataset:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise DatasetFormatError(f"{path}: no header record (empty file)")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}:1: invalid header: {exc}") from exc
    if header.get("format") != FORMAT_NAME:
        raise DatasetFormatError(f"{path}:1: not a {FORMAT_NAME} file")
    if header.get("version") != FORMAT_VERSION:
        raise DatasetFormatError(
            f"{path}:1: unsupported format version {header.get('version')!r}")
    for key in ("num_node_classes", "num_edge_classes"):
        if not isinstance(header.get(key), int):
            raise DatasetFormatError(f"{path}:1: header missing integer {key}")
    a, b = header["num_node_classes"], header["num_edge_classes"]
    graphs = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
            g = SparseGraph(rec["n"], np.asarray(rec["node_labels"]),
                            np.asarray(rec["edges"], dtype=np.int64
                                       ).reshape(-1, 2),
                            np.asarray(rec["edge_labels"]))
        except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
            raise DatasetFormatError(f"{path}:{lineno}: bad graph record: {exc}"
                                     ) from exc
        if np.any(g.node_labels >= a) or np.any(g.edge_labels >= b):
            raise DatasetFormatError(
                f"{path}:{lineno}: label exceeds declared class count")
        graphs.append(g)
    return LoadedDataset(tuple(graphs), a, b, header)


@dataclass(frozen=True)
class DatasetStats:
    """Corpus summary: ranges, node-count histogram, and label marginals."""

    graph_count: int
    node_range: tuple[int, int]
    edge_range: tuple[int, int]
    edge_ratio_range: tuple[float, float]
    node_counts: np.ndarray          # one entry per graph
    node_marginals: np.ndarray
    edge_marginals: np.ndarray       # entry 0 from the vacant slots

    def to_graph_spec(self) -> GraphSpec:
        return GraphSpec(len(self.node_marginals), len(self.edge_marginals),
                         self.node_marginals, self.edge_marginals)

    def summary(self) -> dict:
        return {
            "graph_count": self.graph_count,
            "node_range": list(self.node_range),
            "edge_range": list(self.edge_range),
            "edge_ratio_range": [round(v, 6) for v in self.edge_ratio_range],
            "node_marginals": self.node_marginals.tolist(),
            "edge_marginals": self.edge_marginals.tolist(),
        }


def dataset_stats(graphs: Sequence[SparseGraph], num_node_classes: int,
                  num_edge_classes: int) -> DatasetStats:
    if len(graphs) == 0:
        raise ValueError("need at least one graph")
    node_counts = np.array([g.num_nodes for g in graphs], dtype=np.int64)
    edge_counts = np.array([g.num_edges for g in graphs], dtype=np.int64)
    pair_totals = np.array([num_pairs(g.num_nodes) for g in graphs],
                           dtype=np.int64)
    ratios = edge_counts / np.maximum(pair_totals, 1)
    node_hist = np.zeros(num_node_classes, dtype=np.float64)
    edge_hist = np.zeros(num_edge_classes, dtype=np.float64)
    for g in graphs:
        node_hist += np.bincount(g.node_labels, minlength=num_node_classes)
        edge_hist += np.bincount(g.edge_labels, minlength=num_edge_classes)
    edge_hist[0] = pair_totals.sum() - edge_counts.sum()
    return DatasetStats(
        graph_count=len(graphs),
        node_range=(int(node_counts.min()), int(node_counts.max())),
        edge_range=(int(edge_counts.min()), int(edge_counts.max())),
        edge_ratio_range=(float(ratios.min()), float(ratios.max())),
        node_counts=node_counts,
        node_marginals=node_hist / node_hist.sum(),
        edge_marginals=edge_hist / edge_hist.sum(),
    )
