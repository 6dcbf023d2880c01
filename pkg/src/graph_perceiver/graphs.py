"""Graph data model, dataset ingestion, splits, and sparse graph operators.

Two on-disk layouts are understood: the portable single-graph directory
(meta.json + edges.tsv + optional features/labels/splits) and the TU
plain-text multi-graph layout. Adjacency is kept as an edge list; sparse
CSR operators are built on demand and never densified.
"""

import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp


class DatasetError(ValueError):
    """Raised for malformed or inconsistent dataset files."""


@dataclass
class Graph:
    """Undirected graph: deduplicated edge pairs with optional features/labels."""
    num_nodes: int
    edges: np.ndarray                      # (E, 2) int, canonical u < v
    features: Optional[np.ndarray] = None  # (M, C) float64
    node_labels: Optional[np.ndarray] = None
    graph_label: Optional[int] = None

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.edges.size:
            if self.edges.min() < 0 or self.edges.max() >= self.num_nodes:
                raise DatasetError("edge endpoint out of range")
            u = np.minimum(self.edges[:, 0], self.edges[:, 1])
            v = np.maximum(self.edges[:, 0], self.edges[:, 1])
            if np.any(u == v):
                raise DatasetError("self-loops are not allowed in the edge list")
            order = np.lexsort((v, u))
            self.edges = np.stack([u, v], axis=1)[order]
            if len(np.unique(self.edges, axis=0)) != len(self.edges):
                raise DatasetError("duplicate undirected edge")
        if self.features is not None:
            self.features = np.asarray(self.features, dtype=np.float64)
            if self.features.shape[0] != self.num_nodes:
                raise DatasetError(
                    f"feature rows {self.features.shape[0]} != num_nodes {self.num_nodes}")
        if self.node_labels is not None:
            self.node_labels = np.asarray(self.node_labels, dtype=np.int64)

    @property
    def num_edges(self):
        return len(self.edges)

    def degrees(self):
        d = np.zeros(self.num_nodes, dtype=np.float64)
        if self.edges.size:
            np.add.at(d, self.edges[:, 0], 1.0)
            np.add.at(d, self.edges[:, 1], 1.0)
        return d

    def adjacency(self):
        """Symmetric binary adjacency as CSR (no self-loops)."""
        e = self.edges
        row = np.concatenate([e[:, 0], e[:, 1]])
        col = np.concatenate([e[:, 1], e[:, 0]])
        data = np.ones(len(row), dtype=np.float64)
        return sp.csr_matrix((data, (row, col)), shape=(self.num_nodes, self.num_nodes))

    def edge_set(self):
        return {(int(u), int(v)) for u, v in self.edges}


@dataclass
class NodeSplit:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    mode: str = "fixed"  # fixed | random

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=np.int64)
        self.val = np.asarray(self.val, dtype=np.int64)
        self.test = np.asarray(self.test, dtype=np.int64)
        pools = [set(self.train), set(self.val), set(self.test)]
        if (pools[0] & pools[1]) or (pools[0] & pools[2]) or (pools[1] & pools[2]):
            raise DatasetError("node split sets overlap")


@dataclass
class EdgeSplit:
    train_pos: np.ndarray
    val_pos: np.ndarray
    test_pos: np.ndarray
    val_neg: np.ndarray
    test_neg: np.ndarray

    def training_graph(self, g: Graph) -> Graph:
        """The graph rebuilt from train positives only (no held-out leakage)."""
        return Graph(g.num_nodes, self.train_pos, features=g.features,
                     node_labels=g.node_labels, graph_label=g.graph_label)


@dataclass
class FoldPlan:
    """k disjoint, label-stratified fold assignments over graphs."""
    assignments: np.ndarray  # fold id per graph
    k: int = 10

    def fold_indices(self, fold):
        return np.flatnonzero(self.assignments == fold)


@dataclass
class PortableDataset:
    meta: dict
    graph: Graph
    fixed_split: Optional[NodeSplit] = None


# ---------------------------------------------------------------------------
# portable single-graph format

def load_portable(dir_path):
    """Load a portable dataset directory (see repo README for the contract)."""
    meta_path = os.path.join(dir_path, "meta.json")
    edges_path = os.path.join(dir_path, "edges.tsv")
    for p in (meta_path, edges_path):
        if not os.path.exists(p):
            raise DatasetError(f"missing required file: {p}")
    with open(meta_path) as f:
        meta = json.load(f)
    m = int(meta["num_nodes"])

    edges = []
    with open(edges_path) as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DatasetError(f"{edges_path}:{ln}: expected 'u\\tv'")
            edges.append((int(parts[0]), int(parts[1])))
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)

    features = None
    feat_path = os.path.join(dir_path, "features.csv")
    if os.path.exists(feat_path):
        features = np.loadtxt(feat_path, delimiter=",", dtype=np.float64, ndmin=2)
        if features.shape != (m, int(meta["num_features"])):
            raise DatasetError(
                f"features.csv shape {features.shape} does not match meta "
                f"({m}, {meta['num_features']})")

    labels = None
    lab_path = os.path.join(dir_path, "labels.csv")
    if os.path.exists(lab_path):
        labels = np.loadtxt(lab_path, dtype=np.int64, ndmin=1)
        if labels.shape[0] != m:
            raise DatasetError(f"labels.csv has {labels.shape[0]} rows, expected {m}")

    graph = Graph(m, edges, features=features, node_labels=labels)

    fixed = None
    split_path = os.path.join(dir_path, "splits.json")
    if os.path.exists(split_path):
        with open(split_path) as f:
            s = json.load(f)["fixed"]
        fixed = NodeSplit(s["train"], s["val"], s["test"], mode="fixed")
        for part in (fixed.train, fixed.val, fixed.test):
            if part.size and part.max() >= m:
                raise DatasetError("split index out of range")
    return PortableDataset(meta, graph, fixed)


# ---------------------------------------------------------------------------
# TU plain-text multi-graph format

def load_tu(dir_path, name):
    """Load a TU benchmark directory into per-graph Graph objects.

    Node labels, when present, are one-hot encoded as features. Featureless
    datasets get ``features=None`` (input arrays then carry PE columns only).
    """
    def path(suffix):
        return os.path.join(dir_path, f"{name}_{suffix}.txt")

    for suffix in ("A", "graph_indicator", "graph_labels"):
        if not os.path.exists(path(suffix)):
            raise DatasetError(f"missing TU file: {path(suffix)}")

    indicator = np.loadtxt(path("graph_indicator"), dtype=np.int64, ndmin=1)
    graph_labels = np.loadtxt(path("graph_labels"), dtype=np.int64, ndmin=1)
    n_graphs = len(graph_labels)
    if indicator.min() != 1 or indicator.max() != n_graphs:
        raise DatasetError("graph_indicator ids must span 1..num_graphs")
    if len(np.unique(indicator)) != n_graphs:
        raise DatasetError("graph_indicator has gaps")

    # remap arbitrary label values to 0..K-1 in sorted order
    classes = np.unique(graph_labels)
    graph_labels = np.searchsorted(classes, graph_labels)

    pairs = np.loadtxt(path("A"), delimiter=",", dtype=np.int64, ndmin=2)
    if pairs.size and (pairs.min() < 1 or pairs.max() > len(indicator)):
        raise DatasetError("dangling node id in adjacency file")

    node_labels = None
    if os.path.exists(path("node_labels")):
        node_labels = np.loadtxt(path("node_labels"), dtype=np.int64, ndmin=1)
        if len(node_labels) != len(indicator):
            raise DatasetError("node_labels length mismatch")

    # global -> (graph, local) maps
    first_node = np.zeros(n_graphs + 1, dtype=np.int64)
    counts = np.bincount(indicator - 1, minlength=n_graphs)
    first_node[1:] = np.cumsum(counts)
    local_id = np.arange(len(indicator)) - first_node[indicator - 1]

    per_graph_edges = [set() for _ in range(n_graphs)]
    for a, b in pairs:
        ga, gb = indicator[a - 1], indicator[b - 1]
        if ga != gb:
            raise DatasetError(f"edge ({a},{b}) crosses graph boundary")
        u, v = int(local_id[a - 1]), int(local_id[b - 1])
        if u == v:
            continue
        per_graph_edges[ga - 1].add((min(u, v), max(u, v)))

    n_node_classes = int(node_labels.max()) + 1 if node_labels is not None else 0
    graphs = []
    for gi in range(n_graphs):
        m = int(counts[gi])
        feats = None
        if node_labels is not None:
            lab = node_labels[first_node[gi]:first_node[gi] + m]
            feats = np.zeros((m, n_node_classes))
            feats[np.arange(m), lab] = 1.0
        graphs.append(Graph(m, sorted(per_graph_edges[gi]), features=feats,
                            graph_label=int(graph_labels[gi])))
    return graphs


def save_tu(graphs, dir_path, name):
    """Re-serialize graphs into the TU layout (inverse of load_tu)."""
    os.makedirs(dir_path, exist_ok=True)
    a_lines, ind_lines, glab_lines, nlab_lines = [], [], [], []
    offset = 0
    has_node_labels = all(g.features is not None for g in graphs)
    for gi, g in enumerate(graphs):
        for u, v in g.edges:
            a_lines.append(f"{offset + u + 1}, {offset + v + 1}")
            a_lines.append(f"{offset + v + 1}, {offset + u + 1}")
        ind_lines.extend([str(gi + 1)] * g.num_nodes)
        glab_lines.append(str(g.graph_label))
        if has_node_labels:
            nlab_lines.extend(str(int(np.argmax(row))) for row in g.features)
        offset += g.num_nodes

    def write(suffix, lines):
        with open(os.path.join(dir_path, f"{name}_{suffix}.txt"), "w") as f:
            f.write("\n".join(lines) + "\n")

    write("A", a_lines)
    write("graph_indicator", ind_lines)
    write("graph_labels", glab_lines)
    if has_node_labels:
        write("node_labels", nlab_lines)


# ---------------------------------------------------------------------------
# sparse operators

def normalized_adjacency(g: Graph):
    """Symmetric self-loop normalization: D̃^{-1/2} (A + I) D̃^{-1/2}, CSR."""
    a_tilde = g.adjacency() + sp.identity(g.num_nodes, format="csr")
    d = np.asarray(a_tilde.sum(axis=1)).ravel()
    d_inv_sqrt = 1.0 / np.sqrt(d)  # self-loops guarantee d >= 1
    dm = sp.diags(d_inv_sqrt)
    return (dm @ a_tilde @ dm).tocsr()


def random_walk_operator(g: Graph):
    """Column-stochastic walk operator A D^{-1}; zero-degree columns stay zero."""
    a = g.adjacency()
    d = g.degrees()
    inv = np.zeros_like(d)
    nz = d > 0
    inv[nz] = 1.0 / d[nz]
    return (a @ sp.diags(inv)).tocsr()


# ---------------------------------------------------------------------------
# splits and sampling

def make_node_split(g: Graph, mode, seed=0, fixed: Optional[NodeSplit] = None,
                    train_per_class=20, num_val=500, num_test=1000):
    """Fixed = the Planetoid split shipped with the dataset; random = resampled
    with the same sizes (20 train nodes per class, 500 val, 1000 test)."""
    if g.node_labels is None:
        raise DatasetError("node split requires node labels")
    if mode == "fixed":
        if fixed is None:
            raise DatasetError("fixed split requested but splits.json was not loaded")
        return fixed
    if mode != "random":
        raise DatasetError(f"unknown split mode: {mode}")

    rng = np.random.default_rng(seed)
    labels = g.node_labels
    train = []
    for c in np.unique(labels):
        pool = np.flatnonzero(labels == c)
        if len(pool) < train_per_class:
            raise DatasetError(f"class {c} has fewer than {train_per_class} nodes")
        train.extend(rng.choice(pool, size=train_per_class, replace=False))
    train = np.sort(np.asarray(train, dtype=np.int64))
    rest = np.setdiff1d(np.arange(g.num_nodes), train)
    if len(rest) < num_val + num_test:
        raise DatasetError("graph too small for requested val/test sizes")
    rest = rng.permutation(rest)
    return NodeSplit(train, np.sort(rest[:num_val]),
                     np.sort(rest[num_val:num_val + num_test]), mode="random")


def make_fold_plan(graphs, k=10, seed=0):
    """Stratified k-fold assignment over graph labels."""
    labels = np.asarray([g.graph_label for g in graphs])
    rng = np.random.default_rng(seed)
    assignments = np.full(len(graphs), -1, dtype=np.int64)
    cursor = 0
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        for i, gi in enumerate(idx):
            assignments[gi] = (cursor + i) % k
        cursor += len(idx)
    return FoldPlan(assignments, k=k)


def make_edge_split(g: Graph, seed=0, val_frac=0.05, test_frac=0.10):
    """Partition edges 85/5/10 and sample equal-count val/test negatives."""
    n_edges = g.num_edges
    if n_edges < 10:
        raise DatasetError("graph too small for an edge split")
    n_val = int(round(val_frac * n_edges))
    n_test = int(round(test_frac * n_edges))
    if n_val == 0 or n_test == 0 or n_val + n_test >= n_edges:
        raise DatasetError("edge split fractions infeasible for this graph")

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_edges)
    val_pos = g.edges[perm[:n_val]]
    test_pos = g.edges[perm[n_val:n_val + n_test]]
    train_pos = g.edges[perm[n_val + n_test:]]

    existing = g.edge_set()
    val_neg = _sample_non_edges(g.num_nodes, existing, n_val, rng)
    test_neg = _sample_non_edges(g.num_nodes, existing | {tuple(e) for e in val_neg},
                                 n_test, rng)
    return EdgeSplit(train_pos, val_pos, test_pos,
                     np.asarray(val_neg), np.asarray(test_neg))


def _sample_non_edges(m, forbidden, count, rng):
    max_pairs = m * (m - 1) // 2
    if count > max_pairs - len(forbidden):
        raise DatasetError(f"cannot sample {count} non-edges: graph too dense")
    out = []
    chosen = set()
    while len(out) < count:
        n_draw = max(2 * (count - len(out)), 16)
        us = rng.integers(0, m, size=n_draw)
        vs = rng.integers(0, m, size=n_draw)
        for u, v in zip(us, vs):
            if u == v:
                continue
            e = (min(int(u), int(v)), max(int(u), int(v)))
            if e in forbidden or e in chosen:
                continue
            chosen.add(e)
            out.append(e)
            if len(out) == count:
                break
    return out


def sample_negative_edges(g: Graph, count, seed):
    """Uniform distinct non-edges; intended to be resampled each epoch."""
    if count == 0:
        return np.zeros((0, 2), dtype=np.int64)
    rng = np.random.default_rng(seed)
    return np.asarray(_sample_non_edges(g.num_nodes, g.edge_set(), count, rng),
                      dtype=np.int64)
