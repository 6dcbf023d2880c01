import json
import os

import numpy as np
import pytest

from graph_perceiver import Graph
from graph_perceiver.autograd import Tensor, backward


def random_graph(rng, m, p):
    """Erdos-Renyi graph on m nodes with edge probability p."""
    edges = [(u, v) for u in range(m) for v in range(u + 1, m) if rng.random() < p]
    return Graph(m, np.asarray(edges, dtype=np.int64).reshape(-1, 2))


def finite_diff(f, tensors, eps=1e-4):
    """Central finite differences of scalar f() w.r.t. each tensor's data."""
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f()
            flat[i] = orig - eps
            lo = f()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads


def check_gradients(make_loss, tensors, eps=1e-4, rtol=1e-4):
    """Assert analytic gradients match central differences."""
    for t in tensors:
        t.grad = None
    loss = make_loss()
    backward(loss)
    numeric = finite_diff(lambda: make_loss().item(), tensors, eps=eps)
    for t, num in zip(tensors, numeric):
        ana = t.grad if t.grad is not None else np.zeros_like(t.data)
        np.testing.assert_allclose(ana, num, atol=rtol, rtol=rtol,
                                   err_msg="analytic vs finite-difference mismatch")


def permute_graph(g, perm):
    """Relabel nodes by perm (new id = perm[old id])."""
    perm = np.asarray(perm)
    edges = perm[g.edges]
    inv = np.argsort(perm)
    feats = g.features[inv] if g.features is not None else None
    labels = g.node_labels[inv] if g.node_labels is not None else None
    return Graph(g.num_nodes, edges, features=feats, node_labels=labels,
                 graph_label=g.graph_label)


def write_portable(dir_path, graph, meta, fixed_split=None):
    os.makedirs(dir_path, exist_ok=True)
    with open(os.path.join(dir_path, "meta.json"), "w") as f:
        json.dump(meta, f)
    with open(os.path.join(dir_path, "edges.tsv"), "w") as f:
        for u, v in graph.edges:
            f.write(f"{u}\t{v}\n")
    if graph.features is not None:
        np.savetxt(os.path.join(dir_path, "features.csv"), graph.features,
                   delimiter=",", fmt="%.17g")
    if graph.node_labels is not None:
        np.savetxt(os.path.join(dir_path, "labels.csv"), graph.node_labels, fmt="%d")
    if fixed_split is not None:
        with open(os.path.join(dir_path, "splits.json"), "w") as f:
            json.dump({"fixed": {k: [int(i) for i in v]
                                 for k, v in fixed_split.items()}}, f)


def make_sbm_dataset(seed=0, m_per_class=30, n_classes=2, p_in=0.25, p_out=0.02,
                     flip=0.3):
    """Small stochastic block model with noisy one-hot class features.

    Smoothing the features over the community structure recovers the labels,
    so models with a smoothed output query should separate classes easily.
    """
    rng = np.random.default_rng(seed)
    m = m_per_class * n_classes
    labels = np.repeat(np.arange(n_classes), m_per_class)
    edges = []
    for u in range(m):
        for v in range(u + 1, m):
            p = p_in if labels[u] == labels[v] else p_out
            if rng.random() < p:
                edges.append((u, v))
    feats = np.zeros((m, n_classes))
    shown = np.where(rng.random(m) < flip,
                     rng.integers(0, n_classes, size=m), labels)
    feats[np.arange(m), shown] = 1.0
    feats += 0.05 * rng.standard_normal(feats.shape)
    return Graph(m, edges, features=feats, node_labels=labels)


def sbm_fixed_split(graph, rng_seed=0, train_per_class=5, n_val=15, n_test=20):
    rng = np.random.default_rng(rng_seed)
    labels = graph.node_labels
    train = []
    for c in np.unique(labels):
        train.extend(rng.choice(np.flatnonzero(labels == c), train_per_class,
                                replace=False))
    rest = rng.permutation(np.setdiff1d(np.arange(graph.num_nodes), train))
    return {"train": sorted(int(i) for i in train),
            "val": sorted(int(i) for i in rest[:n_val]),
            "test": sorted(int(i) for i in rest[n_val:n_val + n_test])}


@pytest.fixture
def sbm_portable_dir(tmp_path):
    g = make_sbm_dataset(seed=7)
    meta = {"name": "sbm2", "num_nodes": g.num_nodes,
            "num_features": g.features.shape[1], "num_classes": 2, "task": "node"}
    d = tmp_path / "sbm2"
    write_portable(str(d), g, meta, fixed_split=sbm_fixed_split(g))
    return str(d)


def dataset_root():
    """Real benchmark datasets, if the user has placed them (see README)."""
    return os.environ.get("GPIO_DATA_DIR", os.path.join(os.path.dirname(__file__),
                                                        "..", "data"))


def require_dataset(*parts):
    path = os.path.join(dataset_root(), *parts)
    if not os.path.exists(path):
        pytest.skip(f"benchmark dataset not present: {path} "
                    "(place it per README to run this criterion)")
    return path
