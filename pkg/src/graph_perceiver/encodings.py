"""Positional encodings and smoothing-based output queries.

RWPE column k holds the k+1-step return probability diag(R^{k+1}) of the
walk operator R = A D^{-1}. Smoothing propagates node features with the
symmetric self-loop normalized adjacency, either plainly (SGC) or with a
teleport mix-back (APPNP). Both are computed once per dataset, outside the
training loop.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .graphs import Graph, DatasetError, normalized_adjacency, random_walk_operator


@dataclass
class SmoothingConfig:
    method: str = "none"       # sgc | appnp | none
    L: int = 0
    alpha: Optional[float] = None  # appnp only

    def __post_init__(self):
        if self.method not in ("sgc", "appnp", "none"):
            raise ValueError(f"unknown smoothing method: {self.method}")
        if self.L < 0:
            raise ValueError("smoothing depth L must be >= 0")
        if (self.method == "appnp") != (self.alpha is not None):
            raise ValueError("alpha must be present iff method == 'appnp'")
        if self.alpha is not None and not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


@dataclass
class OutputQuery:
    values: Optional[np.ndarray]  # None for the learnable graph-task query
    learnable: bool
    task: str
    dim: int


def compute_rwpe(g: Graph, t, batch_size=512):
    """M x t return probabilities, column k = diag(R^{k+1}).

    Computed by pushing indicator-column batches through t sparse products;
    dense powers of R are never formed. Isolated nodes get zero rows.
    """
    if t < 1:
        raise ValueError("RWPE needs t >= 1; use pe='none' to disable")
    r = random_walk_operator(g)
    m = g.num_nodes
    out = np.zeros((m, t))
    for start in range(0, m, batch_size):
        cols = np.arange(start, min(start + batch_size, m))
        x = np.zeros((m, len(cols)))
        x[cols, np.arange(len(cols))] = 1.0
        for k in range(t):
            x = r @ x
            out[cols, k] = x[cols, np.arange(len(cols))]
    return out


def sgc_smooth(X, g: Graph, L):
    """(D̃^{-1/2} Ã D̃^{-1/2})^L X via L sparse-dense products; L=0 is identity."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] != g.num_nodes:
        raise DatasetError(f"feature rows {X.shape[0]} != num_nodes {g.num_nodes}")
    if L < 0:
        raise ValueError("L must be >= 0")
    p = normalized_adjacency(g)
    out = X.copy()
    for _ in range(L):
        out = p @ out
    return out


def appnp_smooth(X, g: Graph, L, alpha):
    """Personalized-PageRank propagation:
    X^(l) = (1-a) P X^(l-1) + a X^(0), returning X^(L)."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] != g.num_nodes:
        raise DatasetError(f"feature rows {X.shape[0]} != num_nodes {g.num_nodes}")
    if L < 0:
        raise ValueError("L must be >= 0")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    p = normalized_adjacency(g)
    x0 = X.copy()
    out = X.copy()
    for _ in range(L):
        out = (1.0 - alpha) * (p @ out) + alpha * x0
    return out


def smooth(X, g: Graph, cfg: SmoothingConfig):
    if cfg.method == "none":
        return np.asarray(X, dtype=np.float64).copy()
    if cfg.method == "sgc":
        return sgc_smooth(X, g, cfg.L)
    return appnp_smooth(X, g, cfg.L, cfg.alpha)


def fourier_pe(g: Graph, t):
    """Sinusoids of the canonical node index i/M at t/2 geometric frequencies.

    Ablation baseline only: depends on node ordering, hence not
    permutation-equivariant.
    """
    if t % 2 != 0:
        raise ValueError("fourier_pe needs an even t")
    m = g.num_nodes
    pos = np.arange(m) / max(m, 1)
    n_freq = t // 2
    freqs = np.geomspace(1.0, max(m / 2.0, 2.0), n_freq)
    out = np.empty((m, t))
    out[:, 0::2] = np.sin(2.0 * np.pi * pos[:, None] * freqs[None, :])
    out[:, 1::2] = np.cos(2.0 * np.pi * pos[:, None] * freqs[None, :])
    return out


def build_input_array(g: Graph, pe="rwpe", t=4):
    """[X | PE] column concatenation; PE alone for featureless graphs."""
    if pe == "none":
        if g.features is None:
            raise DatasetError("pe='none' requires node features")
        return g.features.copy()
    if pe == "rwpe":
        enc = compute_rwpe(g, t)
    elif pe == "fourier":
        enc = fourier_pe(g, t)
    else:
        raise ValueError(f"unknown positional encoding: {pe}")
    if g.features is None:
        return enc
    return np.concatenate([g.features, enc], axis=1)


def build_output_query(task, g: Graph, smoothing: SmoothingConfig, d_q):
    """Task-shaped decoder query: smoothed features (node/link) or a
    learnable 1 x d_q parameter (graph)."""
    if task == "graph":
        return OutputQuery(values=None, learnable=True, task=task, dim=d_q)
    if task not in ("node", "link"):
        raise ValueError(f"unknown task: {task}")
    if g.features is None:
        raise DatasetError(f"{task} task output query requires node features")
    if d_q != g.features.shape[1]:
        raise ValueError(
            f"output query dim {d_q} must equal feature dim {g.features.shape[1]}")
    return OutputQuery(values=smooth(g.features, g, smoothing),
                       learnable=False, task=task, dim=d_q)
