"""Losses, metrics, and the per-task training/evaluation loops."""

import time
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from . import autograd as ag
from .autograd import Tensor
from .encodings import build_input_array, build_output_query
from .graphs import Graph, sample_negative_edges
from .model import ModelConfig, forward, decode_edges, init_params
from .optim import AdamState, adam_step, zero_grads

PROB_EPS = 1e-12


class DivergenceError(RuntimeError):
    """Raised when the training loss goes non-finite."""


@dataclass
class TrainSchedule:
    max_epochs: int = 200
    patience: int = 100
    eval_every: int = 1
    seed: int = 2025
    learning_rate: float = 1e-3
    weight_decay: float = 1e-2
    batch_size: int = 128  # graph task minibatches

    def __post_init__(self):
        if self.patience > self.max_epochs:
            raise ValueError("patience must not exceed max_epochs")


@dataclass
class RunResult:
    train_loss_curve: list
    val_metric_curve: list
    best_val_metric: float
    best_epoch: int
    test_metrics: dict
    seconds: float
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# losses

def node_ce_loss(logits: Tensor, labels, mask):
    """Mean negative log-softmax at the true class over the masked nodes."""
    mask = np.asarray(mask, dtype=np.int64)
    if mask.size == 0:
        raise ValueError("empty node mask")
    labels = np.asarray(labels, dtype=np.int64)
    lsm = ag.log_softmax(logits)
    picked = ag.slice_rows(lsm, mask)
    onehot = np.zeros(picked.shape)
    onehot[np.arange(len(mask)), labels[mask]] = 1.0
    return ag.scale(ag.mean(ag.sum_(ag.mul(picked, Tensor(onehot)), axis=1)), -1.0)


def graph_ce_loss(logits: Tensor, labels):
    """Mean negative log-softmax at the true graph label over the batch."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("empty graph batch")
    lsm = ag.log_softmax(logits)
    onehot = np.zeros(lsm.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    return ag.scale(ag.mean(ag.sum_(ag.mul(lsm, Tensor(onehot)), axis=-1)), -1.0)


def link_recon_loss(probs_pos: Tensor, probs_neg: Tensor):
    """Binary cross-entropy: ones on positives, zeros on negatives."""
    if probs_pos.data.size == 0 or probs_neg.data.size == 0:
        raise ValueError("link loss needs nonempty positive and negative sets")
    pos = ag.mean(ag.log(ag.clip(probs_pos, PROB_EPS, 1.0)))
    one = Tensor(np.ones(probs_neg.shape))
    neg = ag.mean(ag.log(ag.clip(ag.sub(one, probs_neg), PROB_EPS, 1.0)))
    return ag.scale(ag.add(pos, neg), -1.0)


# ---------------------------------------------------------------------------
# metrics (plain numpy, no tape)

def accuracy(logits, labels, mask=None):
    """Fraction of argmax hits; ties broken toward the lowest class index."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if mask is not None:
        mask = np.asarray(mask, dtype=np.int64)
        if mask.size == 0:
            raise ValueError("empty mask")
        logits, labels = logits[mask], labels[mask]
    pred = logits.argmax(axis=-1)  # numpy argmax takes the first (lowest) max
    return float((pred == labels).mean())


def roc_auc(scores, labels):
    """P(random positive outscores random negative), ties counted 0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes present")
    ranks = rankdata(scores)  # average ranks handle ties as 0.5
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(scores, labels):
    """Precision averaged at each positive's rank in descending score order."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if labels.sum() == 0:
        raise ValueError("average_precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    cum = np.cumsum(hits)
    prec = cum / np.arange(1, len(hits) + 1)
    return float(prec[hits].mean())


# ---------------------------------------------------------------------------
# helpers

def _check_finite(loss_value):
    if not np.isfinite(loss_value):
        raise DivergenceError(f"training loss diverged: {loss_value}")


def _train_step(params, loss, state):
    _check_finite(loss.item())
    zero_grads(params)
    ag.backward(loss)
    adam_step(params, state)
    return loss.item()


# ---------------------------------------------------------------------------
# task loops

def train_node(g: Graph, split, model_cfg: ModelConfig, enc_cfg: dict,
               schedule: TrainSchedule, capture_curve=True):
    """Full-graph training with early stopping on validation accuracy."""
    t0 = time.perf_counter()
    x = build_input_array(g, pe=enc_cfg.get("pe", "rwpe"), t=enc_cfg.get("t", 4))
    query = build_output_query("node", g, enc_cfg["smoothing"], model_cfg.query_dim)
    params = init_params(model_cfg, seed=schedule.seed)
    state = AdamState(params, schedule.learning_rate, schedule.weight_decay)

    losses, val_curve = [], []
    best_val, best_epoch, best_test = -1.0, -1, 0.0
    stall = 0
    for epoch in range(schedule.max_epochs):
        out = forward(params, model_cfg, x, output_query=query.values)
        loss = node_ce_loss(out.logits, g.node_labels, split.train)
        losses.append(_train_step(params, loss, state))

        if epoch % schedule.eval_every == 0:
            val_acc = accuracy(out.logits.data, g.node_labels, split.val)
            val_curve.append(val_acc)
            if val_acc > best_val:
                best_val, best_epoch = val_acc, epoch
                best_test = accuracy(out.logits.data, g.node_labels, split.test)
                stall = 0
            else:
                stall += schedule.eval_every
                if stall >= schedule.patience:
                    break

    result = RunResult(
        train_loss_curve=losses if capture_curve else [],
        val_metric_curve=val_curve if capture_curve else [],
        best_val_metric=best_val, best_epoch=best_epoch,
        test_metrics={"accuracy": best_test},
        seconds=time.perf_counter() - t0)
    result.trained_params = params  # for checkpointing; not serialized
    return result


def train_link(g: Graph, edge_split, model_cfg: ModelConfig, enc_cfg: dict,
               schedule: TrainSchedule, capture_curve=True):
    """Inner-product link prediction with per-epoch fresh training negatives.

    The input array and the smoothed output query are built from the
    training graph only, so held-out edges never leak into propagation.
    """
    t0 = time.perf_counter()
    g_train = edge_split.training_graph(g)
    x = build_input_array(g_train, pe=enc_cfg.get("pe", "rwpe"), t=enc_cfg.get("t", 4))
    query = build_output_query("link", g_train, enc_cfg["smoothing"], model_cfg.query_dim)
    params = init_params(model_cfg, seed=schedule.seed)
    state = AdamState(params, schedule.learning_rate, schedule.weight_decay)

    val_pairs = np.concatenate([edge_split.val_pos, edge_split.val_neg])
    val_labels = np.concatenate([np.ones(len(edge_split.val_pos)),
                                 np.zeros(len(edge_split.val_neg))])
    test_pairs = np.concatenate([edge_split.test_pos, edge_split.test_neg])
    test_labels = np.concatenate([np.ones(len(edge_split.test_pos)),
                                  np.zeros(len(edge_split.test_neg))])

    losses, val_curve = [], []
    best_val, best_epoch = -1.0, -1
    best_test = {"auc": 0.0, "ap": 0.0}
    stall = 0
    for epoch in range(schedule.max_epochs):
        neg = sample_negative_edges(g_train, len(edge_split.train_pos),
                                    seed=[schedule.seed, epoch])
        out = forward(params, model_cfg, x, output_query=query.values)
        p_pos = decode_edges(out.decoded, edge_split.train_pos)
        p_neg = decode_edges(out.decoded, neg)
        loss = link_recon_loss(p_pos, p_neg)
        losses.append(_train_step(params, loss, state))

        if epoch % schedule.eval_every == 0:
            val_scores = decode_edges(out.decoded, val_pairs).data
            val_auc = roc_auc(val_scores, val_labels)
            val_curve.append(val_auc)
            if val_auc > best_val:
                best_val, best_epoch = val_auc, epoch
                test_scores = decode_edges(out.decoded, test_pairs).data
                best_test = {"auc": roc_auc(test_scores, test_labels),
                             "ap": average_precision(test_scores, test_labels)}
                stall = 0
            else:
                stall += schedule.eval_every
                if stall >= schedule.patience:
                    break

    result = RunResult(
        train_loss_curve=losses if capture_curve else [],
        val_metric_curve=val_curve if capture_curve else [],
        best_val_metric=best_val, best_epoch=best_epoch,
        test_metrics=best_test,
        seconds=time.perf_counter() - t0)
    result.trained_params = params
    return result


def _pad_batch(arrays):
    """Stack (M_i, d) arrays into (B, Mmax, d) plus a (B, Mmax) key mask."""
    b = len(arrays)
    m_max = max(a.shape[0] for a in arrays)
    d = arrays[0].shape[1]
    out = np.zeros((b, m_max, d))
    mask = np.zeros((b, m_max), dtype=bool)
    for i, a in enumerate(arrays):
        out[i, :a.shape[0]] = a
        mask[i, :a.shape[0]] = True
    return out, mask


def _graph_logits(params, cfg, inputs, batch_size):
    """Batched forward over a list of per-graph input arrays -> (n, E)."""
    chunks = []
    for start in range(0, len(inputs), batch_size):
        x, mask = _pad_batch(inputs[start:start + batch_size])
        out = forward(params, cfg, x, mask=mask)
        chunks.append(ag.reshape(out.logits, (x.shape[0], cfg.num_classes)))
    if len(chunks) == 1:
        return chunks[0]
    return ag.concat_rows(chunks)


def train_graph(graphs, folds, model_cfg: ModelConfig, enc_cfg: dict,
                schedule: TrainSchedule):
    """Stratified 10-fold cross-validation; the next fold serves as validation."""
    t0 = time.perf_counter()
    inputs = [build_input_array(g, pe=enc_cfg.get("pe", "rwpe"),
                                t=enc_cfg.get("t", 64)) for g in graphs]
    labels = np.asarray([g.graph_label for g in graphs])

    fold_accs, fold_results = [], []
    for fold in range(folds.k):
        test_idx = folds.fold_indices(fold)
        val_idx = folds.fold_indices((fold + 1) % folds.k)
        train_idx = np.setdiff1d(np.arange(len(graphs)),
                                 np.concatenate([test_idx, val_idx]))
        # size-sorted minibatches keep padding small
        train_idx = train_idx[np.argsort([inputs[i].shape[0] for i in train_idx],
                                         kind="stable")]

        params = init_params(model_cfg, seed=schedule.seed + fold)
        state = AdamState(params, schedule.learning_rate, schedule.weight_decay)

        best_val, best_epoch, best_test = -1.0, -1, 0.0
        stall = 0
        losses, val_curve = [], []
        for epoch in range(schedule.max_epochs):
            epoch_loss = 0.0
            for start in range(0, len(train_idx), schedule.batch_size):
                idx = train_idx[start:start + schedule.batch_size]
                x, mask = _pad_batch([inputs[i] for i in idx])
                out = forward(params, model_cfg, x, mask=mask)
                logits = ag.reshape(out.logits, (len(idx), model_cfg.num_classes))
                loss = graph_ce_loss(logits, labels[idx])
                epoch_loss += _train_step(params, loss, state) * len(idx)
            losses.append(epoch_loss / len(train_idx))

            if epoch % schedule.eval_every == 0:
                val_logits = _graph_logits(params, model_cfg,
                                           [inputs[i] for i in val_idx],
                                           schedule.batch_size)
                val_acc = accuracy(val_logits.data, labels[val_idx])
                val_curve.append(val_acc)
                if val_acc > best_val:
                    best_val, best_epoch = val_acc, epoch
                    test_logits = _graph_logits(params, model_cfg,
                                                [inputs[i] for i in test_idx],
                                                schedule.batch_size)
                    best_test = accuracy(test_logits.data, labels[test_idx])
                    stall = 0
                else:
                    stall += schedule.eval_every
                    if stall >= schedule.patience:
                        break

        fold_accs.append(best_test)
        fold_results.append(RunResult(
            train_loss_curve=losses, val_metric_curve=val_curve,
            best_val_metric=best_val, best_epoch=best_epoch,
            test_metrics={"accuracy": best_test}, seconds=0.0))

    fold_accs = np.asarray(fold_accs)
    return RunResult(
        train_loss_curve=[], val_metric_curve=[],
        best_val_metric=float(np.mean([r.best_val_metric for r in fold_results])),
        best_epoch=-1,
        test_metrics={"accuracy_mean": float(fold_accs.mean()),
                      "accuracy_std": float(fold_accs.std()),
                      "per_fold": [float(a) for a in sorted(fold_accs)]},
        seconds=time.perf_counter() - t0)
