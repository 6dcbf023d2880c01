"""The latent-bottleneck attention network.

Pipeline: encoder cross-attention (latent queries attend over the input
array), a stack of latent self-attention blocks, decoder cross-attention
(the task-shaped output query attends over the final latent), and an
optional linear logits layer. All blocks are pre-norm residual attention
followed by a GELU MLP, operating on batched (B, rows, dim) tensors so
variable-size graphs can be padded and key-masked.
"""

import json
from dataclasses import dataclass, asdict, field
from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor


@dataclass
class ModelConfig:
    task: str                      # node | link | graph
    input_dim: int
    query_dim: int
    num_classes: int = 0
    latent_length: int = 16
    latent_dim: int = 64
    mhca_heads: int = 8
    mhca_head_dim: int = 32
    mhsa_heads: int = 8
    mhsa_head_dim: int = 32
    depth: int = 1
    decoder_out_dim: int = 0       # 0 = resolve default below
    use_first_layer_norm: bool = True
    mlp_mult: int = 1

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        for f in ("mhca_heads", "mhca_head_dim", "mhsa_heads", "mhsa_head_dim"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be >= 1")
        if self.task not in ("node", "link", "graph"):
            raise ValueError(f"unknown task: {self.task}")
        if self.decoder_out_dim == 0:
            if self.task == "link":
                self.decoder_out_dim = min(self.mhca_heads * self.mhca_head_dim, 256)
            else:
                self.decoder_out_dim = self.query_dim
        if self.task != "link" and self.num_classes < 1:
            raise ValueError(f"{self.task} task needs num_classes >= 1")


@dataclass
class ModelOutput:
    decoded: Tensor                 # (B, Q, decoder_out_dim)
    logits: Optional[Tensor]        # (B, Q, E) when the task has a logits layer
    attention_maps: Optional[list] = None  # head-averaged encoder weights, (B, N, M)


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(cfg: ModelConfig, seed=0):
    """Named parameter dict. Glorot-uniform projections, zero biases,
    0.02-scaled normals for the latent and the learnable output query."""
    rng = np.random.default_rng(seed)
    p = {}

    def param(name, data):
        p[name] = Tensor(data, requires_grad=True)

    def norm(prefix, dim):
        param(f"{prefix}.gain", np.ones(dim))
        param(f"{prefix}.bias", np.zeros(dim))

    def attention(prefix, q_dim, kv_dim, heads, head_dim, out_dim):
        proj = heads * head_dim
        norm(f"{prefix}.q_norm", q_dim)
        norm(f"{prefix}.kv_norm", kv_dim)
        param(f"{prefix}.wq", _glorot(rng, q_dim, proj))
        param(f"{prefix}.wk", _glorot(rng, kv_dim, proj))
        param(f"{prefix}.wv", _glorot(rng, kv_dim, proj))
        param(f"{prefix}.wo", _glorot(rng, proj, out_dim))
        param(f"{prefix}.bo", np.zeros(out_dim))
        hidden = out_dim * cfg.mlp_mult
        norm(f"{prefix}.mlp_norm", out_dim)
        param(f"{prefix}.mlp.w1", _glorot(rng, out_dim, hidden))
        param(f"{prefix}.mlp.b1", np.zeros(hidden))
        param(f"{prefix}.mlp.w2", _glorot(rng, hidden, out_dim))
        param(f"{prefix}.mlp.b2", np.zeros(out_dim))

    param("latent", rng.standard_normal((cfg.latent_length, cfg.latent_dim)) * 0.02)
    attention("enc", cfg.latent_dim, cfg.input_dim,
              cfg.mhca_heads, cfg.mhca_head_dim, cfg.latent_dim)
    for i in range(cfg.depth):
        attention(f"sa{i}", cfg.latent_dim, cfg.latent_dim,
                  cfg.mhsa_heads, cfg.mhsa_head_dim, cfg.latent_dim)
    attention("dec", cfg.query_dim, cfg.latent_dim,
              cfg.mhca_heads, cfg.mhca_head_dim, cfg.decoder_out_dim)
    if cfg.task == "graph":
        param("out_query", rng.standard_normal((1, cfg.query_dim)) * 0.02)
    if cfg.task != "link":
        param("logits.w", _glorot(rng, cfg.decoder_out_dim, cfg.num_classes))
        param("logits.b", np.zeros(cfg.num_classes))
    return p


def _split_heads(x, heads, head_dim):
    # (B, n, heads*head_dim) -> (B, heads, n, head_dim)
    b, n, _ = x.shape
    return ag.permute(ag.reshape(x, (b, n, heads, head_dim)), (0, 2, 1, 3))


def _merge_heads(x):
    # (B, heads, n, head_dim) -> (B, n, heads*head_dim)
    b, h, n, d = x.shape
    return ag.reshape(ag.permute(x, (0, 2, 1, 3)), (b, n, h * d))


def attention_block(prefix, params, query, keys_values, heads, head_dim,
                    mask=None, normalize_kv=True, capture=None):
    """Pre-norm multi-head attention + GELU MLP, both with residuals.

    ``mask`` is a (B, n_kv) boolean; False key rows get zero weight. The
    attention residual is skipped when the output width differs from the
    query width (decoder with a reprojected output dimension).
    """
    if mask is not None and mask.shape[-1] > keys_values.shape[-2]:
        raise ag.ShapeError("mask longer than the key axis")
    q_in = ag.layer_norm(query, params[f"{prefix}.q_norm.gain"],
                         params[f"{prefix}.q_norm.bias"])
    kv_in = keys_values
    if normalize_kv:
        kv_in = ag.layer_norm(keys_values, params[f"{prefix}.kv_norm.gain"],
                              params[f"{prefix}.kv_norm.bias"])

    q = _split_heads(ag.matmul(q_in, params[f"{prefix}.wq"]), heads, head_dim)
    k = _split_heads(ag.matmul(kv_in, params[f"{prefix}.wk"]), heads, head_dim)
    v = _split_heads(ag.matmul(kv_in, params[f"{prefix}.wv"]), heads, head_dim)

    scores = ag.scale(ag.matmul(q, ag.transpose(k)), 1.0 / np.sqrt(head_dim))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)[:, None, None, :]
    weights = ag.softmax(scores, mask=mask)
    if capture is not None:
        capture.append(weights.data.mean(axis=1))  # head-averaged (B, n_q, n_kv)

    attended = ag.add(ag.matmul(_merge_heads(ag.matmul(weights, v)),
                                params[f"{prefix}.wo"]),
                      params[f"{prefix}.bo"])

    out_dim = attended.shape[-1]
    x = ag.add(attended, query) if out_dim == query.shape[-1] else attended

    h = ag.layer_norm(x, params[f"{prefix}.mlp_norm.gain"],
                      params[f"{prefix}.mlp_norm.bias"])
    h = ag.gelu(ag.add(ag.matmul(h, params[f"{prefix}.mlp.w1"]),
                       params[f"{prefix}.mlp.b1"]))
    h = ag.add(ag.matmul(h, params[f"{prefix}.mlp.w2"]), params[f"{prefix}.mlp.b2"])
    return ag.add(x, h)


def multi_head_cross_attention(prefix, params, query, keys_values, heads, head_dim,
                               mask=None, normalize_kv=True, capture=None):
    return attention_block(prefix, params, query, keys_values, heads, head_dim,
                           mask=mask, normalize_kv=normalize_kv, capture=capture)


def multi_head_self_attention_block(prefix, params, latent, heads, head_dim):
    return attention_block(prefix, params, latent, latent, heads, head_dim)


def forward(params, cfg: ModelConfig, input_array, output_query=None,
            mask=None, capture_attention=False):
    """Full pass: latent <- MHCA(latent, input); depth x MHSA; decoded <-
    MHCA(query, latent); logits when the task uses them.

    ``input_array``: (M, C+t) array or (B, Mmax, C+t) padded batch with
    ``mask`` (B, Mmax). ``output_query``: (M, D_q) array for node/link; None
    for the graph task (the learnable query parameter is used).
    """
    x = np.asarray(input_array, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    b = x.shape[0]
    if x.shape[-1] != cfg.input_dim:
        raise ag.ShapeError(f"input width {x.shape[-1]} != configured {cfg.input_dim}")
    x = Tensor(x)

    latent = ag.broadcast_to(
        ag.reshape(params["latent"], (1,) + params["latent"].shape),
        (b,) + params["latent"].shape)

    maps = [] if capture_attention else None
    latent = multi_head_cross_attention(
        "enc", params, latent, x, cfg.mhca_heads, cfg.mhca_head_dim,
        mask=mask, normalize_kv=cfg.use_first_layer_norm, capture=maps)
    for i in range(cfg.depth):
        latent = multi_head_self_attention_block(
            f"sa{i}", params, latent, cfg.mhsa_heads, cfg.mhsa_head_dim)

    if cfg.task == "graph":
        oq = ag.broadcast_to(
            ag.reshape(params["out_query"], (1, 1, cfg.query_dim)),
            (b, 1, cfg.query_dim))
    else:
        oq = np.asarray(output_query, dtype=np.float64)
        if oq.ndim == 2:
            oq = oq[None]
        if oq.shape[-1] != cfg.query_dim:
            raise ag.ShapeError(
                f"output query width {oq.shape[-1]} != configured {cfg.query_dim}")
        oq = Tensor(oq)

    decoded = multi_head_cross_attention(
        "dec", params, oq, latent, cfg.mhca_heads, cfg.mhca_head_dim)

    logits = None
    if cfg.task != "link":
        logits = ag.add(ag.matmul(decoded, params["logits.w"]), params["logits.b"])

    if squeeze:
        decoded = ag.reshape(decoded, decoded.shape[1:])
        if logits is not None:
            logits = ag.reshape(logits, logits.shape[1:])
    return ModelOutput(decoded=decoded, logits=logits, attention_maps=maps)


def decode_edges(decoded: Tensor, pairs):
    """Inner-product edge decoder: sigmoid(z_u . z_v) per pair."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    zu = ag.slice_rows(decoded, pairs[:, 0])
    zv = ag.slice_rows(decoded, pairs[:, 1])
    return ag.sigmoid(ag.sum_(ag.mul(zu, zv), axis=1))


# ---------------------------------------------------------------------------
# checkpoints: single .npz with a JSON config echo plus named float64 tensors

def save_checkpoint(path, cfg: ModelConfig, params, extra=None):
    arrays = {f"param/{k}": v.data for k, v in params.items()}
    arrays["__config__"] = np.frombuffer(
        json.dumps(asdict(cfg), sort_keys=True).encode(), dtype=np.uint8)
    arrays["__extra__"] = np.frombuffer(
        json.dumps(extra or {}, sort_keys=True).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path, with_extra=False):
    with np.load(path) as z:
        cfg = ModelConfig(**json.loads(bytes(z["__config__"]).decode()))
        extra = json.loads(bytes(z["__extra__"]).decode()) if "__extra__" in z.files else {}
        params = {k[len("param/"):]: Tensor(z[k], requires_grad=True)
                  for k in z.files if k.startswith("param/")}
    if with_extra:
        return cfg, params, extra
    return cfg, params
