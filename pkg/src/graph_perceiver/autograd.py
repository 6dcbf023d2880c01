"""Dense float64 tensors with reverse-mode automatic differentiation.

Every forward op records itself on an implicit tape (the parent links of the
result tensor). ``backward`` topologically sorts the recorded ops and pushes
gradients from a scalar loss back to every tensor that requires them.
Gradients accumulate additively across fan-out.
"""

import numpy as np
from scipy.special import erf

_SQRT_2PI = np.sqrt(2.0 * np.pi)


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """A dense n-dimensional float64 value in a differentiation graph.

    ``parents`` and ``backward_fn`` are set by ops; leaf tensors have
    neither. ``backward_fn(g)`` receives the upstream gradient and returns
    one gradient array (or None) per parent.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, _parents=(), _backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._backward_fn = _backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, _wrap(other))

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward_fn):
    requires = any(p.requires_grad for p in parents)
    if not requires:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward_fn=backward_fn)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(loss):
    """Propagate d(loss)/d(tensor) into ``grad`` of every requiring tensor.

    ``loss`` must be scalar. Each node on the tape is visited exactly once,
    in reverse topological order.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = g.copy()
        else:
            node.grad = node.grad + g
        if node._backward_fn is None:
            continue
        parent_grads = node._backward_fn(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg


# ---------------------------------------------------------------------------
# elementwise / structural ops

def add(a, b):
    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _result(a.data + b.data, (a, b), bwd)


def sub(a, b):
    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return _result(a.data - b.data, (a, b), bwd)


def mul(a, b):
    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return _result(a.data * b.data, (a, b), bwd)


def scale(a, s):
    s = float(s)
    return _result(a.data * s, (a,), lambda g: (g * s,))


def matmul(a, b):
    """Matrix product; leading axes broadcast (batched matmul)."""
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} vs {b.shape}")

    def bwd(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb
    return _result(np.matmul(a.data, b.data), (a, b), bwd)


def transpose(a):
    """Swap the last two axes."""
    def bwd(g):
        return (np.swapaxes(g, -1, -2),)
    return _result(np.swapaxes(a.data, -1, -2), (a,), bwd)


def permute(a, axes):
    inv = np.argsort(axes)

    def bwd(g):
        return (np.transpose(g, inv),)
    return _result(np.transpose(a.data, axes), (a,), bwd)


def reshape(a, shape):
    orig = a.shape

    def bwd(g):
        return (g.reshape(orig),)
    return _result(a.data.reshape(shape), (a,), bwd)


def broadcast_to(a, shape):
    def bwd(g):
        return (_unbroadcast(g, a.shape),)
    return _result(np.broadcast_to(a.data, shape), (a,), bwd)


def concat_cols(a, b):
    """Concatenate along the last axis."""
    if a.data.shape[:-1] != b.data.shape[:-1]:
        raise ShapeError(f"concat_cols needs matching leading dims: {a.shape} vs {b.shape}")
    na = a.data.shape[-1]

    def bwd(g):
        return g[..., :na], g[..., na:]
    return _result(np.concatenate([a.data, b.data], axis=-1), (a, b), bwd)


def concat_rows(tensors):
    """Concatenate along the first axis."""
    splits = np.cumsum([t.shape[0] for t in tensors])[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=0))
    return _result(np.concatenate([t.data for t in tensors], axis=0),
                   tuple(tensors), bwd)


def slice_rows(a, idx):
    """Gather rows of a 2-d tensor by an integer index array."""
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"row index out of range for shape {a.shape}")

    def bwd(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)
    return _result(a.data[idx], (a,), bwd)


def sum_(a, axis=None, keepdims=False):
    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)
    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else a.data.shape[axis]

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / n, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / n, a.shape).copy(),)
    return _result(a.data.mean(axis=axis, keepdims=keepdims), (a,), bwd)


# ---------------------------------------------------------------------------
# nonlinearities

def gelu(a):
    x = a.data
    phi = np.exp(-0.5 * x * x) / _SQRT_2PI
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))

    def bwd(g):
        return (g * (cdf + x * phi),)
    return _result(x * cdf, (a,), bwd)


def sigmoid(a):
    s = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        return (g * s * (1.0 - s),)
    return _result(s, (a,), bwd)


def log(a):
    def bwd(g):
        return (g / a.data,)
    return _result(np.log(a.data), (a,), bwd)


def exp(a):
    e = np.exp(a.data)

    def bwd(g):
        return (g * e,)
    return _result(e, (a,), bwd)


def clip(a, lo, hi):
    """Clamp values; gradient passes through only inside the interval."""
    inside = (a.data >= lo) & (a.data <= hi)

    def bwd(g):
        return (g * inside,)
    return _result(np.clip(a.data, lo, hi), (a,), bwd)


def dropout(a, p, rng, training=True):
    """Inverted dropout; identity when off. Defaults to off at call sites."""
    if not training or p == 0.0:
        return a
    keep = (rng.random(a.shape) >= p) / (1.0 - p)

    def bwd(g):
        return (g * keep,)
    return _result(a.data * keep, (a,), bwd)


# ---------------------------------------------------------------------------
# softmax / normalization

def softmax(a, mask=None):
    """Softmax over the last axis with per-row max subtraction.

    ``mask`` is a boolean array broadcastable to ``a.shape``; False entries
    get exactly zero weight. Rows must keep at least one True entry.
    """
    x = a.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape[-1] != x.shape[-1]:
            raise ShapeError(
                f"mask width {mask.shape[-1]} does not match key axis {x.shape[-1]}")
        mask = np.broadcast_to(mask, x.shape)
        x = np.where(mask, x, -np.inf)
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    s = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)
    return _result(s, (a,), bwd)


def softmax_rows(a, mask=None):
    if a.ndim != 2:
        raise ShapeError(f"softmax_rows expects a 2-d tensor, got {a.shape}")
    return softmax(a, mask=mask)


def log_softmax(a):
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def bwd(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)
    return _result(out, (a,), bwd)


def layer_norm(a, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    n = a.data.shape[-1]
    if gain.data.shape != (n,) or bias.data.shape != (n,):
        raise ShapeError(
            f"layer_norm affine shapes {gain.shape}/{bias.shape} do not match width {n}")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bwd(g):
        lead = tuple(range(g.ndim - 1))
        ggain = (g * xhat).sum(axis=lead)
        gbias = g.sum(axis=lead)
        gx_hat = g * gain.data
        gx = inv * (gx_hat
                    - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, ggain, gbias
    return _result(out, (a, gain, bias), bwd)
