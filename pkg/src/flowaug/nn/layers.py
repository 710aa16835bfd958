"""Layers with explicit forward/backward passes over numpy arrays.

Every layer caches what its backward pass needs during ``forward`` and
accumulates parameter gradients into ``Param.grad`` during ``backward``.
Calling ``backward`` without a preceding ``forward`` raises
:class:`~flowaug.errors.NoForwardPass`; the cache is consumed by ``backward``.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from ..errors import NoForwardPass, ShapeMismatch

MASK_VALUE = -1e9


class Param:
    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self) -> int:
        return int(self.value.size)

    def zero_grad(self):
        self.grad[...] = 0.0


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None, dtype=np.float64, gain=1.0):
    limit = gain * math.sqrt(6.0 / (fan_in + fan_out))
    shape = shape or (fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    """Base class: a tree of parameters and child layers."""

    def __init__(self):
        self._params: dict[str, Param] = {}
        self._children: dict[str, Layer] = {}
        self._cache = None
        self.training = True

    def add_param(self, name: str, value: np.ndarray) -> Param:
        p = Param(value)
        self._params[name] = p
        return p

    def add_child(self, name: str, layer: "Layer") -> "Layer":
        self._children[name] = layer
        return layer

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Param]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Param]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode: bool = True):
        self.training = mode
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def _take_cache(self):
        if self._cache is None:
            raise NoForwardPass(f"{type(self).__name__}.backward called before forward")
        cache, self._cache = self._cache, None
        return cache

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.value for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise ShapeMismatch(f"parameter names differ (missing={missing}, unexpected={extra})")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.value.shape:
                raise ShapeMismatch(f"{name}: expected shape {p.value.shape}, got {value.shape}")
            p.value[...] = value


class Dense(Layer):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, dtype=np.float64, gain: float = 1.0):
        super().__init__()
        self.in_dim, self.out_dim = in_dim, out_dim
        self.W = self.add_param("W", xavier_uniform(rng, in_dim, out_dim, dtype=dtype, gain=gain))
        self.b = self.add_param("b", np.zeros(out_dim, dtype=dtype))

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.in_dim:
            raise ShapeMismatch(f"Dense expects last dim {self.in_dim}, got {x.shape}")
        self._cache = x
        return x @ self.W.value + self.b.value

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x = self._take_cache()
        x2 = x.reshape(-1, self.in_dim)
        dy2 = dy.reshape(-1, self.out_dim)
        self.W.grad += x2.T @ dy2
        self.b.grad += dy2.sum(axis=0)
        return dy @ self.W.value.T


class ReLU(Layer):
    def forward(self, x):
        mask = x > 0
        self._cache = mask
        return np.where(mask, x, 0.0).astype(x.dtype, copy=False)

    def backward(self, dy):
        mask = self._take_cache()
        return np.where(mask, dy, 0.0).astype(dy.dtype, copy=False)


class GELU(Layer):
    """Tanh approximation; its gradient is nonzero everywhere, so no unit can die."""

    _c = np.sqrt(2.0 / np.pi)

    def forward(self, x):
        inner = self._c * (x + 0.044715 * x**3)
        t = np.tanh(inner)
        self._cache = (x, t)
        return (0.5 * x * (1.0 + t)).astype(x.dtype, copy=False)

    def backward(self, dy):
        x, t = self._take_cache()
        dinner = self._c * (1.0 + 3 * 0.044715 * x**2)
        grad = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * dinner
        return (dy * grad).astype(dy.dtype, copy=False)


class Dropout(Layer):
    """Inverted dropout; the identity when ``p == 0`` or in eval mode."""

    def __init__(self, p: float, rng: np.random.Generator):
        super().__init__()
        if not 0 <= p < 1:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p
        self.rng = rng

    def forward(self, x):
        if not self.training or self.p == 0:
            self._cache = 1.0
            return x
        keep = (self.rng.random(x.shape) >= self.p).astype(x.dtype) / (1.0 - self.p)
        self._cache = keep
        return x * keep

    def backward(self, dy):
        keep = self._take_cache()
        return dy * keep


class Embedding(Layer):
    def __init__(self, num: int, dim: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.num, self.dim = num, dim
        self.W = self.add_param("W", xavier_uniform(rng, num, dim, dtype=dtype))

    def forward(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx)
        if idx.size and (idx.min() < 0 or idx.max() >= self.num):
            raise ShapeMismatch(f"embedding index outside [0, {self.num})")
        self._cache = idx
        return self.W.value[idx]

    def backward(self, dy: np.ndarray):
        idx = self._take_cache()
        np.add.at(self.W.grad, idx.ravel(), dy.reshape(-1, self.dim))
        return None


class SparseOneHotDense(Layer):
    """Dense layer applied to ``[onehot(src) | onehot(dst) | direction]`` without materialising it.

    Input is an integer array ``(..., 3)`` of (src bucket, dst bucket, direction)
    over ``buckets`` port buckets; the equivalent dense input has width
    ``2 * buckets + 1``.
    """

    def __init__(self, buckets: int, out_dim: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.buckets = buckets
        self.in_dim = 2 * buckets + 1
        self.out_dim = out_dim
        self.W = self.add_param("W", xavier_uniform(rng, self.in_dim, out_dim, dtype=dtype))
        self.b = self.add_param("b", np.zeros(out_dim, dtype=dtype))

    def densify(self, sparse: np.ndarray) -> np.ndarray:
        sparse = np.asarray(sparse)
        out = np.zeros(sparse.shape[:-1] + (self.in_dim,))
        flat = out.reshape(-1, self.in_dim)
        s = sparse.reshape(-1, 3)
        rows = np.arange(len(s))
        flat[rows, s[:, 0]] = 1.0
        flat[rows, self.buckets + s[:, 1]] = 1.0
        flat[rows, 2 * self.buckets] = s[:, 2]
        return out

    def forward(self, sparse: np.ndarray) -> np.ndarray:
        sparse = np.asarray(sparse)
        if sparse.shape[-1] != 3:
            raise ShapeMismatch(f"sparse one-hot input must end with 3 columns, got {sparse.shape}")
        src, dst, direction = sparse[..., 0], sparse[..., 1], sparse[..., 2]
        if src.size and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= self.buckets):
            raise ShapeMismatch(f"port bucket outside [0, {self.buckets})")
        W = self.W.value
        self._cache = sparse
        return W[src] + W[self.buckets + dst] + direction[..., None].astype(W.dtype) * W[2 * self.buckets] + self.b.value

    def backward(self, dy: np.ndarray):
        sparse = self._take_cache()
        dy2 = dy.reshape(-1, self.out_dim)
        s = sparse.reshape(-1, 3)
        np.add.at(self.W.grad, s[:, 0], dy2)
        np.add.at(self.W.grad, self.buckets + s[:, 1], dy2)
        self.W.grad[2 * self.buckets] += s[:, 2].astype(dy2.dtype) @ dy2
        self.b.grad += dy2.sum(axis=0)
        return None


class LayerNorm(Layer):
    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float64):
        super().__init__()
        self.dim, self.eps = dim, eps
        self.gamma = self.add_param("gamma", np.ones(dim, dtype=dtype))
        self.beta = self.add_param("beta", np.zeros(dim, dtype=dtype))

    def forward(self, x):
        if x.shape[-1] != self.dim:
            raise ShapeMismatch(f"LayerNorm expects last dim {self.dim}, got {x.shape}")
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * inv
        self._cache = (xhat, inv)
        return xhat * self.gamma.value + self.beta.value

    def backward(self, dy):
        xhat, inv = self._take_cache()
        self.gamma.grad += (dy * xhat).reshape(-1, self.dim).sum(axis=0)
        self.beta.grad += dy.reshape(-1, self.dim).sum(axis=0)
        g = dy * self.gamma.value
        return inv * (g - g.mean(axis=-1, keepdims=True) - xhat * (g * xhat).mean(axis=-1, keepdims=True))


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


class MultiHeadSelfAttention(Layer):
    """Scaled dot-product self-attention; ``mask`` marks valid (non-pad) keys."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        if dim % heads:
            raise ShapeMismatch(f"{heads} heads do not divide model dim {dim}")
        self.dim, self.heads, self.head_dim = dim, heads, dim // heads
        self.q = self.add_child("q", Dense(dim, dim, rng, dtype))
        self.k = self.add_child("k", Dense(dim, dim, rng, dtype))
        self.v = self.add_child("v", Dense(dim, dim, rng, dtype))
        self.o = self.add_child("o", Dense(dim, dim, rng, dtype))
        self.last_attention = None

    def _split(self, x):
        n, t, _ = x.shape
        return x.reshape(n, t, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    def _merge(self, x):
        n, h, t, d = x.shape
        return x.transpose(0, 2, 1, 3).reshape(n, t, h * d)

    def forward(self, x, mask=None):
        if x.ndim != 3 or x.shape[-1] != self.dim:
            raise ShapeMismatch(f"attention expects (N, T, {self.dim}), got {x.shape}")
        q = self._split(self.q.forward(x))
        k = self._split(self.k.forward(x))
        v = self._split(self.v.forward(x))
        scale = 1.0 / math.sqrt(self.head_dim)
        scores = (q @ k.transpose(0, 1, 3, 2)) * scale
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != x.shape[:2]:
                raise ShapeMismatch(f"mask shape {mask.shape} does not match input {x.shape[:2]}")
            scores = np.where(mask[:, None, None, :], scores, MASK_VALUE)
        attn = softmax(scores, axis=-1)
        self.last_attention = attn
        ctx = attn @ v
        self._cache = (q, k, v, attn, scale)
        return self.o.forward(self._merge(ctx))

    def backward(self, dy):
        q, k, v, attn, scale = self._take_cache()
        dctx = self._split(self.o.backward(dy))
        dattn = dctx @ v.transpose(0, 1, 3, 2)
        dv = attn.transpose(0, 1, 3, 2) @ dctx
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True)) * scale
        dq = dscores @ k
        dk = dscores.transpose(0, 1, 3, 2) @ q
        dx = self.q.backward(self._merge(dq))
        dx = dx + self.k.backward(self._merge(dk))
        dx = dx + self.v.backward(self._merge(dv))
        return dx


class FeedForward(Layer):
    """Position-wise two-layer network: Dense -> ReLU -> Dense."""

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.fc1 = self.add_child("fc1", Dense(dim, hidden, rng, dtype))
        self.act = self.add_child("act", ReLU())
        self.fc2 = self.add_child("fc2", Dense(hidden, dim, rng, dtype))

    def forward(self, x):
        return self.fc2.forward(self.act.forward(self.fc1.forward(x)))

    def backward(self, dy):
        return self.fc1.backward(self.act.backward(self.fc2.backward(dy)))


class EncoderBlock(Layer):
    """Pre-norm transformer encoder block."""

    def __init__(self, dim: int, heads: int, ff_hidden: int, rng: np.random.Generator, dropout: float = 0.0, dtype=np.float64):
        super().__init__()
        self.ln1 = self.add_child("ln1", LayerNorm(dim, dtype=dtype))
        self.attn = self.add_child("attn", MultiHeadSelfAttention(dim, heads, rng, dtype))
        self.drop1 = self.add_child("drop1", Dropout(dropout, rng))
        self.ln2 = self.add_child("ln2", LayerNorm(dim, dtype=dtype))
        self.ff = self.add_child("ff", FeedForward(dim, ff_hidden, rng, dtype))
        self.drop2 = self.add_child("drop2", Dropout(dropout, rng))

    def forward(self, x, mask=None):
        h = x + self.drop1.forward(self.attn.forward(self.ln1.forward(x), mask))
        return h + self.drop2.forward(self.ff.forward(self.ln2.forward(h)))

    def backward(self, dy):
        dh = dy + self.ln2.backward(self.ff.backward(self.drop2.backward(dy)))
        return dh + self.ln1.backward(self.attn.backward(self.drop1.backward(dh)))


class MaskedMeanPool(Layer):
    """Average over the sequence axis, counting only positions where ``mask`` is true."""

    def forward(self, x, mask=None):
        if mask is None:
            mask = np.ones(x.shape[:2], dtype=bool)
        m = np.asarray(mask, dtype=x.dtype)[..., None]
        count = np.maximum(m.sum(axis=1), 1.0)
        self._cache = (m, count)
        return (x * m).sum(axis=1) / count

    def backward(self, dy):
        m, count = self._take_cache()
        return (dy / count)[:, None, :] * m


def positional_encoding(length: int, dim: int, dtype=np.float64) -> np.ndarray:
    """Sinusoidal position table of shape ``(length, dim)``."""
    pos = np.arange(length)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle)).astype(dtype)


class LSTM(Layer):
    """Single-layer LSTM over ``(N, T, I)`` inputs.

    ``W`` has shape ``(I + H, 4H)`` acting on ``[x_t, h_{t-1}]`` with gate blocks
    ordered input, forget, cell, output. The forget-gate bias starts at 1.
    """

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator, dtype=np.float64, orthogonal: bool = False):
        super().__init__()
        self.input_size, self.hidden_size = input_size, hidden_size
        H = hidden_size
        W = xavier_uniform(rng, input_size + H, 4 * H, dtype=dtype)
        if orthogonal:
            for g in range(4):
                a = rng.standard_normal((H, H))
                qm, r = np.linalg.qr(a)
                W[input_size:, g * H : (g + 1) * H] = (qm * np.sign(np.diag(r))).astype(dtype)
        b = np.zeros(4 * H, dtype=dtype)
        b[H : 2 * H] = 1.0
        self.W = self.add_param("W", W)
        self.b = self.add_param("b", b)

    @staticmethod
    def _sigmoid(x):
        return 0.5 * (1.0 + np.tanh(0.5 * x))

    def step(self, x_t, h, c):
        """One recurrence step without caching (used for sampling)."""
        H = self.hidden_size
        z = np.concatenate([x_t, h], axis=-1) @ self.W.value + self.b.value
        i = self._sigmoid(z[:, :H])
        f = self._sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = self._sigmoid(z[:, 3 * H :])
        c = f * c + i * g
        return o * np.tanh(c), c

    def forward(self, x, h0=None, c0=None):
        if x.ndim != 3 or x.shape[-1] != self.input_size:
            raise ShapeMismatch(f"LSTM expects (N, T, {self.input_size}), got {x.shape}")
        n, t, _ = x.shape
        H = self.hidden_size
        dtype = self.W.value.dtype
        h = np.zeros((n, H), dtype=dtype) if h0 is None else h0
        c = np.zeros((n, H), dtype=dtype) if c0 is None else c0
        hs = np.empty((n, t, H), dtype=dtype)
        steps = []
        for s in range(t):
            xh = np.concatenate([x[:, s], h], axis=-1)
            z = xh @ self.W.value + self.b.value
            i = self._sigmoid(z[:, :H])
            f = self._sigmoid(z[:, H : 2 * H])
            g = np.tanh(z[:, 2 * H : 3 * H])
            o = self._sigmoid(z[:, 3 * H :])
            c_prev = c
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            hs[:, s] = h
            steps.append((xh, i, f, g, o, c_prev, tc))
        self._cache = steps
        return hs

    def backward(self, dhs):
        steps = self._take_cache()
        n, t, H = dhs.shape
        I = self.input_size
        dx = np.empty((n, t, I), dtype=dhs.dtype)
        dh_next = np.zeros((n, H), dtype=dhs.dtype)
        dc_next = np.zeros((n, H), dtype=dhs.dtype)
        Wv = self.W.value
        for s in range(t - 1, -1, -1):
            xh, i, f, g, o, c_prev, tc = steps[s]
            dh = dhs[:, s] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dc_next = dc * f
            dz = np.concatenate(
                [di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=-1
            )
            self.W.grad += xh.T @ dz
            self.b.grad += dz.sum(axis=0)
            dxh = dz @ Wv.T
            dx[:, s] = dxh[:, :I]
            dh_next = dxh[:, I:]
        return dx


class Sequential(Layer):
    def __init__(self, *layers: Layer):
        super().__init__()
        self.layers = list(layers)
        for i, layer in enumerate(self.layers):
            self.add_child(str(i), layer)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray, weights: np.ndarray | None = None):
    """Mean cross-entropy over positions and its gradient ``(p - onehot) * w / sum(w)``.

    ``logits`` is ``(..., K)`` and ``targets`` the matching integer array.
    ``weights`` (same shape as ``targets``) masks or weights positions.
    """
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise ShapeMismatch(f"logits {logits.shape} do not match targets {targets.shape}")
    k = logits.shape[-1]
    flat = logits.reshape(-1, k)
    t = targets.ravel()
    if t.size and (t.min() < 0 or t.max() >= k):
        raise ShapeMismatch(f"target outside [0, {k})")
    w = np.ones(t.size, dtype=logits.dtype) if weights is None else np.asarray(weights, dtype=logits.dtype).ravel()
    total = w.sum()
    if total <= 0:
        raise ShapeMismatch("cross-entropy over zero weight")
    logp = log_softmax(flat, axis=-1)
    rows = np.arange(t.size)
    loss = -(w * logp[rows, t]).sum() / total
    grad = np.exp(logp)
    grad[rows, t] -= 1.0
    grad *= (w / total)[:, None]
    return float(loss), grad.reshape(logits.shape)
