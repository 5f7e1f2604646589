"""Differentiable blocks with explicit backward passes.

Every layer follows the same protocol: ``init(store, rng)`` registers its
parameters, ``forward(store, x, ...)`` returns ``(y, cache)`` and
``backward(store, dy, cache)`` accumulates parameter gradients into
``store.grads`` and returns the gradient with respect to ``x``.

Arrays are ``batch x length x width`` for sequence layers and
``batch x width`` otherwise.
"""

from __future__ import annotations

import functools

from dataclasses import asdict, dataclass

import numpy as np

from .params import NumericError, ParameterStore


class ShapeError(ValueError):
    pass


def assert_finite(x: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values after {where}")


class DropoutContext:
    """Counter-based dropout masks keyed by ``(seed, step, op index)``.

    Each call to :meth:`mask` consumes the next op index, so a forward pass
    that issues its dropout calls in a fixed order is bit-reproducible.
    """

    def __init__(self, seed: int, step: int):
        self.seed = int(seed)
        self.step = int(step)
        self.counter = 0

    def mask(self, shape, rate: float, dtype) -> np.ndarray:
        op = self.counter
        self.counter += 1
        return _keyed_mask(self.seed, self.step, op, tuple(shape), float(rate), np.dtype(dtype).str)


@functools.lru_cache(maxsize=256)
def _keyed_mask(seed, step, op, shape, rate, dtype):
    # masks are pure functions of their key; caching helps repeated evaluation at one step
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, step, op])))
    keep = rng.random(shape) >= rate
    out = keep.astype(dtype) / np.dtype(dtype).type(1.0 - rate)
    out.flags.writeable = False
    return out


def dropout(x, rate, ctx: DropoutContext | None):
    if ctx is None or rate == 0.0:
        return x, None
    m = ctx.mask(x.shape, rate, x.dtype)
    return x * m, m


def dropout_backward(dy, mask):
    return dy if mask is None else dy * mask


def relu(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dy, mask):
    return dy * mask


def mean_pool(x: np.ndarray):
    """Mean over the sequence axis of a ``batch x length x width`` array."""
    if x.ndim != 3:
        raise ShapeError(f"mean_pool expects a rank-3 array, got shape {x.shape}")
    if x.shape[1] == 0:
        raise ShapeError("mean_pool over an empty sequence")
    return x.mean(axis=1), x.shape[1]


def mean_pool_backward(dy: np.ndarray, length: int) -> np.ndarray:
    return np.repeat(dy[:, None, :] / dy.dtype.type(length), length, axis=1)


def sinusoidal_positions(length: int, d: int, dtype=np.float64) -> np.ndarray:
    pos = np.arange(length)[:, None]
    div = np.power(10000.0, np.arange(0, d, 2) / d)
    pe = np.zeros((length, d))
    pe[:, 0::2] = np.sin(pos / div)
    pe[:, 1::2] = np.cos(pos / div[: d // 2])
    return pe.astype(dtype)


class Linear:
    def __init__(self, name: str, n_in: int, n_out: int):
        self.name = name
        self.n_in = n_in
        self.n_out = n_out
        self.w = f"{name}.weight"
        self.b = f"{name}.bias"

    def init(self, store: ParameterStore, rng: np.random.Generator) -> None:
        bound = 1.0 / np.sqrt(self.n_in)
        store.add(self.w, rng.uniform(-bound, bound, size=(self.n_in, self.n_out)))
        store.add(self.b, np.zeros(self.n_out))

    def forward(self, store, x):
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"{self.name}: expected input width {self.n_in}, got {x.shape[-1]}")
        return x @ store[self.w] + store[self.b], x

    def backward(self, store, dy, x):
        x2 = x.reshape(-1, self.n_in)
        dy2 = dy.reshape(-1, self.n_out)
        store.grads[self.w] += x2.T @ dy2
        store.grads[self.b] += dy2.sum(axis=0)
        return dy @ store[self.w].T


class LayerNorm:
    def __init__(self, name: str, d: int, eps: float = 1e-5):
        self.name = name
        self.d = d
        self.eps = eps
        self.g = f"{name}.gain"
        self.b = f"{name}.bias"

    def init(self, store, rng=None):
        store.add(self.g, np.ones(self.d))
        store.add(self.b, np.zeros(self.d))

    def forward(self, store, x):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * inv
        return xhat * store[self.g] + store[self.b], (xhat, inv)

    def backward(self, store, dy, cache):
        xhat, inv = cache
        store.grads[self.g] += (dy * xhat).reshape(-1, self.d).sum(axis=0)
        store.grads[self.b] += dy.reshape(-1, self.d).sum(axis=0)
        dxhat = dy * store[self.g]
        return inv * (
            dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )


class MultiHeadSelfAttention:
    def __init__(self, name: str, d: int, heads: int):
        if d % heads:
            raise ShapeError(f"{name}: width {d} not divisible by {heads} heads")
        self.name = name
        self.d = d
        self.heads = heads
        self.dh = d // heads
        self.in_proj = Linear(f"{name}.in_proj", d, 3 * d)
        self.out_proj = Linear(f"{name}.out_proj", d, d)

    def init(self, store, rng):
        self.in_proj.init(store, rng)
        self.out_proj.init(store, rng)

    def _split(self, t, B, L):
        return t.reshape(B, L, self.heads, self.dh).transpose(0, 2, 1, 3)

    def forward(self, store, x, causal: bool = False):
        B, L, _ = x.shape
        qkv, c_in = self.in_proj.forward(store, x)
        q, k, v = (self._split(t, B, L) for t in np.split(qkv, 3, axis=-1))
        scale = x.dtype.type(1.0 / np.sqrt(self.dh))
        scores = (q @ k.transpose(0, 1, 3, 2)) * scale
        if causal:
            allowed = np.tril(np.ones((L, L), dtype=bool))
            scores = np.where(allowed, scores, -np.inf)
        scores = scores - scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        weights = e / e.sum(axis=-1, keepdims=True)
        ctx = (weights @ v).transpose(0, 2, 1, 3).reshape(B, L, self.d)
        out, c_out = self.out_proj.forward(store, ctx)
        return out, (c_in, q, k, v, weights, scale, c_out)

    def backward(self, store, dout, cache):
        c_in, q, k, v, weights, scale, c_out = cache
        B, _, L, _ = q.shape
        dctx = self.out_proj.backward(store, dout, c_out)
        dctx = self._split(dctx, B, L)
        dweights = dctx @ v.transpose(0, 1, 3, 2)
        dv = weights.transpose(0, 1, 3, 2) @ dctx
        dscores = weights * (dweights - (dweights * weights).sum(axis=-1, keepdims=True)) * scale
        dq = dscores @ k
        dk = dscores.transpose(0, 1, 3, 2) @ q

        def merge(t):
            return t.transpose(0, 2, 1, 3).reshape(B, L, self.d)

        dqkv = np.concatenate([merge(dq), merge(dk), merge(dv)], axis=-1)
        return self.in_proj.backward(store, dqkv, c_in)


@dataclass
class EncoderConfig:
    d: int = 32
    k1: int = 1
    heads: int = 4
    d_ffn: int | None = None
    dropout: float = 0.0
    mask_mode: str = "bidirectional"
    positional_encoding: str = "sinusoidal"

    def __post_init__(self):
        if self.d_ffn is None:
            self.d_ffn = 4 * self.d
        if self.d % self.heads:
            raise ValueError(f"d={self.d} must be divisible by heads={self.heads}")
        if self.k1 < 1:
            raise ValueError("k1 must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.mask_mode not in ("bidirectional", "causal"):
            raise ValueError(f"unknown mask_mode {self.mask_mode!r}")
        if self.positional_encoding not in ("sinusoidal", "none"):
            raise ValueError(f"unknown positional_encoding {self.positional_encoding!r}")

    def to_dict(self):
        return asdict(self)


class EncoderLayer:
    """Post-norm encoder layer: attention and feed-forward sublayers, each residual + LayerNorm."""

    def __init__(self, name: str, config: EncoderConfig):
        self.name = name
        self.config = config
        d = config.d
        self.attn = MultiHeadSelfAttention(f"{name}.attn", d, config.heads)
        self.ln1 = LayerNorm(f"{name}.ln1", d)
        self.ff1 = Linear(f"{name}.ff1", d, config.d_ffn)
        self.ff2 = Linear(f"{name}.ff2", config.d_ffn, d)
        self.ln2 = LayerNorm(f"{name}.ln2", d)

    def init(self, store, rng):
        for part in (self.attn, self.ln1, self.ff1, self.ff2, self.ln2):
            part.init(store, rng)

    def forward(self, store, x, drop: DropoutContext | None = None):
        rate = self.config.dropout
        a, c_attn = self.attn.forward(store, x, causal=self.config.mask_mode == "causal")
        a, m_attn = dropout(a, rate, drop)
        h, c_ln1 = self.ln1.forward(store, x + a)
        f, c_ff1 = self.ff1.forward(store, h)
        f, m_relu = relu(f)
        f, c_ff2 = self.ff2.forward(store, f)
        f, m_ff = dropout(f, rate, drop)
        y, c_ln2 = self.ln2.forward(store, h + f)
        return y, (c_attn, m_attn, c_ln1, c_ff1, m_relu, c_ff2, m_ff, c_ln2)

    def backward(self, store, dy, cache):
        c_attn, m_attn, c_ln1, c_ff1, m_relu, c_ff2, m_ff, c_ln2 = cache
        ds = self.ln2.backward(store, dy, c_ln2)
        df = dropout_backward(ds, m_ff)
        df = self.ff2.backward(store, df, c_ff2)
        df = relu_backward(df, m_relu)
        dh = ds + self.ff1.backward(store, df, c_ff1)
        ds = self.ln1.backward(store, dh, c_ln1)
        da = dropout_backward(ds, m_attn)
        return ds + self.attn.backward(store, da, c_attn)


class TransformerEncoder:
    def __init__(self, name: str, config: EncoderConfig):
        self.name = name
        self.config = config
        self.layers = [EncoderLayer(f"{name}.{k}", config) for k in range(config.k1)]
        self._pe: dict[tuple, np.ndarray] = {}

    def init(self, store, rng):
        for layer in self.layers:
            layer.init(store, rng)

    def positions(self, length, dtype):
        key = (length, np.dtype(dtype).str)
        if key not in self._pe:
            self._pe[key] = sinusoidal_positions(length, self.config.d, dtype)
        return self._pe[key]

    def forward(self, store, x, training: bool = False, drop: DropoutContext | None = None):
        if x.ndim != 3 or x.shape[-1] != self.config.d:
            raise ShapeError(f"{self.name}: expected batch x length x {self.config.d}, got {x.shape}")
        drop = drop if training else None
        if self.config.positional_encoding == "sinusoidal":
            x = x + self.positions(x.shape[1], x.dtype)
        x, m_in = dropout(x, self.config.dropout, drop)
        caches = []
        for layer in self.layers:
            x, c = layer.forward(store, x, drop)
            caches.append(c)
        return x, (m_in, caches)

    def backward(self, store, dy, cache):
        m_in, caches = cache
        for layer, c in zip(reversed(self.layers), reversed(caches)):
            dy = layer.backward(store, dy, c)
        return dropout_backward(dy, m_in)

    @staticmethod
    def attention_weights(cache) -> list[np.ndarray]:
        """Per-layer attention weights (``batch x heads x length x length``) from a forward cache."""
        return [c[0][4] for c in cache[1]]


class MLP:
    """Affine layers with ReLU between them; the last layer has no activation."""

    def __init__(self, name: str, widths):
        widths = list(widths)
        if len(widths) < 2:
            raise ShapeError(f"{name}: need at least input and output widths")
        self.name = name
        self.widths = widths
        self.layers = [Linear(f"{name}.{k}", widths[k], widths[k + 1]) for k in range(len(widths) - 1)]

    def init(self, store, rng):
        for layer in self.layers:
            layer.init(store, rng)

    def forward(self, store, x):
        caches = []
        for k, layer in enumerate(self.layers):
            x, c = layer.forward(store, x)
            m = None
            if k < len(self.layers) - 1:
                x, m = relu(x)
            caches.append((c, m))
        return x, caches

    def backward(self, store, dy, caches):
        for layer, (c, m) in zip(reversed(self.layers), reversed(caches)):
            if m is not None:
                dy = relu_backward(dy, m)
            dy = layer.backward(store, dy, c)
        return dy


class MixerBlock:
    """One MLP-Mixer block over ``batch x tokens x width``: token mixing, then channel mixing."""

    def __init__(self, name: str, tokens: int, d: int, token_hidden: int, channel_hidden: int):
        self.name = name
        self.ln_tok = LayerNorm(f"{name}.ln_token", d)
        self.tok = MLP(f"{name}.token", [tokens, token_hidden, tokens])
        self.ln_ch = LayerNorm(f"{name}.ln_channel", d)
        self.ch = MLP(f"{name}.channel", [d, channel_hidden, d])

    def init(self, store, rng):
        for part in (self.ln_tok, self.tok, self.ln_ch, self.ch):
            part.init(store, rng)

    def forward(self, store, x):
        z, c1 = self.ln_tok.forward(store, x)
        t, c2 = self.tok.forward(store, z.transpose(0, 2, 1))
        y = x + t.transpose(0, 2, 1)
        z, c3 = self.ln_ch.forward(store, y)
        ch, c4 = self.ch.forward(store, z)
        return y + ch, (c1, c2, c3, c4)

    def backward(self, store, dout, cache):
        c1, c2, c3, c4 = cache
        dz = self.ch.backward(store, dout, c4)
        dy = dout + self.ln_ch.backward(store, dz, c3)
        dt = self.tok.backward(store, dy.transpose(0, 2, 1), c2).transpose(0, 2, 1)
        return dy + self.ln_tok.backward(store, dt, c1)


# functional entry points -------------------------------------------------------


def transformer_encoder(x, config: EncoderConfig, store: ParameterStore, training: bool = False, drop=None, name="encoder"):
    """Run an encoder whose parameters live in ``store`` under ``name``."""
    return TransformerEncoder(name, config).forward(store, x, training=training, drop=drop)


def mlp(x, widths, store: ParameterStore, name="mlp"):
    return MLP(name, widths).forward(store, x)
