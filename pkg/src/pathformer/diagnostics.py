"""Finite-difference gradient suite over every differentiable block and the full training loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import FORK_VARIANTS, ModelConfig, Pathformer
from .nn import (
    MLP,
    DropoutContext,
    EncoderConfig,
    LayerNorm,
    Linear,
    MixerBlock,
    MultiHeadSelfAttention,
    ParameterStore,
    TransformerEncoder,
    mean_pool,
    mean_pool_backward,
)
from .nn.gradcheck import TOLERANCE, check_store
from .queries import TEMPLATES, abstract, instantiate, is_union_free


@dataclass
class SuiteResult:
    label: str
    rel_error: float

    @property
    def passed(self) -> bool:
        return self.rel_error < TOLERANCE


def _check_layer(label, layer, x, rng, **fwd):
    """Gradcheck ``sum(w * layer(x))`` over the layer's parameters and its input."""
    store = ParameterStore(np.float64)
    layer.init(store, rng)
    # perturb default-initialised values so no gradient is trivially zero
    for name in store.names():
        store.params[name] += rng.normal(scale=0.1, size=store.params[name].shape)
    y, _ = layer.forward(store, x, **fwd)
    w = rng.normal(size=y.shape)
    dx = np.zeros_like(x)

    def f():
        out, cache = layer.forward(store, x, **fwd)
        dx[...] = layer.backward(store, w, cache)
        return float((out * w).sum())

    def loss():
        return float((layer.forward(store, x, **fwd)[0] * w).sum())

    results = check_store(f, store, extra={"input": (x, lambda: dx)}, loss_only=loss)
    return [SuiteResult(f"{label}:{r.name}", r.rel_error) for r in results]


def _check_mean_pool(rng, B, L, d):
    x = rng.normal(size=(B, L, d))
    w = rng.normal(size=(B, d))
    store = ParameterStore(np.float64)
    dx = np.zeros_like(x)

    def f():
        y, n = mean_pool(x)
        dx[...] = mean_pool_backward(w, n)
        return float((y * w).sum())

    return [SuiteResult(f"mean_pool:{r.name}", r.rel_error) for r in check_store(f, store, extra={"input": (x, lambda: dx)})]


class _Encoder:
    """Adapter giving TransformerEncoder the plain layer protocol, with fixed dropout keys."""

    def __init__(self, config, seed):
        self.enc = TransformerEncoder("enc", config)
        self.seed = seed

    def init(self, store, rng):
        self.enc.init(store, rng)

    def forward(self, store, x):
        return self.enc.forward(store, x, training=True, drop=DropoutContext(self.seed, 0))

    def backward(self, store, dy, cache):
        return self.enc.backward(store, dy, cache)


def _check_model_loss(rng, variant, draw):
    heads = int(rng.choice([1, 2]))
    d = heads * int(rng.integers(3, 5))
    n_e, n_r = 6, 3
    cfg = ModelConfig(
        n_e, n_r, d=d, k1=int(rng.integers(1, 3)), heads=heads, d_ffn=int(rng.integers(3, 7)), dropout=0.1,
        fork_variant=variant, gamma=float(rng.uniform(1.0, 4.0)), seed=draw, dtype="float64",
        mask_mode=str(rng.choice(["bidirectional", "causal"])),
    )
    model = Pathformer(cfg)
    structures = [s for s, t in TEMPLATES.items() if is_union_free(t) and s != "1p"]
    name = str(rng.choice(structures))
    B, u = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    shape = TEMPLATES[name]
    n_a = len(abstract(shape)[1])
    n_rel = len(abstract(shape)[2])
    anchors = rng.integers(n_e, size=(B, n_a))
    relations = rng.integers(n_r, size=(B, n_rel))
    index_tree = abstract(instantiate(name, anchors[0], relations[0]))[0]
    pos = rng.integers(n_e, size=B)
    neg = rng.integers(n_e, size=(B, u))
    args = (index_tree, anchors, relations, pos, neg)
    results = check_store(
        lambda: model.loss_and_grad(*args, step=draw),
        model.store,
        loss_only=lambda: model.loss_and_grad(*args, step=draw, backward=False),
    )
    return [SuiteResult(f"loss[{variant},{name}]:{r.name}", r.rel_error) for r in results]


def run_suite(seed: int = 0, draws: int = 20) -> list[SuiteResult]:
    """Run every check for ``draws`` independent random shape/parameter draws.

    The full loss is checked once per draw, cycling through the fork variants.
    """
    rng = np.random.default_rng(seed)
    results: list[SuiteResult] = []
    for draw in range(draws):
        B, L = int(rng.integers(1, 4)), int(rng.integers(1, 5))
        heads = int(rng.choice([1, 2]))
        # width 2 makes LayerNorm constant (output ±1) and its gradient identically zero
        d = heads * int(rng.integers(3, 6))
        x = rng.normal(size=(B, L, d))
        tag = f"#{draw}"
        results += _check_layer(f"linear{tag}", Linear("lin", d, int(rng.integers(1, 6))), x, rng)
        results += _check_layer(f"layernorm{tag}", LayerNorm("ln", d), x, rng)
        for causal in (False, True):
            results += _check_layer(
                f"attention[{'causal' if causal else 'bidirectional'}]{tag}",
                MultiHeadSelfAttention("mha", d, heads), x, rng, causal=causal,
            )
        for mode in ("bidirectional", "causal"):
            cfg = EncoderConfig(d=d, k1=2, heads=heads, d_ffn=int(rng.integers(3, 8)), dropout=0.2, mask_mode=mode)
            results += _check_layer(f"encoder[{mode}]{tag}", _Encoder(cfg, draw), x, rng)
        results += _check_mean_pool(rng, B, L, d)
        widths = [d] + [int(w) for w in rng.integers(2, 7, size=int(rng.integers(1, 3)))] + [d]
        results += _check_layer(f"mlp{tag}", MLP("mlp", widths), x[:, 0], rng)
        results += _check_layer(
            f"mixer{tag}", MixerBlock("mix", 2, d, int(rng.integers(2, 5)), int(rng.integers(2, 5))),
            rng.normal(size=(B, 2, d)), rng,
        )
        results += _check_model_loss(rng, FORK_VARIANTS[draw % len(FORK_VARIANTS)], draw)
    return results
