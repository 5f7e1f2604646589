"""The Pathformer query embedder.

A query tree is rewritten into union-free disjuncts, each disjunct is split
into path and fork steps, path steps are encoded by a transformer encoder
followed by mean pooling, and fork steps by a small network over the
concatenated pair of branch embeddings. Entities are scored by L1 distance
to the query embedding (minimum over disjuncts).

Batched encoding works on *index trees* (see :func:`pathformer.queries.abstract`):
every query in a batch has the same shape, and the actual anchor and
relation ids arrive as ``batch x n`` integer arrays.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .nn import (
    MLP,
    DropoutContext,
    EncoderConfig,
    MixerBlock,
    ParameterStore,
    TransformerEncoder,
    mean_pool,
    mean_pool_backward,
)
from .nn.checkpoint import load_into, read_checkpoint, save_checkpoint
from .nn.layers import assert_finite
from .queries import (
    AnchorStart,
    DecompositionPlan,
    ForkStep,
    Negate,
    PathQuery,
    PathStep,
    Project,
    QueryStructureError,
    QueryTree,
    abstract,
    decompose,
    to_dnf,
)

FORK_VARIANTS = ("mlp", "mixer", "mlp2vector")


@dataclass
class ModelConfig:
    n_entities: int
    n_relations: int
    d: int = 32
    k1: int = 1
    heads: int = 4
    d_ffn: int | None = None
    dropout: float = 0.0
    mask_mode: str = "bidirectional"
    positional_encoding: str = "sinusoidal"
    fork_variant: str = "mlp"
    k2: int = 2
    fork_hidden: int | None = None
    gamma: float = 12.0
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.fork_variant not in FORK_VARIANTS:
            raise ValueError(f"fork_variant must be one of {FORK_VARIANTS}")
        if self.k2 < 1:
            raise ValueError("k2 must be >= 1")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if self.d_ffn is None:
            self.d_ffn = 4 * self.d
        if self.fork_hidden is None:
            self.fork_hidden = self.d
        self.encoder_config()

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.d, self.k1, self.heads, self.d_ffn, self.dropout, self.mask_mode, self.positional_encoding)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class QueryEmbedding:
    """One vector per DNF disjunct."""

    disjuncts: list = field(default_factory=list)

    def __post_init__(self):
        if not self.disjuncts:
            raise ValueError("a query embedding needs at least one disjunct")

    def __len__(self):
        return len(self.disjuncts)


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def margin_loss(pos_dist: float, neg_dists: Sequence[float], gamma: float) -> float:
    """-log σ(γ - d⁺) - mean_j log σ(d⁻_j - γ)."""
    neg = np.asarray(neg_dists, dtype=np.float64)
    if neg.size == 0:
        raise ValueError("need at least one negative")
    return float(softplus(pos_dist - gamma) + softplus(gamma - neg).mean())


class Pathformer:
    def __init__(self, config: ModelConfig, store: ParameterStore | None = None, debug: bool = False):
        self.config = config
        self.debug = debug
        d = config.d
        self.encoder = TransformerEncoder("path_encoder", config.encoder_config())
        hidden = [config.fork_hidden] * (config.k2 - 1)
        if config.fork_variant == "mlp":
            self.forks = [MLP("fork", [2 * d, *hidden, d])]
        elif config.fork_variant == "mlp2vector":
            self.forks = [MLP("fork_a", [2 * d, *hidden, d]), MLP("fork_b", [2 * d, *hidden, d])]
        else:
            self.forks = [MixerBlock("fork_mixer", 2, d, config.fork_hidden, config.fork_hidden)]
        self._plans: dict = {}
        if store is None:
            store = ParameterStore(np.dtype(config.dtype))
            self._init(store, np.random.default_rng(config.seed))
        self.store = store

    def _init(self, store, rng):
        d = self.config.d
        bound = self.config.gamma / d
        store.add("entity", rng.uniform(-bound, bound, size=(self.config.n_entities, d)))
        store.add("relation", rng.uniform(-bound, bound, size=(self.config.n_relations, d)))
        store.add("negation", rng.uniform(-bound, bound, size=(1, d)))
        self.encoder.init(store, rng)
        for f in self.forks:
            f.init(store, rng)

    @property
    def n_entities(self) -> int:
        return self.config.n_entities

    @property
    def dtype(self):
        return self.store.dtype

    # -- single-query operations -------------------------------------------

    def build_input_sequence(self, path: PathQuery, start: np.ndarray) -> np.ndarray:
        """``1 x (1 + k) x d`` input: start vector, then a relation row or the negation row per operator."""
        rows = [np.asarray(start, dtype=self.dtype)]
        for op in path.ops:
            if isinstance(op, Project):
                rows.append(self.store["relation"][op.relation])
            elif isinstance(op, Negate):
                rows.append(self.store["negation"][0])
            else:
                raise TypeError(f"unknown path operator {op!r}")
        return np.stack(rows)[None]

    def resolve_start(self, path: PathQuery, slots: dict | None = None) -> np.ndarray:
        if isinstance(path.start, AnchorStart):
            return self.store["entity"][path.start.entity]
        if slots is None or path.start.slot not in slots:
            raise QueryStructureError(f"fork slot {path.start.slot} used before it was computed")
        return slots[path.start.slot]

    def encode_path(self, path: PathQuery, start: np.ndarray) -> np.ndarray:
        seq = self.build_input_sequence(path, start)
        out, _ = self.encoder.forward(self.store, seq)
        pooled, _ = mean_pool(out)
        return pooled[0]

    def encode_fork(self, left: np.ndarray, right: np.ndarray) -> np.ndarray:
        out, _ = self._fork_forward(np.asarray(left, self.dtype)[None], np.asarray(right, self.dtype)[None])
        return out[0]

    def run_plan(self, plan: DecompositionPlan) -> np.ndarray:
        """Execute a plan over real ids step by step; returns the root vector."""
        slots: dict[int, np.ndarray] = {}
        for step in plan.steps:
            if isinstance(step, PathStep):
                slots[step.output] = self.encode_path(step.path, self.resolve_start(step.path, slots))
            else:
                left, right = (slots[s] for s in step.inputs)
                slots[step.output] = self.encode_fork(left, right)
        return slots[plan.root_slot]

    def encode_query(self, tree: QueryTree) -> QueryEmbedding:
        vectors = []
        for disjunct in to_dnf(tree):
            index_tree, anchors, relations = abstract(disjunct)
            root, _ = self._forward(
                self.plan(index_tree), np.array([anchors], dtype=np.int64), np.array([relations], dtype=np.int64)
            )
            vectors.append(root[0])
        return QueryEmbedding(vectors)

    def distance(self, entity: int, query: QueryEmbedding) -> float:
        v = self.store["entity"][entity]
        return float(min(np.abs(v - q).sum() for q in query.disjuncts))

    def loss(self, query: QueryEmbedding, positive: int, negatives: Sequence[int]) -> float:
        return margin_loss(
            self.distance(positive, query), [self.distance(e, query) for e in negatives], self.config.gamma
        )

    # -- batched machinery ---------------------------------------------------

    def plan(self, index_tree) -> DecompositionPlan:
        plan = self._plans.get(index_tree)
        if plan is None:
            plan = self._plans[index_tree] = decompose(index_tree)
        return plan

    def _fork_forward(self, a, b):
        variant = self.config.fork_variant
        if variant == "mixer":
            y, c = self.forks[0].forward(self.store, np.stack([a, b], axis=1))
            pooled, n = mean_pool(y)
            return pooled, (c, n)
        x = np.concatenate([a, b], axis=-1)
        if variant == "mlp":
            return self.forks[0].forward(self.store, x)
        ya, ca = self.forks[0].forward(self.store, x)
        yb, cb = self.forks[1].forward(self.store, x)
        return (ya + yb) * self.dtype.type(0.5), (ca, cb)

    def _fork_backward(self, dy, cache):
        d = self.config.d
        variant = self.config.fork_variant
        if variant == "mixer":
            c, n = cache
            dx = self.forks[0].backward(self.store, mean_pool_backward(dy, n), c)
            return dx[:, 0], dx[:, 1]
        if variant == "mlp":
            dx = self.forks[0].backward(self.store, dy, cache)
        else:
            half = dy * self.dtype.type(0.5)
            dx = self.forks[0].backward(self.store, half, cache[0]) + self.forks[1].backward(self.store, half, cache[1])
        return dx[:, :d], dx[:, d:]

    def _forward(self, plan, anchors, relations, training=False, drop=None):
        ent, rel, neg = self.store["entity"], self.store["relation"], self.store["negation"]
        B = anchors.shape[0]
        slots: dict[int, np.ndarray] = {}
        caches = []
        for step in plan.steps:
            if isinstance(step, PathStep):
                start = step.path.start
                first = ent[anchors[:, start.entity]] if isinstance(start, AnchorStart) else slots[start.slot]
                tokens = [first]
                for op in step.path.ops:
                    tokens.append(rel[relations[:, op.relation]] if isinstance(op, Project) else np.broadcast_to(neg, (B, neg.shape[1])))
                seq = np.stack(tokens, axis=1)
                out, c = self.encoder.forward(self.store, seq, training=training, drop=drop)
                pooled, length = mean_pool(out)
                slots[step.output] = pooled
                caches.append((c, length))
            else:
                left, right = (slots[s] for s in step.inputs)
                slots[step.output], c = self._fork_forward(left, right)
                caches.append(c)
            if self.debug:
                assert_finite(slots[step.output], f"plan step {step.output}")
        return slots[plan.root_slot], caches

    def _backward(self, plan, anchors, relations, caches, droot):
        grads = self.store.grads
        dslots: dict[int, np.ndarray] = {plan.root_slot: droot}
        for step, cache in zip(reversed(plan.steps), reversed(caches)):
            dout = dslots.pop(step.output, None)
            if dout is None:
                continue
            if isinstance(step, PathStep):
                c, length = cache
                dseq = self.encoder.backward(self.store, mean_pool_backward(dout, length), c)
                start = step.path.start
                if isinstance(start, AnchorStart):
                    np.add.at(grads["entity"], anchors[:, start.entity], dseq[:, 0])
                else:
                    dslots[start.slot] = dslots.get(start.slot, 0) + dseq[:, 0]
                for k, op in enumerate(step.path.ops, start=1):
                    if isinstance(op, Project):
                        np.add.at(grads["relation"], relations[:, op.relation], dseq[:, k])
                    else:
                        grads["negation"][0] += dseq[:, k].sum(axis=0)
            else:
                da, db = self._fork_backward(dout, cache)
                for s, g in zip(step.inputs, (da, db)):
                    dslots[s] = dslots.get(s, 0) + g
        return dslots

    def embed_batch(self, index_tree, anchors, relations) -> np.ndarray:
        """Root vectors for a batch of union-free queries sharing ``index_tree``."""
        root, _ = self._forward(self.plan(index_tree), np.asarray(anchors, np.int64), np.asarray(relations, np.int64))
        return root

    def loss_and_grad(
        self, index_tree, anchors, relations, positives, negatives, step: int = 0, training: bool = True, backward: bool = True
    ) -> float:
        """Mean margin loss over a batch; gradients are accumulated into ``store.grads``.

        ``positives`` is ``batch``, ``negatives`` is ``batch x u``. With
        ``backward=False`` only the loss is computed.
        """
        plan = self.plan(index_tree)
        anchors = np.asarray(anchors, np.int64).reshape(len(positives), -1)
        relations = np.asarray(relations, np.int64).reshape(len(positives), -1)
        positives = np.asarray(positives, np.int64)
        negatives = np.asarray(negatives, np.int64)
        drop = DropoutContext(self.config.seed, step) if training else None
        q, caches = self._forward(plan, anchors, relations, training=training, drop=drop)
        ent = self.store["entity"]
        B, u = negatives.shape
        gamma = self.config.gamma
        diff_pos = ent[positives] - q
        diff_neg = ent[negatives] - q[:, None, :]
        d_pos = np.abs(diff_pos).sum(axis=-1)
        d_neg = np.abs(diff_neg).sum(axis=-1)
        loss = (softplus(d_pos - gamma) + softplus(gamma - d_neg).mean(axis=1)).mean()
        if not backward:
            return float(loss)
        g_pos = (sigmoid(d_pos - gamma) / B).astype(self.dtype)
        g_neg = (-sigmoid(gamma - d_neg) / (u * B)).astype(self.dtype)
        de_pos = g_pos[:, None] * np.sign(diff_pos)
        de_neg = g_neg[:, :, None] * np.sign(diff_neg)
        dq = -de_pos - de_neg.sum(axis=1)
        grads = self.store.grads["entity"]
        np.add.at(grads, positives, de_pos)
        np.add.at(grads, negatives.reshape(-1), de_neg.reshape(-1, de_neg.shape[-1]))
        self._backward(plan, anchors, relations, caches, dq)
        return float(loss)

    def query_vectors(self, trees: Sequence[QueryTree], batch_size: int = 256) -> list[list[np.ndarray]]:
        """Disjunct vectors for many trees, batching queries that share a shape."""
        groups: dict = {}
        for t, tree in enumerate(trees):
            for k, disjunct in enumerate(to_dnf(tree)):
                index_tree, anchors, relations = abstract(disjunct)
                groups.setdefault(index_tree, []).append((t, k, anchors, relations))
        out: list[dict] = [dict() for _ in trees]
        for index_tree, rows in groups.items():
            for lo in range(0, len(rows), batch_size):
                chunk = rows[lo : lo + batch_size]
                anchors = np.array([r[2] for r in chunk], dtype=np.int64).reshape(len(chunk), -1)
                relations = np.array([r[3] for r in chunk], dtype=np.int64).reshape(len(chunk), -1)
                vecs = self.embed_batch(index_tree, anchors, relations)
                for (t, k, _, _), v in zip(chunk, vecs):
                    out[t][k] = v
        return [[d[k] for k in sorted(d)] for d in out]

    def distances(self, trees: Sequence[QueryTree], batch_size: int = 256) -> np.ndarray:
        """``len(trees) x n_entities`` L1 distances, minimum over each query's disjuncts."""
        ent = self.store["entity"]
        result = np.empty((len(trees), self.n_entities), dtype=self.dtype)
        for t, vectors in enumerate(self.query_vectors(trees, batch_size)):
            result[t] = np.min([np.abs(ent - v).sum(axis=1) for v in vectors], axis=0)
        return result

    # -- persistence -----------------------------------------------------------

    def metadata(self, **extra) -> dict:
        meta = {
            "format": "pathformer",
            "model": self.config.to_dict(),
            "init": "weights U(+-1/sqrt(fan_in)), biases 0, embeddings U(+-gamma/d)",
        }
        meta.update(extra)
        return meta

    def save(self, path, include_optimizer: bool = True, **extra) -> None:
        save_checkpoint(path, self.store, self.metadata(**extra), include_optimizer=include_optimizer)

    @classmethod
    def load(cls, path) -> tuple["Pathformer", dict]:
        meta, records = read_checkpoint(path)
        if meta.get("format") != "pathformer":
            raise ValueError(f"{path}: not a pathformer checkpoint")
        config = ModelConfig(**meta["model"])
        model = cls(config)
        load_into(model.store, records)
        return model, meta
