"""Training loop: single-structure batches, margin loss, Adam, periodic validation, checkpointing."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .config import coerce, read_config
from .evaluation import RankingReport, mrr
from .model import ModelConfig, Pathformer
from .nn import NumericError, adam_step
from .queries import NEGATION_STRUCTURES, abstract
from .sampler import QueryInstance, sample_negatives

logger = logging.getLogger(__name__)

REGIMES = {
    "epfo-5": ("1p", "2p", "3p", "2i", "3i"),
    "fol-10": ("1p", "2p", "3p", "2i", "3i") + NEGATION_STRUCTURES,
}


@dataclass
class TrainConfig:
    regime: str = "epfo-5"
    d: int = 32
    k1: int = 1
    k2: int = 2
    heads: int = 4
    d_ffn: int | None = None
    dropout: float = 0.0
    mask_mode: str = "bidirectional"
    positional_encoding: str = "sinusoidal"
    fork_variant: str = "mlp"
    lr: float = 1e-3
    u: int = 16
    batch_size: int = 64
    gamma: float = 12.0
    max_steps: int = 5000
    valid_interval: int = 0
    log_interval: int = 100
    seed: int = 0
    dtype: str = "float32"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {sorted(REGIMES)}")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if self.u < 1:
            raise ValueError("u must be >= 1")
        if self.batch_size < 1 or self.max_steps < 0:
            raise ValueError("batch_size must be >= 1 and max_steps >= 0")

    @classmethod
    def full_scale(cls, **overrides) -> "TrainConfig":
        """Full-benchmark settings: d=800, six encoder layers, 128 negatives, batch 512, margin 24."""
        base = dict(
            d=800, k1=6, heads=8, d_ffn=3200, dropout=0.1, lr=1e-4, u=128,
            batch_size=512, gamma=24.0, max_steps=300_000,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "TrainConfig":
        return cls(**coerce(cls, mapping))

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        return cls.from_mapping(read_config(path))

    @property
    def structures(self) -> tuple:
        return REGIMES[self.regime]

    def model_config(self, n_entities: int, n_relations: int) -> ModelConfig:
        return ModelConfig(
            n_entities=n_entities,
            n_relations=n_relations,
            d=self.d,
            k1=self.k1,
            heads=self.heads,
            d_ffn=self.d_ffn,
            dropout=self.dropout,
            mask_mode=self.mask_mode,
            positional_encoding=self.positional_encoding,
            fork_variant=self.fork_variant,
            k2=self.k2,
            gamma=self.gamma,
            seed=self.seed,
            dtype=self.dtype,
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class _StructureBatch:
    index_tree: object
    instances: list
    anchors: np.ndarray
    relations: np.ndarray
    example_query: np.ndarray
    example_answer: np.ndarray


@dataclass
class TrainResult:
    model: Pathformer
    log: list = field(default_factory=list)
    validations: list = field(default_factory=list)
    best_step: int | None = None
    best_score: float | None = None


def _group(instances: Sequence[QueryInstance]) -> dict[str, _StructureBatch]:
    by_structure: dict[str, list] = {}
    for inst in instances:
        by_structure.setdefault(inst.structure, []).append(inst)
    groups = {}
    for name in sorted(by_structure):
        insts = by_structure[name]
        shapes = [abstract(inst.tree) for inst in insts]
        q_idx, answers = [], []
        for k, inst in enumerate(insts):
            for e in sorted(inst.answers_train):
                q_idx.append(k)
                answers.append(e)
        groups[name] = _StructureBatch(
            shapes[0][0],
            insts,
            np.array([s[1] for s in shapes], dtype=np.int64),
            np.array([s[2] for s in shapes], dtype=np.int64),
            np.array(q_idx, dtype=np.int64),
            np.array(answers, dtype=np.int64),
        )
    return groups


def validate(model: Pathformer, instances: Sequence[QueryInstance]) -> dict:
    """Per-structure validation MRR plus ``"mean"``; empty input gives an empty map."""
    if not instances:
        return {}
    report = mrr(instances, model, stage="valid")
    out = dict(report.mrr)
    out["mean"] = report.mean
    return out


def train(
    split,
    instances: Sequence[QueryInstance],
    config: TrainConfig,
    valid_instances: Sequence[QueryInstance] = (),
    checkpoint_path=None,
    log_path=None,
) -> TrainResult:
    """Train a fresh model on ``instances``.

    ``split`` only supplies vocabulary sizes (anything with ``n_entities``
    and ``n_relations``). Each step draws one structure uniformly, then a
    batch of (query, answer) examples of that structure with ``config.u``
    negatives each. With ``valid_instances`` and ``valid_interval > 0`` the
    checkpoint with the best mean validation MRR is kept; otherwise the
    final parameters are written.
    """
    admissible = set(config.structures)
    bad = sorted({inst.structure for inst in instances} - admissible)
    if bad:
        raise ValueError(f"structures {bad} are not trained under regime {config.regime!r}")
    groups = _group([inst for inst in instances if inst.answers_train])
    if not groups:
        raise ValueError("no training instances with non-empty training answers")
    n_entities, n_relations = split.n_entities, split.n_relations
    model = Pathformer(config.model_config(n_entities, n_relations))
    rng = np.random.default_rng(config.seed)
    names = list(groups)
    result = TrainResult(model)
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    meta = {"seed": config.seed, "train_config": config.to_dict()}
    if log_fh:
        log_fh.write(json.dumps({"meta": meta}, sort_keys=True) + "\n")

    def save(step, score):
        if checkpoint_path:
            model.save(checkpoint_path, seed=config.seed, step=step, valid_mrr=score, train_config=config.to_dict())

    try:
        for step in range(1, config.max_steps + 1):
            name = names[rng.integers(len(names))]
            g = groups[name]
            pick = rng.integers(len(g.example_answer), size=config.batch_size)
            q = g.example_query[pick]
            negatives = np.array(
                [sample_negatives(g.instances[k], n_entities, config.u, rng) for k in q], dtype=np.int64
            )
            loss = model.loss_and_grad(g.index_tree, g.anchors[q], g.relations[q], g.example_answer[pick], negatives, step=step)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at step {step} (structure {name})")
            adam_step(model.store, config.lr, config.beta1, config.beta2, config.eps)
            if config.log_interval and step % config.log_interval == 0:
                record = {"step": step, "loss": loss, "structure": name}
                result.log.append(record)
                if log_fh:
                    log_fh.write(json.dumps(record) + "\n")
            if valid_instances and config.valid_interval and step % config.valid_interval == 0:
                scores = validate(model, valid_instances)
                trained = [scores[s] for s in config.structures if s in scores]
                score = float(np.mean(trained)) if trained else scores.get("mean")
                result.validations.append({"step": step, **scores})
                logger.info("step %d validation mean MRR %.4f", step, score)
                if score is not None and (result.best_score is None or score > result.best_score):
                    result.best_score, result.best_step = score, step
                    save(step, score)
    finally:
        if log_fh:
            log_fh.close()
    if result.best_step is None:
        result.best_step = config.max_steps
        save(config.max_steps, None)
    elif checkpoint_path:
        model, _ = Pathformer.load(checkpoint_path)
        result.model = model
    return result


def load_model(path) -> Pathformer:
    model, _ = Pathformer.load(path)
    return model


def evaluate_checkpoint(path, instances, stage="test") -> RankingReport:
    return mrr(instances, load_model(path), stage)
