"""Grounded query instances, backward-walk query sampling, and negative sampling."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .kg import GraphSplit, KnowledgeGraph
from .oracle import answer_set, non_trivial_answers
from .queries import (
    TEMPLATES,
    Anchor,
    Intersection,
    Negation,
    Projection,
    QueryTree,
    Union,
    flatten,
    instantiate,
    structure_of,
)

logger = logging.getLogger(__name__)


class SamplingShortfall(UserWarning):
    """Fewer instances were produced than requested."""


@dataclass(frozen=True)
class QueryInstance:
    structure: str
    anchors: tuple
    relations: tuple
    answers_train: frozenset
    answers_valid: frozenset
    answers_test: frozenset
    tree: QueryTree = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "anchors", tuple(int(x) for x in self.anchors))
        object.__setattr__(self, "relations", tuple(int(x) for x in self.relations))
        for name in ("answers_train", "answers_valid", "answers_test"):
            value = getattr(self, name)
            object.__setattr__(self, name, frozenset(int(x) for x in value) if value is not None else None)
        object.__setattr__(self, "tree", instantiate(self.structure, self.anchors, self.relations))

    @classmethod
    def from_tree(cls, tree: QueryTree, split: GraphSplit, structure: str | None = None) -> "QueryInstance":
        structure = structure or structure_of(tree)
        if structure is None:
            raise ValueError("tree does not match any benchmark template")
        anchors, relations = flatten(tree)
        return cls(
            structure,
            anchors,
            relations,
            answer_set(split.train, tree),
            answer_set(split.valid, tree),
            answer_set(split.test, tree),
        )

    def answers(self, stage: str) -> frozenset:
        return {"train": self.answers_train, "valid": self.answers_valid, "test": self.answers_test}[stage]

    def to_dict(self) -> dict:
        return {
            "structure": self.structure,
            "anchors": list(self.anchors),
            "relations": list(self.relations),
            "answers_train": sorted(self.answers_train),
            "answers_valid": sorted(self.answers_valid),
            "answers_test": sorted(self.answers_test),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QueryInstance":
        return cls(
            d["structure"],
            d["anchors"],
            d["relations"],
            d.get("answers_train"),
            d.get("answers_valid"),
            d.get("answers_test"),
        )


def write_jsonl(instances: Iterable[QueryInstance], path, meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if meta is not None:
            fh.write(json.dumps({"meta": meta}, sort_keys=True) + "\n")
        for inst in instances:
            fh.write(json.dumps(inst.to_dict()) + "\n")


def read_jsonl(path) -> list[QueryInstance]:
    """Read query instances, skipping a leading ``{"meta": ...}`` header line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            if "meta" in record and "structure" not in record:
                continue
            out.append(QueryInstance.from_dict(record))
    return out


def read_jsonl_meta(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if first.strip():
        record = json.loads(first)
        if "meta" in record and "structure" not in record:
            return record["meta"]
    return {}


# -- sampling -----------------------------------------------------------------


@dataclass
class SamplerConfig:
    counts: dict = field(default_factory=dict)
    max_answers: int = 100
    seed: int = 0
    max_attempts: int = 100

    def __post_init__(self):
        if any(c < 0 for c in self.counts.values()):
            raise ValueError("per-template counts must be >= 0")
        if self.max_answers < 1:
            raise ValueError("max_answers must be >= 1")
        unknown = set(self.counts) - set(TEMPLATES)
        if unknown:
            raise ValueError(f"unknown templates in sampler config: {sorted(unknown)}")

    @classmethod
    def from_mapping(cls, cfg: dict) -> "SamplerConfig":
        counts = {}
        kwargs = {}
        for key, value in cfg.items():
            if key.startswith("count."):
                counts[key[len("count."):]] = int(value)
            elif key in ("max_answers", "seed", "max_attempts"):
                kwargs[key] = int(value)
        return cls(counts=counts, **kwargs)


class _Grounder:
    def __init__(self, graph: KnowledgeGraph, rng: np.random.Generator):
        self.graph = graph
        self.rng = rng
        # reverse edges are only needed here, for walking from an answer back to anchors
        incoming: dict[int, list[tuple[int, int]]] = {}
        for h, r, t in sorted(graph.triples):
            incoming.setdefault(t, []).append((h, r))
        self.incoming = incoming
        self.targets = np.array(sorted(incoming), dtype=np.int64)

    def random_target(self) -> int:
        return int(self.targets[self.rng.integers(len(self.targets))])

    def ground(self, node, target):
        """Ground ``node`` so that ``target`` is among its answers, or return None."""
        if isinstance(node, Anchor):
            return Anchor(int(target))
        if isinstance(node, Projection):
            edges = self.incoming.get(int(target))
            if not edges:
                return None
            h, r = edges[self.rng.integers(len(edges))]
            child = self.ground(node.child, h)
            return None if child is None else Projection(child, int(r))
        if isinstance(node, Negation):
            return self.ground_negated(node.child, target)
        children = []
        for c in node.children:
            g = self.ground(c, target)
            if g is None:
                return None
            children.append(g)
        if len(set(children)) < len(children):
            return None
        return type(node)(children)

    def ground_negated(self, inner, target, tries: int = 10):
        for _ in range(tries):
            sub = self.ground(inner, self.random_target())
            if sub is not None and target not in answer_set(self.graph, sub):
                return Negation(sub)
        return None


def sample_queries(
    split: GraphSplit, template: str, config: SamplerConfig, stage: str = "train", rng=None
) -> list[QueryInstance]:
    """Sample grounded instances of one template.

    Each attempt picks an answer entity on the stage graph and walks the
    template's edges backwards to the anchors. Instances whose answer set
    on the stage graph exceeds ``config.max_answers`` are rejected, and for
    valid/test stages so are those without non-trivial answers. If the
    attempt budget runs out, the partial list is returned and a
    :class:`SamplingShortfall` warning is issued.
    """
    count = config.counts.get(template, 0)
    if template not in TEMPLATES:
        raise ValueError(f"unknown template {template!r}")
    if count == 0:
        return []
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    graph = split.graph(stage)
    grounder = _Grounder(graph, rng)
    shape = TEMPLATES[template]
    out: list[QueryInstance] = []
    budget = count * config.max_attempts
    attempts = 0
    while len(out) < count and attempts < budget and len(grounder.targets):
        attempts += 1
        target = grounder.random_target()
        tree = grounder.ground(shape, target)
        if tree is None:
            continue
        answers = answer_set(graph, tree)
        if not answers or len(answers) > config.max_answers:
            continue
        inst = QueryInstance.from_tree(tree, split, template)
        if stage != "train" and not non_trivial_answers(inst, stage):
            continue
        out.append(inst)
    if len(out) < count:
        msg = f"{template}/{stage}: sampled {len(out)} of {count} after {attempts} attempts"
        logger.warning(msg)
        warnings.warn(msg, SamplingShortfall, stacklevel=2)
    return out


def sample_dataset(split: GraphSplit, config: SamplerConfig, stage: str = "train") -> tuple[list[QueryInstance], dict]:
    """Sample every template in ``config.counts``; returns instances and a shortfall report.

    Each template draws from its own generator seeded by ``(seed, template index)``.
    """
    instances: list[QueryInstance] = []
    shortfall: dict[str, int] = {}
    names = list(TEMPLATES)
    for template in sorted(config.counts, key=names.index):
        rng = np.random.default_rng([config.seed, names.index(template), ["train", "valid", "test"].index(stage)])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SamplingShortfall)
            got = sample_queries(split, template, config, stage=stage, rng=rng)
        missing = config.counts[template] - len(got)
        if missing:
            shortfall[template] = missing
        instances.extend(got)
    return instances, shortfall


def sample_negatives(instance: QueryInstance, n_entities, u: int, rng: np.random.Generator) -> list[int]:
    """Draw ``u`` distinct entities uniformly from the complement of the training answers.

    ``n_entities`` is an entity count or anything with an ``n_entities`` attribute
    (a graph or split).
    """
    n_entities = int(getattr(n_entities, "n_entities", n_entities))
    if u < 1:
        raise ValueError("u must be >= 1")
    answers = instance.answers_train
    available = n_entities - len(answers)
    if available < u:
        raise ValueError(
            f"instance {instance.structure}{instance.anchors}{instance.relations} has only "
            f"{available} non-answers, cannot draw {u} negatives"
        )
    return _draw_excluding(n_entities, answers, u, rng)


def _draw_excluding(n_entities: int, excluded, u: int, rng: np.random.Generator) -> list[int]:
    available = n_entities - len(excluded)
    if available < 2 * u:
        pool = np.setdiff1d(np.arange(n_entities), np.fromiter(excluded, dtype=np.int64, count=len(excluded)))
        return [int(x) for x in rng.choice(pool, size=u, replace=False)]
    # rejection keeps draws uniform over u-subsets of the complement
    picked: list[int] = []
    seen = set(excluded)
    while len(picked) < u:
        for x in rng.integers(n_entities, size=2 * (u - len(picked))):
            x = int(x)
            if x not in seen:
                seen.add(x)
                picked.append(x)
                if len(picked) == u:
                    break
    return picked
