"""Filtered MRR over non-trivial answers, per-structure reports and ablation tables."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .oracle import non_trivial_answers
from .queries import EPFO_STRUCTURES, NEGATION_STRUCTURES, STRUCTURES

logger = logging.getLogger(__name__)

EVAL_STAGES = ("train", "valid", "test")


class RankingMisuse(ValueError):
    """Ranking an entity that is not a non-trivial answer of the query."""


class VocabularyMismatch(ValueError):
    pass


def stage_sets(instance, stage: str) -> tuple[frozenset, frozenset]:
    """``(answers to rank, answers filtered from the pool)`` for a stage.

    ``train`` ranks every training answer against training non-answers; it
    measures fit rather than generalization.
    """
    if stage == "train":
        return instance.answers_train, instance.answers_train
    if stage == "valid":
        return non_trivial_answers(instance, "valid"), instance.answers_valid
    if stage == "test":
        return non_trivial_answers(instance, "test"), instance.answers_test
    raise ValueError(f"stage must be one of {EVAL_STAGES}, got {stage!r}")


def filtered_ranks(distances: np.ndarray, answers, filtered) -> np.ndarray:
    """Mid-rank of each answer among itself plus every entity outside ``filtered``.

    rank = 1 + #{strictly closer} + 0.5 * #{equally close}.
    """
    distances = np.asarray(distances)
    answers = np.fromiter(sorted(answers), dtype=np.int64)
    keep = np.ones(distances.shape[0], dtype=bool)
    keep[np.fromiter(filtered, dtype=np.int64, count=len(filtered))] = False
    pool = np.sort(distances[keep])
    target = distances[answers]
    closer = np.searchsorted(pool, target, side="left")
    not_farther = np.searchsorted(pool, target, side="right")
    return 1.0 + closer + 0.5 * (not_farther - closer)


def rank_entity(entity: int, instance, model, stage: str = "test") -> float:
    answers, filtered = stage_sets(instance, stage)
    if entity not in answers:
        raise RankingMisuse(f"entity {entity} is not a {stage} answer of {instance.structure} query")
    dist = model.distances([instance.tree])[0]
    return float(filtered_ranks(dist, [entity], filtered)[0])


def _mean(values) -> float:
    # correctly rounded, so the result does not depend on summation order
    values = [float(v) for v in values]
    return math.fsum(values) / len(values)


def query_metric(distances, instance, stage: str) -> float:
    """Mean reciprocal rank over a query's stage answers."""
    answers, filtered = stage_sets(instance, stage)
    return _mean(1.0 / filtered_ranks(distances, answers, filtered))


@dataclass
class RankingReport:
    mrr: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    stage: str = "test"

    @property
    def percent(self) -> dict:
        return {s: 100.0 * v for s, v in self.mrr.items()}

    def _group_mean(self, group) -> float | None:
        values = [self.mrr[s] for s in group if s in self.mrr]
        return float(np.mean(values)) if values else None

    @property
    def epfo_mean(self) -> float | None:
        return self._group_mean(EPFO_STRUCTURES)

    @property
    def negation_mean(self) -> float | None:
        return self._group_mean(NEGATION_STRUCTURES)

    @property
    def mean(self) -> float | None:
        return self._group_mean(STRUCTURES)

    def mean_over(self, structures) -> float | None:
        return self._group_mean(structures)

    def to_dict(self) -> dict:
        def pct(x):
            return None if x is None else 100.0 * x

        return {
            "stage": self.stage,
            "structures": {
                s: {"mrr": self.mrr[s], "mrr_percent": 100.0 * self.mrr[s], "queries": self.counts[s]}
                for s in self.ordered()
            },
            "epfo_mean": self.epfo_mean,
            "epfo_mean_percent": pct(self.epfo_mean),
            "negation_mean": self.negation_mean,
            "negation_mean_percent": pct(self.negation_mean),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def ordered(self) -> list[str]:
        return [s for s in STRUCTURES if s in self.mrr] + sorted(s for s in self.mrr if s not in STRUCTURES)

    def to_text(self) -> str:
        lines = [f"{'structure':<10}{'queries':>9}{'MRR%':>9}"]
        for s in self.ordered():
            lines.append(f"{s:<10}{self.counts[s]:>9d}{100.0 * self.mrr[s]:>9.2f}")
        for label, value in (("EPFO avg", self.epfo_mean), ("neg avg", self.negation_mean)):
            if value is not None:
                lines.append(f"{label:<10}{'':>9}{100.0 * value:>9.2f}")
        return "\n".join(lines)


def mrr(instances: Sequence, model, stage: str = "test", batch_size: int = 256) -> RankingReport:
    """Per-structure filtered MRR; each query contributes the mean 1/rank over its stage answers."""
    usable = []
    for inst in instances:
        answers, _ = stage_sets(inst, stage)
        if answers:
            usable.append(inst)
    if len(usable) < len(instances):
        logger.warning("skipped %d queries without %s answers", len(instances) - len(usable), stage)
    per_structure: dict[str, list[float]] = {}
    for lo in range(0, len(usable), batch_size):
        chunk = usable[lo : lo + batch_size]
        dist = model.distances([inst.tree for inst in chunk])
        for inst, row in zip(chunk, dist):
            per_structure.setdefault(inst.structure, []).append(query_metric(row, inst, stage))
    return RankingReport(
        {s: _mean(v) for s, v in per_structure.items()},
        {s: len(v) for s, v in per_structure.items()},
        stage,
    )


@dataclass
class AblationTable:
    names: list
    reports: list

    def deltas(self) -> dict:
        """Per-structure MRR% difference of every model against the first."""
        base = self.reports[0]
        out = {}
        for name, rep in zip(self.names[1:], self.reports[1:]):
            out[name] = {s: 100.0 * (rep.mrr[s] - base.mrr[s]) for s in rep.mrr if s in base.mrr}
        return out

    def to_text(self) -> str:
        structures = [s for s in STRUCTURES if any(s in r.mrr for r in self.reports)]
        width = max(12, *(len(n) + 2 for n in self.names))
        header = f"{'structure':<10}" + "".join(f"{n:>{width}}" for n in self.names)
        header += "".join(f"{'Δ ' + n:>{width}}" for n in self.names[1:])
        lines = [header]

        def cell(value):
            return f"{'-':>{width}}" if value is None else f"{100.0 * value:>{width}.2f}"

        rows = [(s, [r.mrr.get(s) for r in self.reports]) for s in structures]
        rows.append(("EPFO avg", [r.epfo_mean for r in self.reports]))
        rows.append(("neg avg", [r.negation_mean for r in self.reports]))
        for label, values in rows:
            if all(v is None for v in values):
                continue
            line = f"{label:<10}" + "".join(cell(v) for v in values)
            b = values[0]
            for v in values[1:]:
                line += f"{'-':>{width}}" if v is None or b is None else f"{100.0 * (v - b):>+{width}.2f}"
            lines.append(line)
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "models": {n: r.to_dict() for n, r in zip(self.names, self.reports)},
            "deltas_percent": self.deltas(),
        }


def ablation_table(models: Mapping[str, object], instances: Sequence, stage: str = "test") -> AblationTable:
    names = list(models)
    if not names:
        raise ValueError("need at least one model")
    vocab = {(m.config.n_entities, m.config.n_relations) for m in models.values()}
    if len(vocab) > 1:
        raise VocabularyMismatch(f"models disagree on (entities, relations): {sorted(vocab)}")
    return AblationTable(names, [mrr(instances, models[n], stage) for n in names])
