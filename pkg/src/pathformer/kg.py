"""Knowledge graphs, their train/valid/test split chain, and relational projection."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

import numpy as np

logger = logging.getLogger(__name__)

EMPTY = frozenset()


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class TripleParseError(ValueError):
    """A triple file row that does not have exactly three tab-separated fields."""

    def __init__(self, path, lineno, line):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: expected 3 tab-separated fields, got {line!r}")


class DomainError(ValueError):
    """An entity or relation id outside the graph's vocabulary."""


class Vocabulary:
    """Bijection between names and dense ids, assigned in first-appearance order."""

    def __init__(self, names: Iterable[str] = ()):
        self._names: list[str] = []
        self._ids: dict[str, int] = {}
        for name in names:
            self.add(name)

    def add(self, name: str) -> int:
        idx = self._ids.get(name)
        if idx is None:
            idx = len(self._names)
            self._ids[name] = idx
            self._names.append(name)
        return idx

    def id(self, name: str) -> int:
        return self._ids[name]

    def name(self, idx: int) -> str:
        return self._names[idx]

    @property
    def names(self) -> list[str]:
        return list(self._names)

    def __len__(self):
        return len(self._names)

    def __contains__(self, name):
        return name in self._ids

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._names == other._names


class KnowledgeGraph:
    """An immutable triple set with a forward ``(head, relation) -> tails`` index.

    Only the forward direction is indexed; projection never walks edges
    backwards.
    """

    def __init__(self, n_entities: int, n_relations: int, triples: Iterable[tuple[int, int, int]]):
        self.n_entities = int(n_entities)
        self.n_relations = int(n_relations)
        unique = set()
        for h, r, t in triples:
            self._check_entity(h)
            self._check_entity(t)
            self._check_relation(r)
            unique.add(Triple(int(h), int(r), int(t)))
        self._triples = frozenset(unique)
        index: dict[tuple[int, int], set[int]] = {}
        for h, r, t in self._triples:
            index.setdefault((h, r), set()).add(t)
        self._index = {key: frozenset(tails) for key, tails in index.items()}

    def _check_entity(self, e):
        if not 0 <= e < self.n_entities:
            raise DomainError(f"entity id {e} out of range [0, {self.n_entities})")

    def _check_relation(self, r):
        if not 0 <= r < self.n_relations:
            raise DomainError(f"relation id {r} out of range [0, {self.n_relations})")

    @property
    def triples(self) -> frozenset[Triple]:
        return self._triples

    def __len__(self):
        return len(self._triples)

    def __contains__(self, triple):
        return tuple(triple) in self._triples

    def __iter__(self) -> Iterator[Triple]:
        return iter(sorted(self._triples))

    def tails(self, head: int, relation: int) -> frozenset[int]:
        """Tails of ``(head, relation)``; the empty set for pairs not in the graph."""
        return self._index.get((head, relation), EMPTY)

    def sorted_tails(self, head: int, relation: int) -> list[int]:
        return sorted(self.tails(head, relation))

    def project(self, source: Iterable[int], relation: int) -> frozenset[int]:
        """Entities reachable from any member of ``source`` by one ``relation`` edge."""
        self._check_relation(relation)
        out: set[int] = set()
        for e in source:
            self._check_entity(e)
            out |= self._index.get((e, relation), EMPTY)
        return frozenset(out)

    def edge_array(self) -> np.ndarray:
        """Triples as an ``(n, 3)`` int array in sorted order."""
        if not self._triples:
            return np.zeros((0, 3), dtype=np.int64)
        return np.array(sorted(self._triples), dtype=np.int64)


def project(graph: KnowledgeGraph, source: Iterable[int], relation: int) -> frozenset[int]:
    return graph.project(source, relation)


@dataclass
class LoadReport:
    n_entities: int
    n_relations: int
    n_triples: dict[str, int]
    duplicates: dict[str, int] = field(default_factory=dict)
    seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "entities": self.n_entities,
            "relations": self.n_relations,
            "triples": dict(self.n_triples),
            "duplicates": dict(self.duplicates),
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "LoadReport":
        return cls(d["entities"], d["relations"], dict(d["triples"]), dict(d.get("duplicates", {})), d.get("seed"))


@dataclass
class GraphSplit:
    """Three graphs over shared vocabularies with ``train ⊆ valid ⊆ test``."""

    entities: Vocabulary
    relations: Vocabulary
    train: KnowledgeGraph
    valid: KnowledgeGraph
    test: KnowledgeGraph
    report: LoadReport | None = None

    def __post_init__(self):
        if not (self.train.triples <= self.valid.triples <= self.test.triples):
            raise ValueError("split graphs must satisfy train ⊆ valid ⊆ test")

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def graph(self, stage: str) -> KnowledgeGraph:
        try:
            return {"train": self.train, "valid": self.valid, "test": self.test}[stage]
        except KeyError:
            raise ValueError(f"unknown stage {stage!r}") from None


def read_triple_file(path) -> list[tuple[str, str, str]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise TripleParseError(path, lineno, line)
            rows.append((fields[0], fields[1], fields[2]))
    return rows


def _encode(rows, entities: Vocabulary, relations: Vocabulary, seen: set, label: str, dup: dict):
    new = []
    for h, r, t in rows:
        triple = (entities.add(h), relations.add(r), entities.add(t))
        if triple in seen:
            dup[label] = dup.get(label, 0) + 1
            continue
        seen.add(triple)
        new.append(triple)
    return new


def build_split(train_rows, valid_rows, test_rows, entities=None, relations=None) -> GraphSplit:
    """Build a split from string triples; ids follow first appearance (train, valid, test)."""
    entities = entities if entities is not None else Vocabulary()
    relations = relations if relations is not None else Vocabulary()
    seen: set = set()
    dup: dict[str, int] = {}
    train = _encode(train_rows, entities, relations, seen, "train", dup)
    valid_new = _encode(valid_rows, entities, relations, seen, "valid", dup)
    test_new = _encode(test_rows, entities, relations, seen, "test", dup)
    n_e, n_r = len(entities), len(relations)
    g_train = KnowledgeGraph(n_e, n_r, train)
    g_valid = KnowledgeGraph(n_e, n_r, train + valid_new)
    g_test = KnowledgeGraph(n_e, n_r, train + valid_new + test_new)
    if dup:
        logger.warning("dropped duplicate triples: %s", dup)
    report = LoadReport(n_e, n_r, {"train": len(g_train), "valid": len(g_valid), "test": len(g_test)}, dup)
    return GraphSplit(entities, relations, g_train, g_valid, g_test, report)


def load_split(train_path, valid_path, test_path) -> GraphSplit:
    """Load a split from three TSV triple files.

    ``valid_path`` and ``test_path`` hold only the *additional* edges; the
    resulting valid graph is train ∪ valid-edges and the test graph is
    valid ∪ test-edges.
    """
    return build_split(read_triple_file(train_path), read_triple_file(valid_path), read_triple_file(test_path))


SPLIT_FILES = ("train.tsv", "valid.tsv", "test.tsv")


def save_split(split: GraphSplit, directory, seed: int | None = None) -> Path:
    """Write a split directory: vocabularies, per-stage new edges, and ``report.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "entities.txt").write_text("".join(n + "\n" for n in split.entities.names), encoding="utf-8")
    (directory / "relations.txt").write_text("".join(n + "\n" for n in split.relations.names), encoding="utf-8")
    layers = [
        split.train.triples,
        split.valid.triples - split.train.triples,
        split.test.triples - split.valid.triples,
    ]
    for name, triples in zip(SPLIT_FILES, layers):
        with open(directory / name, "w", encoding="utf-8") as fh:
            for h, r, t in sorted(triples):
                fh.write(f"{split.entities.name(h)}\t{split.relations.name(r)}\t{split.entities.name(t)}\n")
    report = split.report or LoadReport(
        split.n_entities, split.n_relations, {"train": len(split.train), "valid": len(split.valid), "test": len(split.test)}
    )
    report.seed = seed
    (directory / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    return directory


def _read_names(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\r\n") for line in fh if line.rstrip("\r\n")]


def load_split_dir(directory) -> GraphSplit:
    """Read a directory written by :func:`save_split`, keeping its id assignment."""
    directory = Path(directory)
    entities = Vocabulary(_read_names(directory / "entities.txt"))
    relations = Vocabulary(_read_names(directory / "relations.txt"))
    rows = [read_triple_file(directory / name) for name in SPLIT_FILES]
    split = build_split(*rows, entities=entities, relations=relations)
    report_path = directory / "report.json"
    if report_path.exists():
        stored = LoadReport.from_dict(json.loads(report_path.read_text(encoding="utf-8")))
        split.report.duplicates = stored.duplicates
        split.report.seed = stored.seed
    return split
