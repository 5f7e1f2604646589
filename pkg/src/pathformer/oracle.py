"""Exact set-semantics execution of query trees over a knowledge graph."""

from __future__ import annotations

from .kg import DomainError, KnowledgeGraph
from .queries import (
    Anchor,
    AnchorStart,
    DecompositionPlan,
    ForkStep,
    Intersection,
    Negate,
    Negation,
    PathStep,
    Projection,
    QueryTree,
    Union,
)

STAGES = ("valid", "test")


def answer_set(graph: KnowledgeGraph, tree: QueryTree) -> frozenset[int]:
    """Answers of ``tree`` on ``graph``; complement is taken against every entity."""
    if isinstance(tree, Anchor):
        if not 0 <= tree.entity < graph.n_entities:
            raise DomainError(f"anchor {tree.entity} out of range [0, {graph.n_entities})")
        return frozenset((tree.entity,))
    if isinstance(tree, Projection):
        return graph.project(answer_set(graph, tree.child), tree.relation)
    if isinstance(tree, Negation):
        return frozenset(range(graph.n_entities)) - answer_set(graph, tree.child)
    if isinstance(tree, Intersection):
        sets = [answer_set(graph, c) for c in tree.children]
        return frozenset.intersection(*sets)
    if isinstance(tree, Union):
        return frozenset().union(*(answer_set(graph, c) for c in tree.children))
    raise TypeError(f"not a query tree node: {tree!r}")


def execute_plan(graph: KnowledgeGraph, plan: DecompositionPlan) -> frozenset[int]:
    """Run a decomposition plan with set operators; forks intersect their inputs."""
    universe = frozenset(range(graph.n_entities))
    slots: dict[int, frozenset[int]] = {}
    for step in plan.steps:
        if isinstance(step, PathStep):
            start = step.path.start
            if isinstance(start, AnchorStart):
                current = frozenset((start.entity,))
            else:
                current = slots[start.slot]
            for op in step.path.ops:
                current = universe - current if isinstance(op, Negate) else graph.project(current, op.relation)
            slots[step.output] = current
        elif isinstance(step, ForkStep):
            slots[step.output] = frozenset.intersection(*(slots[s] for s in step.inputs))
        else:
            raise TypeError(f"unknown plan step {step!r}")
    return slots[plan.root_slot]


def non_trivial_answers(instance, stage: str) -> frozenset[int]:
    """Answers on the stage graph that are missing from the next smaller graph."""
    if stage == "test":
        big, small = instance.answers_test, instance.answers_valid
    elif stage == "valid":
        big, small = instance.answers_valid, instance.answers_train
    else:
        raise ValueError(f"stage must be one of {STAGES}, got {stage!r}")
    if big is None or small is None:
        raise ValueError(f"instance is missing split answers for stage {stage!r}")
    return frozenset(big) - frozenset(small)
