"""Query computation trees, benchmark templates, DNF rewriting and path/fork decomposition.

A query computation tree has anchor entities at the leaves and the answer
variable at the root. Projection and negation are unary edges; intersection
and union merge branches.

Anchors and relations of a grounded template are listed in a fixed order:
anchors left to right, relations in post-order (a projection's relation comes
after everything beneath it). ``instantiate`` and ``flatten`` both use it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Union as _U


# -- tree nodes ---------------------------------------------------------------


@dataclass(frozen=True)
class Anchor:
    entity: int


@dataclass(frozen=True)
class Projection:
    child: "QueryTree"
    relation: int


@dataclass(frozen=True)
class Negation:
    child: "QueryTree"


@dataclass(frozen=True)
class Intersection:
    children: tuple

    def __init__(self, children):
        object.__setattr__(self, "children", tuple(children))


@dataclass(frozen=True)
class Union:
    children: tuple

    def __init__(self, children):
        object.__setattr__(self, "children", tuple(children))


QueryTree = _U[Anchor, Projection, Negation, Intersection, Union]


class QueryStructureError(ValueError):
    """A tree shape the requested operation cannot handle."""


# short constructors, used for templates and in tests
def a(e):
    return Anchor(e)


def p(child, r):
    return Projection(child, r)


def n(child):
    return Negation(child)


def i(*children):
    return Intersection(children)


def u(*children):
    return Union(children)


# -- templates ----------------------------------------------------------------

# placeholders are filled by position: anchors left to right, relations post-order
_A, _R = -1, -1

TEMPLATES: dict[str, QueryTree] = {
    "1p": p(a(_A), _R),
    "2p": p(p(a(_A), _R), _R),
    "3p": p(p(p(a(_A), _R), _R), _R),
    "2i": i(p(a(_A), _R), p(a(_A), _R)),
    "3i": i(p(a(_A), _R), p(a(_A), _R), p(a(_A), _R)),
    "ip": p(i(p(a(_A), _R), p(a(_A), _R)), _R),
    "pi": i(p(p(a(_A), _R), _R), p(a(_A), _R)),
    "2u": u(p(a(_A), _R), p(a(_A), _R)),
    "up": p(u(p(a(_A), _R), p(a(_A), _R)), _R),
    "2in": i(p(a(_A), _R), n(p(a(_A), _R))),
    "3in": i(p(a(_A), _R), p(a(_A), _R), n(p(a(_A), _R))),
    "inp": p(i(p(a(_A), _R), n(p(a(_A), _R))), _R),
    "pin": i(p(p(a(_A), _R), _R), n(p(a(_A), _R))),
    # the negated branch of pni is the two-hop one
    "pni": i(n(p(p(a(_A), _R), _R)), p(a(_A), _R)),
}

STRUCTURES = tuple(TEMPLATES)
EPFO_STRUCTURES = ("1p", "2p", "3p", "2i", "3i", "ip", "pi", "2u", "up")
NEGATION_STRUCTURES = ("2in", "3in", "inp", "pin", "pni")


def arity(tree: QueryTree) -> tuple[int, int]:
    """(number of anchors, number of relations) of a tree."""
    anchors, relations = flatten(tree)
    return len(anchors), len(relations)


def instantiate(template, anchors, relations) -> QueryTree:
    """Ground a template (by name or shape) with anchors and relations in canonical order."""
    name = template if isinstance(template, str) else None
    shape = TEMPLATES[template] if isinstance(template, str) else template
    n_a, n_r = arity(shape)
    if len(anchors) != n_a or len(relations) != n_r:
        raise ValueError(
            f"template {name or shape!r} needs {n_a} anchors and {n_r} relations, "
            f"got {len(anchors)} and {len(relations)}"
        )
    a_it, r_it = iter(anchors), iter(relations)

    def fill(node):
        if isinstance(node, Anchor):
            return Anchor(int(next(a_it)))
        if isinstance(node, Projection):
            child = fill(node.child)
            return Projection(child, int(next(r_it)))
        if isinstance(node, Negation):
            return Negation(fill(node.child))
        return type(node)([fill(c) for c in node.children])

    return fill(shape)


def flatten(tree: QueryTree) -> tuple[list[int], list[int]]:
    """Anchors (left to right) and relations (post-order) of a tree."""
    anchors: list[int] = []
    relations: list[int] = []

    def walk(node):
        if isinstance(node, Anchor):
            anchors.append(node.entity)
        elif isinstance(node, Projection):
            walk(node.child)
            relations.append(node.relation)
        elif isinstance(node, Negation):
            walk(node.child)
        else:
            for c in node.children:
                walk(c)

    walk(tree)
    return anchors, relations


def abstract(tree: QueryTree) -> tuple[QueryTree, list[int], list[int]]:
    """Replace ids by their canonical positions.

    Returns ``(index_tree, anchors, relations)``. Two trees with the same
    shape share one index tree, which is what batched encoding groups on.
    """
    anchors, relations = flatten(tree)
    index_tree = instantiate(tree, range(len(anchors)), range(len(relations)))
    return index_tree, anchors, relations


def structure_of(tree: QueryTree) -> str | None:
    """Name of the benchmark template this tree instantiates, if any."""
    index_tree, _, _ = abstract(tree)
    return _INDEX_TREES.get(index_tree)


def _contains_union(node) -> bool:
    if isinstance(node, Union):
        return True
    if isinstance(node, Anchor):
        return False
    if isinstance(node, (Projection, Negation)):
        return _contains_union(node.child)
    return any(_contains_union(c) for c in node.children)


# -- DNF ----------------------------------------------------------------------


def to_dnf(tree: QueryTree) -> list[QueryTree]:
    """Push unions to the root; returns the union-free disjuncts."""
    if not _contains_union(tree):
        return [tree]

    def rewrite(node) -> list:
        if isinstance(node, Anchor):
            return [node]
        if isinstance(node, Projection):
            return [Projection(d, node.relation) for d in rewrite(node.child)]
        if isinstance(node, Negation):
            if _contains_union(node.child):
                raise QueryStructureError("union beneath negation is not supported")
            return [node]
        if isinstance(node, Intersection):
            options = [rewrite(c) for c in node.children]
            return [Intersection(combo) for combo in itertools.product(*options)]
        return [d for c in node.children for d in rewrite(c)]

    return rewrite(tree)


# -- decomposition ------------------------------------------------------------


@dataclass(frozen=True)
class Project:
    relation: int


@dataclass(frozen=True)
class Negate:
    pass


PathOp = _U[Project, Negate]


@dataclass(frozen=True)
class AnchorStart:
    entity: int


@dataclass(frozen=True)
class ForkStart:
    slot: int


@dataclass(frozen=True)
class PathQuery:
    start: _U[AnchorStart, ForkStart]
    ops: tuple

    def __post_init__(self):
        if not self.ops:
            raise QueryStructureError("a path query needs at least one operator")


@dataclass(frozen=True)
class PathStep:
    path: PathQuery
    output: int


@dataclass(frozen=True)
class ForkStep:
    fork_id: int
    inputs: tuple
    output: int

    def __post_init__(self):
        if len(self.inputs) < 2:
            raise QueryStructureError("a fork step needs at least two inputs")


@dataclass(frozen=True)
class DecompositionPlan:
    steps: tuple
    root_slot: int

    @property
    def n_paths(self) -> int:
        return sum(isinstance(s, PathStep) for s in self.steps)

    @property
    def n_forks(self) -> int:
        return sum(isinstance(s, ForkStep) for s in self.steps)

    @property
    def n_slots(self) -> int:
        return len(self.steps)


def decompose(tree: QueryTree) -> DecompositionPlan:
    """Split a union-free tree into path queries and pairwise fork queries.

    Each maximal chain of projection/negation edges becomes one path step.
    An n-way intersection becomes n-1 pairwise fork steps folded left to
    right. Step outputs are numbered in execution order.
    """
    steps: list = []
    forks = itertools.count()

    def emit(step_factory):
        slot = len(steps)
        steps.append(step_factory(slot))
        return slot

    def resolve(node) -> int:
        ops = []
        while isinstance(node, (Projection, Negation)):
            ops.append(Project(node.relation) if isinstance(node, Projection) else Negate())
            node = node.child
        ops.reverse()
        if isinstance(node, Union):
            raise QueryStructureError("decompose requires a union-free tree; apply to_dnf first")
        if isinstance(node, Anchor):
            if not ops:
                raise QueryStructureError(f"anchor {node.entity} has no operator above it")
            start = AnchorStart(node.entity)
        else:
            if len(node.children) < 2:
                raise QueryStructureError("intersection needs at least two children")
            acc = resolve(node.children[0])
            for child in node.children[1:]:
                rhs = resolve(child)
                fid = next(forks)
                acc = emit(lambda slot, l=acc, r=rhs, f=fid: ForkStep(f, (l, r), slot))
            if not ops:
                return acc
            start = ForkStart(acc)
        return emit(lambda slot: PathStep(PathQuery(start, tuple(ops)), slot))

    root = resolve(tree)
    return DecompositionPlan(tuple(steps), root)


# -- validation ---------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    path: str
    message: str


def validate(tree: QueryTree) -> list[Violation]:
    """List invariant violations; an empty list means the tree is well formed."""
    report: list[Violation] = []

    def visit(node, where, parent, under_negation):
        if isinstance(node, Anchor):
            if not isinstance(node.entity, int) or node.entity < 0:
                report.append(Violation(where, f"invalid anchor id {node.entity!r}"))
            return
        if isinstance(node, Projection):
            if not isinstance(node.relation, int) or node.relation < 0:
                report.append(Violation(where, f"invalid relation id {node.relation!r}"))
            visit(node.child, where + "/p", node, under_negation)
            return
        if isinstance(node, Negation):
            if isinstance(parent, Negation):
                report.append(Violation(where, "double negation"))
            if isinstance(node.child, Anchor):
                report.append(Violation(where, "negation applied directly to an anchor"))
            visit(node.child, where + "/n", node, True)
            return
        if isinstance(node, (Intersection, Union)):
            kind = "intersection" if isinstance(node, Intersection) else "union"
            if len(node.children) < 2:
                report.append(Violation(where, f"{kind} with {len(node.children)} child(ren)"))
            if isinstance(node, Union) and under_negation:
                report.append(Violation(where, "union beneath negation"))
            for k, c in enumerate(node.children):
                visit(c, f"{where}/{kind[0]}{k}", node, under_negation)
            return
        report.append(Violation(where, f"unknown node type {type(node).__name__}"))

    visit(tree, "", None, False)
    return report


def is_union_free(tree: QueryTree) -> bool:
    return not _contains_union(tree)


_INDEX_TREES = {instantiate(shape, range(arity(shape)[0]), range(arity(shape)[1])): name for name, shape in TEMPLATES.items()}
