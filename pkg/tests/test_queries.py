import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_answers, random_graph_triples
from pathformer.kg import KnowledgeGraph
from pathformer.oracle import answer_set, execute_plan
from pathformer.queries import (
    STRUCTURES,
    TEMPLATES,
    Anchor,
    AnchorStart,
    ForkStart,
    ForkStep,
    Intersection,
    Negate,
    Negation,
    PathQuery,
    PathStep,
    Project,
    Projection,
    QueryStructureError,
    Union,
    a,
    abstract,
    arity,
    decompose,
    flatten,
    i,
    instantiate,
    is_union_free,
    n,
    p,
    structure_of,
    to_dnf,
    u,
    validate,
)

STEP_COUNTS = {
    "1p": (1, 0), "2p": (1, 0), "3p": (1, 0),
    "2i": (2, 1), "2in": (2, 1), "pin": (2, 1), "pni": (2, 1),
    "3i": (3, 2), "3in": (3, 2),
    "ip": (3, 1), "inp": (3, 1),
    "pi": (2, 1),
}


def ground(name, rng, n_e=10, n_r=4):
    k_a, k_r = arity(TEMPLATES[name])
    return instantiate(name, rng.integers(n_e, size=k_a).tolist(), rng.integers(n_r, size=k_r).tolist())


def test_fourteen_templates():
    assert len(STRUCTURES) == 14


def test_instantiate_1p():
    assert instantiate("1p", [0], [0]) == Projection(Anchor(0), 0)


def test_instantiate_inp():
    assert instantiate("inp", [1, 2], [1, 2, 3]) == Projection(
        Intersection([Projection(Anchor(1), 1), Negation(Projection(Anchor(2), 2))]), 3
    )


def test_instantiate_up():
    assert instantiate("up", [1, 2], [1, 2, 3]) == Projection(
        Union([Projection(Anchor(1), 1), Projection(Anchor(2), 2)]), 3
    )


def test_grounded_shapes_of_negation_templates():
    assert instantiate("pin", [1, 2], [1, 2, 3]) == i(p(p(a(1), 1), 2), n(p(a(2), 3)))
    assert instantiate("pni", [1, 2], [1, 2, 3]) == i(n(p(p(a(1), 1), 2)), p(a(2), 3))
    assert instantiate("pi", [1, 2], [1, 2, 3]) == i(p(p(a(1), 1), 2), p(a(2), 3))
    assert instantiate("ip", [1, 2], [1, 2, 3]) == p(i(p(a(1), 1), p(a(2), 2)), 3)


def test_arity_mismatch_names_template():
    with pytest.raises(ValueError, match="3i.*3 anchors and 3 relations"):
        instantiate("3i", [0, 1], [0, 1, 2])


@pytest.mark.parametrize("name", STRUCTURES)
def test_flatten_inverts_instantiate(name, rng):
    tree = ground(name, rng)
    anchors, relations = flatten(tree)
    assert instantiate(name, anchors, relations) == tree
    assert structure_of(tree) == name


def test_abstract_shares_index_tree_across_groundings(rng):
    t1, t2 = ground("pin", rng), ground("pin", rng)
    assert abstract(t1)[0] == abstract(t2)[0]


def test_dnf_examples():
    t = instantiate("2p", [0], [1, 2])
    assert to_dnf(t) == [t]
    assert to_dnf(instantiate("2u", [0, 1], [2, 3])) == [p(a(0), 2), p(a(1), 3)]
    assert to_dnf(instantiate("up", [0, 1], [2, 3, 4])) == [p(p(a(0), 2), 4), p(p(a(1), 3), 4)]


def test_dnf_of_union_under_negation_is_rejected():
    with pytest.raises(QueryStructureError):
        to_dnf(i(p(a(0), 0), n(u(p(a(1), 0), p(a(2), 1)))))


def test_dnf_up_matches_oracle_on_toy(toy, rng):
    for _ in range(20):
        tree = ground("up", rng, toy.n_entities, toy.n_relations)
        left, right = to_dnf(tree)
        assert answer_set(toy.test, tree) == answer_set(toy.test, left) | answer_set(toy.test, right)


def test_decompose_1p():
    plan = decompose(instantiate("1p", [0], [0]))
    assert plan.steps == (PathStep(PathQuery(AnchorStart(0), (Project(0),)), 0),)
    assert plan.root_slot == 0


def test_decompose_inp_matches_figure_trace():
    plan = decompose(instantiate("inp", [1, 2], [1, 2, 3]))
    assert plan.steps == (
        PathStep(PathQuery(AnchorStart(1), (Project(1),)), 0),
        PathStep(PathQuery(AnchorStart(2), (Project(2), Negate())), 1),
        ForkStep(0, (0, 1), 2),
        PathStep(PathQuery(ForkStart(2), (Project(3),)), 3),
    )


def test_decompose_3i_pairwise_left_to_right():
    plan = decompose(instantiate("3i", [0, 1, 2], [0, 1, 2]))
    forks = [s for s in plan.steps if isinstance(s, ForkStep)]
    assert [f.inputs for f in forks] == [(0, 1), (2, 3)]
    assert plan.root_slot == forks[-1].output


@pytest.mark.parametrize("name,counts", sorted(STEP_COUNTS.items()))
def test_step_counts(name, counts, rng):
    plan = decompose(ground(name, rng))
    assert (plan.n_paths, plan.n_forks) == counts


@pytest.mark.parametrize("name", ["2u", "up"])
def test_union_step_counts_after_dnf(name, rng):
    plans = [decompose(d) for d in to_dnf(ground(name, rng))]
    assert [(pl.n_paths, pl.n_forks) for pl in plans] == [(1, 0), (1, 0)]
    hops = 1 if name == "2u" else 2
    assert all(len(pl.steps[0].path.ops) == hops for pl in plans)


@pytest.mark.parametrize("name", [s for s in STRUCTURES if is_union_free(TEMPLATES[s])])
def test_plan_slots_written_once_before_read(name, rng):
    plan = decompose(ground(name, rng))
    written = set()
    for step in plan.steps:
        reads = step.inputs if isinstance(step, ForkStep) else (
            (step.path.start.slot,) if isinstance(step.path.start, ForkStart) else ()
        )
        assert set(reads) <= written
        assert step.output not in written
        written.add(step.output)
        if isinstance(step, PathStep):
            assert isinstance(step.path.ops[0], Project)
    assert plan.steps[-1].output == plan.root_slot
    assert decompose(ground(name, np.random.default_rng(0))) == decompose(ground(name, np.random.default_rng(0)))


def test_decompose_rejects_union():
    with pytest.raises(QueryStructureError):
        decompose(instantiate("2u", [0, 1], [0, 1]))


def test_validate_examples():
    assert validate(instantiate("2i", [0, 1], [0, 1])) == []
    assert any("child" in v.message for v in validate(Intersection([p(a(0), 0)])))
    assert any("double negation" in v.message for v in validate(n(n(p(a(0), 0)))))
    assert any("union beneath negation" in v.message for v in validate(n(u(p(a(0), 0), p(a(1), 0)))))


def test_validate_does_not_mutate():
    tree = n(n(p(a(0), 0)))
    before = repr(tree)
    validate(tree)
    assert repr(tree) == before


def test_empty_path_rejected():
    with pytest.raises(QueryStructureError):
        PathQuery(AnchorStart(0), ())
    with pytest.raises(QueryStructureError):
        ForkStep(0, (1,), 2)


# random union-free trees for property tests
def trees(max_leaves=4):
    leaf = st.builds(lambda e, r: p(a(e), r), st.integers(0, 9), st.integers(0, 2))

    def extend(children):
        return st.one_of(
            st.builds(p, children, st.integers(0, 2)),
            st.builds(lambda c, r: n(p(c, r)), children, st.integers(0, 2)),
            st.builds(lambda xs: Intersection(xs), st.lists(children, min_size=2, max_size=3)),
        )

    return st.recursive(leaf, extend, max_leaves=max_leaves)


def with_unions(base):
    return st.one_of(
        base,
        st.builds(lambda xs: Union(xs), st.lists(base, min_size=2, max_size=3)),
        st.builds(lambda xs, r: p(Union(xs), r), st.lists(base, min_size=2, max_size=2), st.integers(0, 2)),
        st.builds(lambda xs, y: Intersection([Union(xs), y]), st.lists(base, min_size=2, max_size=2), base),
    )


GRAPH = KnowledgeGraph(10, 3, random_graph_triples(np.random.default_rng(3), 10, 3, 40))


@given(trees())
def test_decomposition_round_trip_property(tree):
    assert execute_plan(GRAPH, decompose(tree)) == answer_set(GRAPH, tree)


@given(with_unions(trees(3)))
def test_dnf_preserves_answers_property(tree):
    disjuncts = to_dnf(tree)
    assert all(is_union_free(d) for d in disjuncts)
    union = frozenset().union(*(answer_set(GRAPH, d) for d in disjuncts))
    assert union == answer_set(GRAPH, tree) == brute_answers(sorted(GRAPH.triples), 10, tree)
