import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import scalar_loss
from pathformer.model import FORK_VARIANTS, ModelConfig, Pathformer, QueryEmbedding, margin_loss
from pathformer.nn import NumericError
from pathformer.nn.gradcheck import check_store
from pathformer.queries import (
    AnchorStart,
    ForkStart,
    Negate,
    PathQuery,
    Project,
    QueryStructureError,
    a,
    abstract,
    decompose,
    i,
    instantiate,
    p,
    to_dnf,
)


def model(variant="mlp", d=8, heads=2, k1=2, dtype="float64", seed=0, **kw):
    return Pathformer(ModelConfig(12, 4, d=d, k1=k1, heads=heads, fork_variant=variant, dtype=dtype, seed=seed, **kw))


def test_input_sequence_examples():
    m = model()
    e0 = m.store["entity"][0]
    seq = m.build_input_sequence(PathQuery(AnchorStart(0), (Project(0),)), e0)
    assert seq.shape == (1, 2, 8)
    assert np.array_equal(seq[0, 0], e0) and np.array_equal(seq[0, 1], m.store["relation"][0])
    # {e2, r2, [Negation]}
    seq = m.build_input_sequence(PathQuery(AnchorStart(2), (Project(2), Negate())), m.store["entity"][2])
    assert np.array_equal(seq[0, 2], m.store["negation"][0])
    seq = m.build_input_sequence(PathQuery(AnchorStart(1), (Project(0), Project(1), Project(2))), e0)
    assert seq.shape == (1, 4, 8)


def test_unresolved_fork_start_is_an_order_violation():
    m = model()
    with pytest.raises(QueryStructureError):
        m.resolve_start(PathQuery(ForkStart(3), (Project(0),)), {})


@pytest.mark.parametrize("hops", [1, 2, 3])
def test_path_output_width(hops):
    m = model()
    path = PathQuery(AnchorStart(0), tuple(Project(r) for r in range(hops)))
    assert m.encode_path(path, m.store["entity"][0]).shape == (8,)


def test_bidirectional_last_relation_changes_position_zero():
    m = model(k1=1)
    path = PathQuery(AnchorStart(0), (Project(0), Project(1)))
    seq = m.build_input_sequence(path, m.store["entity"][0])
    out_a, _ = m.encoder.forward(m.store, seq)
    seq2 = seq.copy()
    seq2[0, 2] += 0.5
    out_b, _ = m.encoder.forward(m.store, seq2)
    assert np.abs(out_a[0, 0] - out_b[0, 0]).max() > 1e-8
    causal = model(k1=1, mask_mode="causal")
    out_a, _ = causal.encoder.forward(causal.store, seq)
    out_b, _ = causal.encoder.forward(causal.store, seq2)
    assert np.array_equal(out_a[0, 0], out_b[0, 0])


def test_operator_order_matters():
    m = model()
    e = m.store["entity"][3]
    x = m.encode_path(PathQuery(AnchorStart(3), (Project(1), Project(2))), e)
    y = m.encode_path(PathQuery(AnchorStart(3), (Project(2), Project(1))), e)
    assert not np.allclose(x, y)


def test_negation_token_changes_encoding():
    m = model()
    e = m.store["entity"][3]
    x = m.encode_path(PathQuery(AnchorStart(3), (Project(1),)), e)
    y = m.encode_path(PathQuery(AnchorStart(3), (Project(1), Negate())), e)
    assert not np.allclose(x, y)


@pytest.mark.parametrize("variant", FORK_VARIANTS)
def test_fork_output_width(variant):
    m = model(variant)
    assert m.encode_fork(np.ones(8), np.zeros(8)).shape == (8,)


def test_mlp2vector_with_shared_parameters_equals_single_mlp():
    two = model("mlp2vector")
    one = model("mlp")
    for name in [n for n in two.store.names() if n.startswith("fork_a.")]:
        value = two.store[name].copy()
        two.store.set(name.replace("fork_a.", "fork_b."), value)
        one.store.set(name.replace("fork_a.", "fork."), value)
    a_, b_ = np.random.default_rng(0).normal(size=(2, 8))
    assert np.allclose(two.encode_fork(a_, b_), one.encode_fork(a_, b_), rtol=0, atol=1e-15)


@pytest.mark.parametrize("variant", FORK_VARIANTS)
def test_three_way_fork_is_nested_pairwise(variant):
    m = model(variant)
    tree = instantiate("3i", [1, 2, 3], [0, 1, 2])
    branches = [m.encode_query(instantiate("1p", [e], [r])).disjuncts[0] for e, r in ((1, 0), (2, 1), (3, 2))]
    nested = m.encode_fork(m.encode_fork(branches[0], branches[1]), branches[2])
    np.testing.assert_allclose(m.encode_query(tree).disjuncts[0], nested, rtol=0, atol=1e-12)
    np.testing.assert_allclose(m.run_plan(decompose(tree)), nested, rtol=0, atol=1e-12)


@pytest.mark.parametrize("name", ["2in", "inp", "pin", "pni", "ip", "pi", "3in"])
def test_step_execution_matches_batched_forward(name):
    m = model("mixer")
    n_a, n_r = _arity(name)
    tree = instantiate(name, list(range(1, n_a + 1)), [r % 4 for r in range(n_r)])
    np.testing.assert_allclose(m.run_plan(decompose(tree)), m.encode_query(tree).disjuncts[0], rtol=0, atol=1e-12)


def _arity(name):
    from pathformer.queries import TEMPLATES, arity

    return arity(TEMPLATES[name])


def _zeros(name):
    n_a, n_r = _arity(name)
    return [0] * n_a, [0] * n_r


def test_union_disjuncts_are_bitwise_sub_encodings():
    m = model()
    t2u = instantiate("2u", [1, 2], [0, 3])
    q = m.encode_query(t2u)
    assert len(q) == 2
    assert np.array_equal(q.disjuncts[0], m.encode_query(p(a(1), 0)).disjuncts[0])
    assert np.array_equal(q.disjuncts[1], m.encode_query(p(a(2), 3)).disjuncts[0])
    tup = instantiate("up", [1, 2], [0, 3, 1])
    q = m.encode_query(tup)
    assert np.array_equal(q.disjuncts[0], m.encode_query(p(p(a(1), 0), 1)).disjuncts[0])
    assert np.array_equal(q.disjuncts[1], m.encode_query(p(p(a(2), 3), 1)).disjuncts[0])
    assert len(m.encode_query(instantiate("1p", [0], [0]))) == 1


def test_union_distance_is_min_over_disjuncts():
    m = model()
    tree = instantiate("up", [1, 2], [0, 3, 1])
    q = m.encode_query(tree)
    parts = [m.encode_query(d) for d in to_dnf(tree)]
    batched = m.distances([tree])[0]
    for e in range(12):
        assert m.distance(e, q) == min(m.distance(e, s) for s in parts)
        assert batched[e] == pytest.approx(m.distance(e, q), rel=1e-12)


def test_distance_examples():
    m = Pathformer(ModelConfig(3, 1, d=2, heads=1, dtype="float64"))
    m.store.set("entity", np.array([[1.0, 2.0], [0.0, 0.0], [5.0, 5.0]]))
    assert m.distance(0, QueryEmbedding([np.zeros(2)])) == 3.0
    assert m.distance(1, QueryEmbedding([np.zeros(2)])) == 0.0
    m.store.set("entity", np.array([[5.0, 0.0], [0.0, 0.0], [5.0, 5.0]]))
    assert m.distance(0, QueryEmbedding([np.zeros(2), np.array([3.0, 0.0])])) == 2.0


@given(st.integers(0, 1000), st.integers(0, 7), st.floats(0.01, 0.99))
def test_distance_decreases_toward_query(seed, coord, frac):
    m = model(seed=seed % 5)
    q = QueryEmbedding([np.random.default_rng(seed).normal(size=8)])
    before = m.distance(4, q)
    v = m.store["entity"][4]
    if v[coord] == q.disjuncts[0][coord]:
        return
    v[coord] += frac * (q.disjuncts[0][coord] - v[coord])
    assert m.distance(4, q) < before


def test_loss_closed_forms():
    assert margin_loss(24.0, [24.0], 24.0) == pytest.approx(2 * math.log(2), abs=1e-12)
    small = margin_loss(0.0, [48.0], 24.0)
    assert small < 1e-9
    assert small == pytest.approx(2 * math.log1p(math.exp(-24.0)), rel=1e-9)


@given(st.floats(0, 60), st.lists(st.floats(0, 60), min_size=1, max_size=6), st.floats(0.5, 30))
def test_loss_matches_scalar_oracle(pos, negs, gamma):
    assert margin_loss(pos, negs, gamma) == pytest.approx(scalar_loss(pos, negs, gamma), rel=1e-12, abs=1e-15)


def test_loss_rejects_empty_negatives():
    with pytest.raises(ValueError):
        margin_loss(1.0, [], 1.0)


@pytest.mark.parametrize("variant", FORK_VARIANTS)
def test_batched_loss_matches_single_query_loss(variant):
    m = model(variant)
    tree = instantiate("pin", [3, 5], [0, 1, 2])
    index_tree, anchors, relations = abstract(tree)
    neg = np.array([[1, 2, 7]])
    batched = m.loss_and_grad(index_tree, [anchors], [relations], np.array([4]), neg, training=False)
    single = m.loss(m.encode_query(tree), 4, [1, 2, 7])
    assert batched == pytest.approx(single, rel=1e-12)
    assert m.loss_and_grad(index_tree, [anchors], [relations], np.array([4]), neg, training=False, backward=False) == batched


@pytest.mark.parametrize("variant", FORK_VARIANTS)
@pytest.mark.parametrize("name", ["2p", "inp", "pni"])
def test_full_loss_gradients(variant, name):
    m = model(variant, d=4, heads=2, dropout=0.1)
    rng = np.random.default_rng(0)
    index_tree = abstract(instantiate(name, *_zeros(name)))[0]
    n_a, n_r = _arity(name)
    anchors, relations = rng.integers(12, size=(3, n_a)), rng.integers(4, size=(3, n_r))
    pos, neg = rng.integers(12, size=3), rng.integers(12, size=(3, 2))
    results = check_store(lambda: m.loss_and_grad(index_tree, anchors, relations, pos, neg, step=3), m.store)
    assert all(r.rel_error < 1e-4 for r in results), results
    if "n" not in name:
        m.store.zero_grad()
        m.loss_and_grad(index_tree, anchors, relations, pos, neg)
        assert not m.store.grads["negation"].any()


def test_initialisation_ranges():
    m = model(d=16, heads=4, gamma=12.0, dtype="float32")
    bound = 12.0 / 16
    for name in ("entity", "relation", "negation"):
        assert np.abs(m.store[name]).max() <= bound
    weights = [n for n in m.store.names() if n.endswith(".weight")]
    assert weights
    for name in weights:
        fan_in = m.store[name].shape[0]
        assert np.abs(m.store[name]).max() <= 1 / np.sqrt(fan_in) + 1e-7
    for name in [n for n in m.store.names() if n.endswith(".bias") and "ln" not in n and "norm" not in n]:
        assert not m.store[name].any()
    assert m.store["entity"].dtype == np.float32


def test_same_seed_same_parameters():
    a_, b_ = model(seed=3), model(seed=3)
    assert all(np.array_equal(a_.store[n], b_.store[n]) for n in a_.store.names())


def test_save_load_round_trip(tmp_path):
    m = model("mixer", dtype="float32")
    m.save(tmp_path / "m.pfck", seed=5)
    back, meta = Pathformer.load(tmp_path / "m.pfck")
    assert meta["seed"] == 5 and meta["model"]["fork_variant"] == "mixer"
    assert all(np.array_equal(m.store[n], back.store[n]) for n in m.store.names())
    tree = instantiate("pi", [1, 2], [0, 1, 2])
    assert np.array_equal(m.distances([tree]), back.distances([tree]))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_debug_mode_flags_non_finite_values():
    m = Pathformer(ModelConfig(12, 4, d=8, heads=2, dtype="float64"), debug=True)
    m.store["entity"][1] = np.inf
    with pytest.raises(NumericError):
        m.encode_query(instantiate("1p", [1], [0]))


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(3, 1, fork_variant="tree")
    with pytest.raises(ValueError):
        ModelConfig(3, 1, gamma=0)
    with pytest.raises(ValueError):
        ModelConfig(3, 1, d=10, heads=4)
    with pytest.raises(ValueError):
        QueryEmbedding([])
