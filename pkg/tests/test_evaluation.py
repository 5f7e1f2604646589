import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import sort_ranks
from pathformer.evaluation import (
    RankingMisuse,
    RankingReport,
    VocabularyMismatch,
    ablation_table,
    filtered_ranks,
    mrr,
    query_metric,
    rank_entity,
    stage_sets,
)
from pathformer.model import ModelConfig, Pathformer
from pathformer.queries import EPFO_STRUCTURES, NEGATION_STRUCTURES
from pathformer.sampler import QueryInstance


class FixedModel:
    """Stand-in that returns preset distance rows, one per query."""

    def __init__(self, rows, n_entities=None):
        self.rows = np.asarray(rows, dtype=float)
        self.config = ModelConfig(n_entities or self.rows.shape[-1], 3, d=4, heads=1)

    def distances(self, trees):
        return np.tile(self.rows, (len(trees), 1)) if self.rows.ndim == 1 else self.rows[: len(trees)]


def inst(test, valid=(), train=(), structure="1p"):
    n_rel = {"1p": 1, "2p": 2}[structure]
    return QueryInstance(structure, (0,), (0,) * n_rel, frozenset(train), frozenset(valid), frozenset(test))


def test_strict_minimum_ranks_first():
    m = FixedModel([0.0, 3.0, 2.0, 5.0])
    assert rank_entity(0, inst({0}), m) == 1.0


def test_single_tie_gives_one_and_a_half():
    m = FixedModel([1.0, 1.0, 2.0, 5.0])
    assert rank_entity(0, inst({0}), m) == 1.5


def test_two_answers_ranks_one_and_four():
    d = [0.0, 4.0, 1.0, 2.0, 3.0, 9.0]
    i = inst({0, 1})
    assert list(filtered_ranks(d, [0, 1], {0, 1})) == [1.0, 4.0]
    assert query_metric(d, i, "test") == 0.625


def test_single_query_rank_one_reports_hundred():
    report = mrr([inst({0})], FixedModel([0.0, 3.0, 2.0]))
    assert report.percent == {"1p": 100.0}
    assert report.counts == {"1p": 1}


def test_misuse_of_non_answers():
    m = FixedModel([0.0, 1.0, 2.0])
    with pytest.raises(RankingMisuse):
        rank_entity(1, inst({0}), m)
    # trivial answers (already present at valid) are not ranked at test
    with pytest.raises(RankingMisuse):
        rank_entity(0, inst({0, 2}, valid={0}), m)


def test_stage_pools():
    i = inst({1, 2, 3}, valid={1, 2}, train={1})
    assert stage_sets(i, "test") == ({3}, {1, 2, 3})
    assert stage_sets(i, "valid") == ({2}, {1, 2})
    assert stage_sets(i, "train") == ({1}, {1})
    with pytest.raises(ValueError):
        stage_sets(i, "holdout")


distance_rows = st.integers(3, 25).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(0, 4), min_size=n, max_size=n),
        st.sets(st.integers(0, n - 1), min_size=1, max_size=n),
        st.sets(st.integers(0, n - 1), max_size=n),
    )
)


@given(distance_rows)
def test_ranks_match_sort_oracle(case):
    dist, answers, others = case
    filtered = answers | others
    assert list(filtered_ranks(np.array(dist, float), answers, filtered)) == sort_ranks(dist, answers, filtered)


@given(distance_rows, st.sampled_from([np.exp, np.arctan, lambda x: 3 * x + 7, lambda x: x**3]))
def test_monotone_transform_invariance(case, f):
    dist, answers, others = case
    d = np.array(dist, float)
    filtered = answers | others
    assert list(filtered_ranks(f(d), answers, filtered)) == list(filtered_ranks(d, answers, filtered))


@given(distance_rows)
def test_other_answers_never_affect_a_rank(case):
    dist, answers, others = case
    d = np.array(dist, float)
    e = min(answers)
    base = filtered_ranks(d, [e], answers | others)[0]
    # moving every other filtered entity anywhere leaves e's rank alone
    moved = d.copy()
    for c in (answers | others) - {e}:
        moved[c] = -100.0
    assert filtered_ranks(moved, [e], answers | others)[0] == base


@given(distance_rows)
def test_reciprocal_rank_bounds(case):
    dist, answers, others = case
    filtered = answers | others
    pool = 1 + len(dist) - len(filtered)
    rr = 1.0 / filtered_ranks(np.array(dist, float), answers, filtered)
    assert np.all(rr <= 1.0) and np.all(rr >= 1.0 / pool)


def test_report_group_means():
    rep = RankingReport({s: 0.5 for s in EPFO_STRUCTURES} | {s: 0.1 for s in NEGATION_STRUCTURES},
                        {s: 1 for s in EPFO_STRUCTURES + NEGATION_STRUCTURES})
    assert rep.epfo_mean == 0.5 and rep.negation_mean == pytest.approx(0.1)
    rep = RankingReport({"1p": 0.2, "2in": 0.4}, {"1p": 3, "2in": 2})
    assert rep.epfo_mean == 0.2 and rep.negation_mean == 0.4
    d = json.loads(rep.to_json())
    assert d["structures"]["1p"] == {"mrr": 0.2, "mrr_percent": 20.0, "queries": 3}
    assert d["epfo_mean_percent"] == 20.0
    text = rep.to_text()
    assert "1p" in text and "20.00" in text and "neg avg" in text
    assert all(0 <= v <= 100 for v in rep.percent.values())


def test_empty_report():
    rep = mrr([], FixedModel([0.0, 1.0]))
    assert rep.mrr == {} and rep.epfo_mean is None
    assert json.loads(rep.to_json())["structures"] == {}


def test_queries_without_stage_answers_are_skipped(caplog):
    rep = mrr([inst({0}), inst({1}, valid={1})], FixedModel([0.0, 1.0, 2.0]))
    assert rep.counts == {"1p": 1}
    assert "skipped 1" in caplog.text


def test_ablation_self_comparison_has_zero_deltas():
    m = FixedModel([0.0, 2.0, 1.0])
    queries = [inst({0}), inst({1}, structure="2p")]
    table = ablation_table({"a": m, "b": m}, queries)
    assert table.deltas() == {"b": {"1p": 0.0, "2p": 0.0}}
    assert "+0.00" in table.to_text()
    assert set(table.to_dict()["models"]) == {"a", "b"}


def test_ablation_vocabulary_mismatch():
    with pytest.raises(VocabularyMismatch):
        ablation_table({"a": FixedModel([0.0, 1.0]), "b": FixedModel([0.0, 1.0, 2.0])}, [])


def test_real_model_rank_agrees_with_report(toy):
    from pathformer.sampler import SamplerConfig, sample_dataset

    queries, _ = sample_dataset(toy, SamplerConfig({"1p": 5, "2u": 5}, seed=3), stage="test")
    m = Pathformer(ModelConfig(toy.n_entities, toy.n_relations, d=8, heads=2))
    report = mrr(queries, m)
    by_hand = {}
    for q in queries:
        ranks = [rank_entity(e, q, m) for e in sorted(stage_sets(q, "test")[0])]
        by_hand.setdefault(q.structure, []).append(np.mean(1.0 / np.array(ranks)))
    for s, vals in by_hand.items():
        assert report.mrr[s] == pytest.approx(np.mean(vals), rel=1e-12)
