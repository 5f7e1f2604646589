"""scikit-learn style wrapper around training and inference.

``X`` is always a sequence of queries: :class:`~pathformer.sampler.QueryInstance`
objects, their JSON dicts, or (for inference only) bare query trees.
"""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .evaluation import RankingReport, mrr
from .model import Pathformer, QueryEmbedding
from .queries import Anchor, Intersection, Negation, Projection, Union, flatten, validate
from .sampler import QueryInstance
from .training import TrainConfig, train

_TREE_TYPES = (Anchor, Projection, Negation, Intersection, Union)


def check_instances(X, n_entities=None, n_relations=None, require_answers=True) -> list[QueryInstance]:
    """Coerce ``X`` to a list of QueryInstance and check ids against the vocabulary sizes."""
    if isinstance(X, (QueryInstance, dict)):
        raise TypeError("expected a sequence of queries, got a single query")
    out = []
    for k, item in enumerate(X):
        if isinstance(item, dict):
            item = QueryInstance.from_dict(item)
        if not isinstance(item, QueryInstance):
            raise TypeError(f"X[{k}]: expected QueryInstance or dict, got {type(item).__name__}")
        if require_answers and item.answers_train is None:
            raise ValueError(f"X[{k}]: training answers are missing")
        _check_ids(k, item.tree, n_entities, n_relations)
        for name in ("answers_train", "answers_valid", "answers_test"):
            answers = getattr(item, name)
            if n_entities is not None and answers and max(answers) >= n_entities:
                raise ValueError(f"X[{k}]: {name} contains ids >= n_entities={n_entities}")
        out.append(item)
    return out


def check_trees(X, n_entities=None, n_relations=None) -> list:
    """Query trees of ``X`` (instances, dicts or trees), validated."""
    trees = []
    for k, item in enumerate(X):
        if isinstance(item, dict):
            item = QueryInstance.from_dict(item)
        tree = item.tree if isinstance(item, QueryInstance) else item
        if not isinstance(tree, _TREE_TYPES):
            raise TypeError(f"X[{k}]: not a query")
        problems = validate(tree)
        if problems:
            raise ValueError(f"X[{k}]: {problems[0].message} at {problems[0].path or 'root'}")
        _check_ids(k, tree, n_entities, n_relations)
        trees.append(tree)
    return trees


def _check_ids(k, tree, n_entities, n_relations):
    anchors, relations = flatten(tree)
    if n_entities is not None and any(not 0 <= e < n_entities for e in anchors):
        raise ValueError(f"X[{k}]: anchor id out of range [0, {n_entities})")
    if n_relations is not None and any(not 0 <= r < n_relations for r in relations):
        raise ValueError(f"X[{k}]: relation id out of range [0, {n_relations})")


def _infer_sizes(instances):
    n_e = n_r = 0
    for inst in instances:
        ids = list(inst.anchors)
        for s in (inst.answers_train, inst.answers_valid, inst.answers_test):
            ids.extend(s or ())
        n_e = max(n_e, max(ids) + 1)
        n_r = max(n_r, max(inst.relations) + 1)
    return n_e, n_r


class PathformerEstimator(BaseEstimator):
    """Path/fork query encoder trained with negative sampling.

    Parameters mirror :class:`~pathformer.training.TrainConfig`. When
    ``n_entities``/``n_relations`` are left as None they are inferred from
    the ids seen in ``fit``; pass them explicitly whenever some entities
    never occur in the training queries.

    Attributes set by ``fit``: ``model_``, ``n_entities_``, ``n_relations_``,
    ``log_`` (loss records) and ``validations_``.
    """

    def __init__(
        self,
        d=32,
        k1=1,
        k2=2,
        heads=4,
        d_ffn=None,
        dropout=0.0,
        mask_mode="bidirectional",
        positional_encoding="sinusoidal",
        fork_variant="mlp",
        lr=1e-3,
        u=16,
        batch_size=64,
        gamma=12.0,
        max_steps=5000,
        regime="epfo-5",
        valid_interval=0,
        log_interval=100,
        seed=0,
        dtype="float32",
        n_entities=None,
        n_relations=None,
        stage="test",
    ):
        self.d = d
        self.k1 = k1
        self.k2 = k2
        self.heads = heads
        self.d_ffn = d_ffn
        self.dropout = dropout
        self.mask_mode = mask_mode
        self.positional_encoding = positional_encoding
        self.fork_variant = fork_variant
        self.lr = lr
        self.u = u
        self.batch_size = batch_size
        self.gamma = gamma
        self.max_steps = max_steps
        self.regime = regime
        self.valid_interval = valid_interval
        self.log_interval = log_interval
        self.seed = seed
        self.dtype = dtype
        self.n_entities = n_entities
        self.n_relations = n_relations
        self.stage = stage

    def _train_config(self) -> TrainConfig:
        fields = TrainConfig.__dataclass_fields__
        return TrainConfig(**{k: v for k, v in self.get_params().items() if k in fields})

    def fit(self, X, y=None, valid=None, checkpoint_path=None, log_path=None):
        instances = check_instances(X, self.n_entities, self.n_relations)
        if not instances:
            raise ValueError("fit needs at least one query")
        valid = check_instances(valid or [], self.n_entities, self.n_relations)
        inferred = _infer_sizes(instances + valid)
        self.n_entities_ = self.n_entities if self.n_entities is not None else inferred[0]
        self.n_relations_ = self.n_relations if self.n_relations is not None else inferred[1]
        sizes = SimpleNamespace(n_entities=self.n_entities_, n_relations=self.n_relations_)
        result = train(sizes, instances, self._train_config(), valid, checkpoint_path, log_path)
        self.model_ = result.model
        self.log_ = result.log
        self.validations_ = result.validations
        return self

    @classmethod
    def from_checkpoint(cls, path) -> "PathformerEstimator":
        model, meta = Pathformer.load(path)
        cfg = meta["model"]
        params = {k: cfg[k] for k in cls._get_param_names() if k in cfg}
        params.update({k: v for k, v in meta.get("train_config", {}).items() if k in cls._get_param_names()})
        params["n_entities"], params["n_relations"] = cfg["n_entities"], cfg["n_relations"]
        est = cls(**params)
        est.model_ = model
        est.n_entities_, est.n_relations_ = cfg["n_entities"], cfg["n_relations"]
        est.log_, est.validations_ = [], []
        return est

    # -- inference -------------------------------------------------------------

    @property
    def config(self):
        check_is_fitted(self, "model_")
        return self.model_.config

    def distances(self, X) -> np.ndarray:
        """``n_queries x n_entities`` L1 distances (minimum over union disjuncts)."""
        check_is_fitted(self, "model_")
        trees = check_trees(X, self.n_entities_, self.n_relations_)
        if not trees:
            return np.zeros((0, self.n_entities_), dtype=self.model_.dtype)
        return self.model_.distances(trees)

    def decision_function(self, X) -> np.ndarray:
        """Entity scores, higher is better (negated distances)."""
        return -self.distances(X)

    def predict(self, X) -> np.ndarray:
        """Closest entity for each query."""
        return np.argmin(self.distances(X), axis=1)

    def transform(self, X) -> list[QueryEmbedding]:
        """Query embeddings, one vector per DNF disjunct."""
        check_is_fitted(self, "model_")
        return [self.model_.encode_query(t) for t in check_trees(X, self.n_entities_, self.n_relations_)]

    def evaluate(self, X, stage=None) -> RankingReport:
        check_is_fitted(self, "model_")
        instances = check_instances(X, self.n_entities_, self.n_relations_)
        return mrr(instances, self.model_, stage or self.stage)

    def score(self, X, y=None) -> float:
        """Mean filtered MRR (0-1) over the structures present, at ``self.stage``."""
        report = self.evaluate(X)
        return 0.0 if report.mean is None else report.mean
