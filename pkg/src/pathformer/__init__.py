"""Query answering over incomplete knowledge graphs with path and fork encoders.

Queries are computation trees over projection, intersection, union and
negation. They are rewritten to union-free disjuncts, split into path
chains and fork merges, and each chain is read by a transformer encoder.
Entities are ranked by L1 distance to the query embedding.
"""

from .estimator import PathformerEstimator
from .evaluation import RankingReport, ablation_table, filtered_ranks, mrr
from .kg import GraphSplit, KnowledgeGraph, build_split, load_split, load_split_dir, save_split
from .model import ModelConfig, Pathformer, QueryEmbedding
from .oracle import answer_set, execute_plan, non_trivial_answers
from .queries import TEMPLATES, decompose, instantiate, to_dnf
from .sampler import QueryInstance, SamplerConfig, read_jsonl, sample_dataset, sample_queries, write_jsonl
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "GraphSplit",
    "KnowledgeGraph",
    "ModelConfig",
    "Pathformer",
    "PathformerEstimator",
    "QueryEmbedding",
    "QueryInstance",
    "RankingReport",
    "SamplerConfig",
    "TEMPLATES",
    "TrainConfig",
    "ablation_table",
    "answer_set",
    "build_split",
    "decompose",
    "execute_plan",
    "filtered_ranks",
    "instantiate",
    "load_split",
    "load_split_dir",
    "mrr",
    "non_trivial_answers",
    "read_jsonl",
    "sample_dataset",
    "sample_queries",
    "save_split",
    "to_dnf",
    "train",
    "write_jsonl",
]
