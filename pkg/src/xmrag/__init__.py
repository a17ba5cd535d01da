"""Subquery-aware hybrid image retrieval with Pareto-optimal result sets."""

from .corpus import (
    Corpus,
    ImageRecord,
    build_corpus,
    load_corpus,
    read_feature_matrix,
    write_feature_matrix,
)
from .query import Query, Subquery, attach_embeddings, decompose_llm, decompose_rule_based
from .sparse import dominates, nondominated_filter, nonzero_filter, satisfaction
from .adapter import (
    AdapterParams,
    TrainConfig,
    adapter_forward,
    infonce_loss,
    load_adapter_params,
    save_adapter_params,
    train_adapter,
)
from .dense import DenseScore, dense_score, rank_dense, subquery_similarity
from .joint import (
    ParetoResult,
    WeightVector,
    beta_bound,
    joint_retrieve,
    pareto_oracle,
    scalarized_argmax,
    simplex_grid,
)
from .generation import GenerationPrompt, build_prompt, generate_image, satisfied_subqueries
from .evaluation import coverage_rate, lexical_topk_baseline, plant_corpus, recall_at_k

__version__ = "0.1.0"

__all__ = [
    "AdapterParams",
    "Corpus",
    "DenseScore",
    "GenerationPrompt",
    "ImageRecord",
    "ParetoResult",
    "Query",
    "Subquery",
    "TrainConfig",
    "WeightVector",
    "adapter_forward",
    "attach_embeddings",
    "beta_bound",
    "build_corpus",
    "build_prompt",
    "coverage_rate",
    "decompose_llm",
    "decompose_rule_based",
    "dense_score",
    "dominates",
    "generate_image",
    "infonce_loss",
    "joint_retrieve",
    "lexical_topk_baseline",
    "load_adapter_params",
    "load_corpus",
    "nondominated_filter",
    "nonzero_filter",
    "pareto_oracle",
    "plant_corpus",
    "rank_dense",
    "read_feature_matrix",
    "recall_at_k",
    "satisfaction",
    "satisfied_subqueries",
    "save_adapter_params",
    "scalarized_argmax",
    "simplex_grid",
    "subquery_similarity",
    "train_adapter",
    "write_feature_matrix",
]
