"""Explainable link forecasting on temporal knowledge graphs."""

from .embeddings import ModelDims, ParameterSet, load_checkpoint, save_checkpoint
from .engine import ForecastResult, Hyperparams, Query, forecast
from .evaluation import FilterIndex, evaluate_queries, metrics
from .explain import build_explanation, to_dot, verify_explanation
from .kgstore import (Dataset, IngestError, TemporalAdjacency, Vocab,
                      augment_reciprocal, load_corpus, load_quadruples,
                      reciprocal_id, time_split)
from .sampling import SamplingConfig, query_rng, sample_prior_edges
from .training import Adam, TrainingConfig, bce_loss, fit

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "Dataset",
    "FilterIndex",
    "ForecastResult",
    "Hyperparams",
    "IngestError",
    "ModelDims",
    "ParameterSet",
    "Query",
    "SamplingConfig",
    "TemporalAdjacency",
    "TrainingConfig",
    "Vocab",
    "augment_reciprocal",
    "bce_loss",
    "build_explanation",
    "evaluate_queries",
    "fit",
    "forecast",
    "load_checkpoint",
    "load_corpus",
    "load_quadruples",
    "metrics",
    "query_rng",
    "reciprocal_id",
    "save_checkpoint",
    "time_split",
    "to_dot",
    "verify_explanation",
    "__version__",
]
