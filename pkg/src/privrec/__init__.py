"""Differentially private rating-matrix publishing and cross-domain recommendation.

The library covers the full desk-scale workflow: ingest or synthesize
two-domain rating data, publish the source domain's matrix under
differential privacy via dense or sparse-aware random projections, verify
the mechanism's statistical guarantees by Monte Carlo, train the
heterogeneous recommender on the published matrix, and score it with
leave-one-out ranking metrics.
"""

from .ratings import NeighbourSpec, RatingMatrix, center_by_item_mean, make_neighbour
from .publish import (
    PerturbationPlan,
    PublishParams,
    PublishedMatrix,
    derive_plan,
    load_published,
    publish,
    save_published,
)
from .model import HeteroModel, TrainConfig, build_model, train
from .verify import CheckReport, TrialConfig, compose_epsilon, run_suite

__version__ = "0.1.0"

__all__ = [
    "RatingMatrix",
    "NeighbourSpec",
    "center_by_item_mean",
    "make_neighbour",
    "PublishParams",
    "PerturbationPlan",
    "PublishedMatrix",
    "derive_plan",
    "publish",
    "save_published",
    "load_published",
    "HeteroModel",
    "TrainConfig",
    "build_model",
    "train",
    "TrialConfig",
    "CheckReport",
    "compose_epsilon",
    "run_suite",
    "__version__",
]
