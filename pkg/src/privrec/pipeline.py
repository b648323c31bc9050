"""End-to-end orchestration: publish -> train -> rank -> aggregate.

Glue used by both the CLI and the experiment-style tests; every step
delegates to the owning module so behaviour stays identical whichever entry
point drives it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import EvalSplit, apply_split_to_matrix, make_leave_one_out
from .metrics import RankedList, aggregate_ranks, rank_of_test
from .model import (
    VARIANT_TARGET_ONLY,
    HeteroModel,
    TrainConfig,
    build_model,
    score_candidates,
    train,
)
from .publish import PublishParams, PublishedMatrix, publish
from .ratings import RatingMatrix

__all__ = ["ExperimentResult", "evaluate_split", "run_cdr_experiment"]


def evaluate_split(
    model: HeteroModel, train_matrix: RatingMatrix, split: EvalSplit
) -> dict[str, float]:
    """Rank each user's test item against its negatives; mean metrics."""
    ranks = []
    for e in split.entries:
        candidates = np.array([e.test_item, *e.negatives], dtype=np.int64)
        scores = score_candidates(model, train_matrix.values, e.user, candidates)
        ranked = RankedList(scores=scores, item_indices=candidates, test_pos=0)
        ranks.append(rank_of_test(ranked))
    return aggregate_ranks(ranks)


@dataclass
class ExperimentResult:
    metrics: dict[str, float]
    model: HeteroModel
    published: PublishedMatrix | None
    split: EvalSplit
    trace: list = field(default_factory=list)


def run_cdr_experiment(
    source: RatingMatrix,
    target: RatingMatrix,
    variant: str,
    publish_params: PublishParams | None,
    train_cfg: TrainConfig,
    split_seed: int,
    h: int = 16,
    hidden: tuple[int, ...] = (64,),
    split: EvalSplit | None = None,
) -> ExperimentResult:
    """One full run of a variant on a two-domain dataset.

    The published matrix (when the variant consumes one) and the model seed
    both derive from the configs, so results repeat exactly for the same
    arguments.
    """
    if split is None:
        split, train_matrix = make_leave_one_out(target, split_seed)
    else:
        train_matrix = apply_split_to_matrix(target, split)

    published = None
    published_values = None
    n1_prime = 1
    if variant != VARIANT_TARGET_ONLY:
        if publish_params is None:
            raise ValueError(f"variant {variant!r} needs publishing parameters")
        published = publish(source, publish_params)
        published_values = published.values
        n1_prime = published.plan.n1_prime

    model = build_model(
        variant=variant,
        n1_prime=n1_prime,
        n_target_items=target.n_items,
        n_users=target.n_users,
        h=h,
        hidden=hidden,
        seed=train_cfg.seed,
    )
    forbidden = {
        e.user: (e.val_item, e.test_item) for e in split.entries
    }
    trace = train(
        model,
        published_values,
        train_matrix.values,
        train_cfg,
        forbidden_items=forbidden,
    )
    metrics = evaluate_split(model, train_matrix, split)
    return ExperimentResult(
        metrics=metrics, model=model, published=published, split=split, trace=trace
    )
