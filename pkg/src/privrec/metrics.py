"""Ranking metrics over leave-one-out candidate lists.

Each evaluated user contributes one list of exactly 100 candidates (the
held-out test item plus 99 sampled negatives).  The test item's 1-based rank
under descending score (ties broken by ascending item index, so results are
reproducible) feeds hit ratio, NDCG (single relevant item, so ideal DCG is
1) and reciprocal rank at the cutoffs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "CANDIDATES",
    "RankedList",
    "rank_of_test",
    "metrics_at_k",
    "aggregate_ranks",
    "metrics_row",
    "write_metrics_csv",
]

CANDIDATES = 100
KS = (5, 10)


@dataclass(frozen=True)
class RankedList:
    """Scores for one user's 100 candidates; the test item sits at `test_pos`."""

    scores: np.ndarray
    item_indices: np.ndarray
    test_pos: int

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        items = np.asarray(self.item_indices, dtype=np.int64)
        if scores.shape != (CANDIDATES,) or items.shape != (CANDIDATES,):
            raise ValueError(
                f"need exactly {CANDIDATES} candidates, got {scores.shape}"
            )
        if not np.all(np.isfinite(scores)):
            raise ValueError("scores must be finite")
        if len(set(items.tolist())) != CANDIDATES:
            raise ValueError("candidate item indices must be distinct")
        if not 0 <= self.test_pos < CANDIDATES:
            raise ValueError(f"test_pos out of range: {self.test_pos}")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "item_indices", items)


def rank_of_test(ranked: RankedList) -> int:
    """1-based rank of the test item by descending score, ties by item index."""
    s = ranked.scores
    items = ranked.item_indices
    s_test = s[ranked.test_pos]
    i_test = items[ranked.test_pos]
    ahead = np.sum(s > s_test) + np.sum((s == s_test) & (items < i_test))
    return int(ahead) + 1


def metrics_at_k(rank: int, k: int) -> tuple[float, float, float]:
    """(hr, ndcg, mrr) at cutoff k for a single relevant item at `rank`."""
    if rank < 1 or k < 1:
        raise ValueError(f"rank and k must be >= 1, got rank={rank}, k={k}")
    if rank > k:
        return 0.0, 0.0, 0.0
    return 1.0, 1.0 / math.log2(rank + 1), 1.0 / rank


def aggregate_ranks(ranks, ks=KS) -> dict[str, float]:
    """Mean metrics over users: keys like 'hr@5', 'ndcg@10', 'mrr@10'."""
    ranks = list(ranks)
    if not ranks:
        raise ValueError("no ranks to aggregate")
    out: dict[str, float] = {}
    for k in ks:
        triples = np.array([metrics_at_k(r, k) for r in ranks])
        out[f"hr@{k}"] = float(triples[:, 0].mean())
        out[f"ndcg@{k}"] = float(triples[:, 1].mean())
        out[f"mrr@{k}"] = float(triples[:, 2].mean())
    return out


_COLUMNS = ["hr@5", "ndcg@5", "mrr@5", "hr@10", "ndcg@10", "mrr@10"]


def metrics_row(values: dict[str, float], label: str) -> str:
    return ",".join([label] + [repr(float(values[c])) for c in _COLUMNS])


def write_metrics_csv(rows: list[tuple[str, dict[str, float]]], path: str | Path):
    """One labelled row per run plus a closing mean row over the runs."""
    if not rows:
        raise ValueError("no metric rows to write")
    lines = ["run," + ",".join(_COLUMNS)]
    for label, values in rows:
        lines.append(metrics_row(values, label))
    mean = {
        c: float(np.mean([values[c] for _, values in rows])) for c in _COLUMNS
    }
    lines.append(metrics_row(mean, "mean"))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
