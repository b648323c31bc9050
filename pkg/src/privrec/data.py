"""Dataset ingestion, preprocessing, alignment, splits, synthetic data.

The preprocessing follows the usual implicit-feedback recipe: binarize raw
0-5 ratings at a threshold, iteratively drop users/items with too few
positive interactions, keep only the users common to both domains (item
spaces stay disjoint per domain), then hold out one validation and one test
item per user and sample 99 never-interacted negatives for ranking.

The synthetic generator draws shared user factors and per-domain item
factors so the two domains are correlated through the users; thresholding
the noisy factor products at a score quantile hits a requested positive
density directly.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ratings import RatingMatrix
from .rng import Stream, substream

__all__ = [
    "RawRatings",
    "UserSplit",
    "EvalSplit",
    "read_ratings_csv",
    "write_ratings_csv",
    "binarize",
    "filter_min_interactions",
    "to_matrix",
    "matrix_to_raw",
    "align_common_users",
    "prepare_two_domain",
    "make_leave_one_out",
    "write_split",
    "read_split",
    "synth_two_domain",
    "subsample_positives",
    "N_NEGATIVES",
]

N_NEGATIVES = 99


@dataclass(frozen=True)
class RawRatings:
    """Triplet form of a ratings file: (user_id, item_id, rating in [0, 5])."""

    triplets: tuple[tuple[str, str, float], ...]

    def __post_init__(self):
        for user, item, rating in self.triplets:
            if not 0.0 <= rating <= 5.0:
                raise ValueError(
                    f"rating {rating} for ({user}, {item}) outside [0, 5]"
                )
        object.__setattr__(self, "triplets", tuple(self.triplets))

    def __len__(self) -> int:
        return len(self.triplets)

    @property
    def users(self) -> set[str]:
        return {u for u, _, _ in self.triplets}

    @property
    def items(self) -> set[str]:
        return {i for _, i, _ in self.triplets}


def read_ratings_csv(path: str | Path) -> RawRatings:
    """Read `user_id,item_id,rating[,timestamp]` with a header row."""
    path = Path(path)
    triplets = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 3:
            raise ValueError(f"{path}: expected a header row user_id,item_id,rating")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 3:
                raise ValueError(f"{path}:{lineno}: expected at least 3 columns")
            try:
                rating = float(row[2])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad rating {row[2]!r}") from exc
            triplets.append((row[0], row[1], rating))
    return RawRatings(tuple(triplets))


def write_ratings_csv(raw: RawRatings, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "item_id", "rating"])
        for user, item, rating in raw.triplets:
            writer.writerow([user, item, repr(float(rating))])


def binarize(raw: RawRatings, threshold: float = 3.0) -> RawRatings:
    """Ratings at or above the threshold become 1, the rest 0."""
    return RawRatings(
        tuple(
            (u, i, 1.0 if r >= threshold else 0.0) for u, i, r in raw.triplets
        )
    )


def filter_min_interactions(raw: RawRatings, k: int = 5) -> RawRatings:
    """Iteratively drop users and items with fewer than k positive interactions.

    Runs to a fixed point: removing a user can push an item below the
    threshold and vice versa.  The result is stable under re-application.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    triplets = list(raw.triplets)
    while True:
        user_counts: dict[str, int] = {}
        item_counts: dict[str, int] = {}
        for u, i, r in triplets:
            if r > 0:
                user_counts[u] = user_counts.get(u, 0) + 1
                item_counts[i] = item_counts.get(i, 0) + 1
        bad_users = {u for u, _, _ in triplets if user_counts.get(u, 0) < k}
        bad_items = {i for _, i, _ in triplets if item_counts.get(i, 0) < k}
        if not bad_users and not bad_items:
            break
        triplets = [
            (u, i, r)
            for u, i, r in triplets
            if u not in bad_users and i not in bad_items
        ]
    if not triplets:
        warnings.warn(f"filtering at k={k} removed every interaction")
    return RawRatings(tuple(triplets))


def to_matrix(raw: RawRatings) -> RatingMatrix:
    """Densify triplets; duplicate (user, item) pairs keep the max rating."""
    if not raw.triplets:
        raise ValueError("cannot densify an empty dataset")
    user_ids = tuple(sorted(raw.users))
    item_ids = tuple(sorted(raw.items))
    u_pos = {u: k for k, u in enumerate(user_ids)}
    i_pos = {i: k for k, i in enumerate(item_ids)}
    values = np.zeros((len(user_ids), len(item_ids)))
    for u, i, r in raw.triplets:
        values[u_pos[u], i_pos[i]] = max(values[u_pos[u], i_pos[i]], r)
    return RatingMatrix(values=values, user_ids=user_ids, item_ids=item_ids)


def matrix_to_raw(matrix: RatingMatrix) -> RawRatings:
    """Positive entries back to triplet form (zeros are non-interactions)."""
    triplets = []
    rows, cols = np.nonzero(matrix.values)
    for u, i in zip(rows, cols):
        triplets.append(
            (matrix.user_ids[u], matrix.item_ids[i], float(matrix.values[u, i]))
        )
    return RawRatings(tuple(triplets))


def align_common_users(
    source: RawRatings, target: RawRatings
) -> tuple[RatingMatrix, RatingMatrix]:
    """Restrict both domains to their common users, identically ordered."""
    common = sorted(source.users & target.users)
    if not common:
        raise ValueError("the two domains share no users")
    keep = set(common)

    def build(raw: RawRatings) -> RatingMatrix:
        kept = [(u, i, r) for u, i, r in raw.triplets if u in keep]
        item_ids = tuple(sorted({i for _, i, _ in kept}))
        i_pos = {i: k for k, i in enumerate(item_ids)}
        u_pos = {u: k for k, u in enumerate(common)}
        values = np.zeros((len(common), len(item_ids)))
        for u, i, r in kept:
            values[u_pos[u], i_pos[i]] = max(values[u_pos[u], i_pos[i]], r)
        return RatingMatrix(
            values=values, user_ids=tuple(common), item_ids=item_ids
        )

    return build(source), build(target)


def prepare_two_domain(
    source: RawRatings,
    target: RawRatings,
    threshold: float = 3.0,
    k: int = 5,
) -> tuple[RatingMatrix, RatingMatrix]:
    """Full preprocessing pipeline: binarize, filter, align common users.

    Filtering and the common-user restriction interact (dropping a user in
    one domain removes them from both), so the two are iterated to a joint
    fixed point; re-running the interaction filter on either aligned matrix
    then changes nothing.
    """
    source = binarize(source, threshold)
    target = binarize(target, threshold)
    while True:
        if k > 0:
            source = filter_min_interactions(source, k)
            target = filter_min_interactions(target, k)
        common = source.users & target.users
        if not common:
            raise ValueError("no common users survive preprocessing")
        trimmed_s = RawRatings(
            tuple(t for t in source.triplets if t[0] in common)
        )
        trimmed_t = RawRatings(
            tuple(t for t in target.triplets if t[0] in common)
        )
        if trimmed_s == source and trimmed_t == target:
            break
        source, target = trimmed_s, trimmed_t
    return align_common_users(source, target)


@dataclass(frozen=True)
class UserSplit:
    user: int
    val_item: int
    test_item: int
    negatives: tuple[int, ...]

    def __post_init__(self):
        if self.val_item == self.test_item:
            raise ValueError("validation and test items must differ")
        if len(self.negatives) != N_NEGATIVES:
            raise ValueError(f"need exactly {N_NEGATIVES} negatives")
        if len(set(self.negatives)) != N_NEGATIVES:
            raise ValueError("negatives must be distinct")


@dataclass(frozen=True)
class EvalSplit:
    entries: tuple[UserSplit, ...]

    def __len__(self) -> int:
        return len(self.entries)


def make_leave_one_out(
    target: RatingMatrix, seed: int
) -> tuple[EvalSplit, RatingMatrix]:
    """Hold out one validation and one test positive per user, plus negatives.

    Users who cannot satisfy the protocol - fewer than 3 positives, or not
    enough never-interacted items to sample 99 negatives from - are excluded
    from evaluation with a warning (their interactions stay in training).
    Returns the split and the training matrix with held-out entries zeroed.
    """
    values = target.values
    train = values.copy()
    entries = []
    too_few_positives = 0
    too_few_negatives = 0
    for u in range(target.n_users):
        positives = np.flatnonzero(values[u] > 0)
        if positives.size < 3:
            too_few_positives += 1
            continue
        non_interacted = np.flatnonzero(values[u] == 0)
        if non_interacted.size < N_NEGATIVES:
            too_few_negatives += 1
            continue
        rng = substream(seed, "split", u)
        held = rng.choice(positives, size=2, replace=False)
        val_item, test_item = int(held[0]), int(held[1])
        negatives = rng.choice(non_interacted, size=N_NEGATIVES, replace=False)
        train[u, val_item] = 0.0
        train[u, test_item] = 0.0
        entries.append(
            UserSplit(
                user=u,
                val_item=val_item,
                test_item=test_item,
                negatives=tuple(int(j) for j in negatives),
            )
        )
    if too_few_positives:
        warnings.warn(
            f"{too_few_positives} users with < 3 positives excluded from "
            "evaluation (kept in training)"
        )
    if too_few_negatives:
        warnings.warn(
            f"{too_few_negatives} users with fewer than {N_NEGATIVES} "
            "non-interacted items excluded from evaluation (kept in training)"
        )
    if not entries:
        raise ValueError(
            "no user satisfies the leave-one-out protocol "
            f"(>= 3 positives and >= {N_NEGATIVES} non-interacted items)"
        )
    split = EvalSplit(entries=tuple(entries))
    train_matrix = RatingMatrix(
        values=train, user_ids=target.user_ids, item_ids=target.item_ids
    )
    return split, train_matrix


def write_split(split: EvalSplit, target: RatingMatrix, path: str | Path) -> None:
    """Split manifest as JSON lines with external identifiers."""
    with open(path, "w", encoding="utf-8") as fh:
        for e in split.entries:
            fh.write(
                json.dumps(
                    {
                        "user": target.user_ids[e.user],
                        "val_item": target.item_ids[e.val_item],
                        "test_item": target.item_ids[e.test_item],
                        "negatives": [target.item_ids[j] for j in e.negatives],
                    }
                )
                + "\n"
            )


def read_split(path: str | Path, target: RatingMatrix) -> EvalSplit:
    u_pos = {u: k for k, u in enumerate(target.user_ids)}
    i_pos = {i: k for k, i in enumerate(target.item_ids)}
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            raw = json.loads(line)
            try:
                entries.append(
                    UserSplit(
                        user=u_pos[raw["user"]],
                        val_item=i_pos[raw["val_item"]],
                        test_item=i_pos[raw["test_item"]],
                        negatives=tuple(i_pos[j] for j in raw["negatives"]),
                    )
                )
            except KeyError as exc:
                raise ValueError(
                    f"{path}:{lineno}: id {exc} not present in the target matrix"
                ) from exc
    return EvalSplit(entries=tuple(entries))


def apply_split_to_matrix(target: RatingMatrix, split: EvalSplit) -> RatingMatrix:
    """Zero the held-out entries of `target` (for splits loaded from file)."""
    train = target.values.copy()
    for e in split.entries:
        train[e.user, e.val_item] = 0.0
        train[e.user, e.test_item] = 0.0
    return RatingMatrix(
        values=train, user_ids=target.user_ids, item_ids=target.item_ids
    )


def synth_two_domain(
    users: int,
    items_per_domain: int,
    latent_dim: int,
    noise: float,
    seed: int,
    source_density: float = 0.10,
    target_density: float = 0.05,
) -> tuple[RatingMatrix, RatingMatrix]:
    """Correlated two-domain 0/1 ratings from shared user factors.

    Scores are user-factor / item-factor products plus `noise` times white
    noise.  Each user interacts with their top-scoring items; the per-user
    interaction count is the requested density times the item count, scaled
    by a mild log-normal activity level shared between the domains (active
    users are active everywhere, which also keeps popularity orderings
    concordant across domains).  Item factors are half-normal so item
    popularity is consistently signed.
    """
    if users < 1 or items_per_domain < 1 or latent_dim < 1:
        raise ValueError("users, items_per_domain and latent_dim must be positive")
    stream = Stream(seed).child("synth")
    z = stream.child("user_factors").generator().standard_normal((users, latent_dim))
    user_ids = tuple(f"u{i:05d}" for i in range(users))
    activity_sigma = 0.35
    gauss = stream.child("activity").generator().standard_normal(users)
    activity = np.exp(activity_sigma * gauss - activity_sigma**2 / 2.0)
    count_cap = max(items_per_domain - 2, 1)

    def domain(tag: str, density: float) -> RatingMatrix:
        rng = stream.child(tag, "item_factors").generator()
        factors = np.abs(rng.standard_normal((items_per_domain, latent_dim)))
        scores = z @ factors.T
        if noise > 0:
            scores = scores + noise * stream.child(
                tag, "noise"
            ).generator().standard_normal(scores.shape)
        counts = np.clip(
            np.round(density * items_per_domain * activity).astype(int), 1, count_cap
        )
        values = np.zeros((users, items_per_domain))
        for u in range(users):
            top = np.argsort(-scores[u], kind="stable")[: counts[u]]
            values[u, top] = 1.0
        return RatingMatrix(
            values=values,
            user_ids=user_ids,
            item_ids=tuple(f"{tag}{j:05d}" for j in range(items_per_domain)),
        )

    return domain("s", source_density), domain("t", target_density)


def subsample_positives(
    matrix: RatingMatrix, fraction: float, seed: int
) -> RatingMatrix:
    """Keep a uniform random `fraction` of the positive cells (sparsity knob)."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return matrix
    rows, cols = np.nonzero(matrix.values)
    keep = round(fraction * rows.size)
    idx = substream(seed, "subsample").choice(rows.size, size=keep, replace=False)
    values = np.zeros_like(matrix.values)
    values[rows[idx], cols[idx]] = matrix.values[rows[idx], cols[idx]]
    return RatingMatrix(
        values=values, user_ids=matrix.user_ids, item_ids=matrix.item_ids
    )
