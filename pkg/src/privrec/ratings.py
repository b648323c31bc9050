"""Rating-matrix data model: orientation conventions, centering, neighbours.

A rating matrix is stored dense, users as rows and items as columns, with the
external identifiers kept alongside so downstream artifacts (splits, metrics)
can refer to users and items by name.  Matrices are read-only after
construction and all operations here are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RatingMatrix",
    "NeighbourSpec",
    "center_by_item_mean",
    "make_neighbour",
]


@dataclass(frozen=True)
class RatingMatrix:
    """Dense users x items rating matrix with id maps.

    `centered` marks matrices produced by :func:`center_by_item_mean`; raw
    matrices must be non-negative, centered ones may not be.
    """

    values: np.ndarray
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    centered: bool = field(default=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"rating matrix must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("rating matrix contains non-finite entries")
        if not self.centered and np.any(values < 0):
            raise ValueError("ratings must be non-negative")
        user_ids = tuple(self.user_ids)
        item_ids = tuple(self.item_ids)
        if len(user_ids) != values.shape[0]:
            raise ValueError(
                f"{len(user_ids)} user ids for {values.shape[0]} matrix rows"
            )
        if len(item_ids) != values.shape[1]:
            raise ValueError(
                f"{len(item_ids)} item ids for {values.shape[1]} matrix columns"
            )
        if len(set(user_ids)) != len(user_ids):
            raise ValueError("duplicate user ids")
        if len(set(item_ids)) != len(item_ids):
            raise ValueError("duplicate item ids")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "user_ids", user_ids)
        object.__setattr__(self, "item_ids", item_ids)

    @property
    def n_users(self) -> int:
        return self.values.shape[0]

    @property
    def n_items(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_values(cls, values, centered: bool = False) -> "RatingMatrix":
        """Build a matrix with synthetic `u{i}` / `i{j}` identifiers."""
        values = np.asarray(values, dtype=np.float64)
        m, n = values.shape
        return cls(
            values=values,
            user_ids=tuple(f"u{i}" for i in range(m)),
            item_ids=tuple(f"i{j}" for j in range(n)),
            centered=centered,
        )


@dataclass(frozen=True)
class NeighbourSpec:
    """One changed user-item cell: matrices differing by `delta` at (row, col).

    The change must be strictly smaller than one in magnitude, and a zero
    delta is rejected because it would not produce a neighbour at all.
    """

    row: int
    col: int
    delta: float

    def __post_init__(self):
        if not 0 < abs(self.delta) < 1:
            raise ValueError(f"delta must satisfy 0 < |delta| < 1, got {self.delta}")


def center_by_item_mean(r: RatingMatrix) -> tuple[RatingMatrix, np.ndarray]:
    """Subtract each item's mean rating (taken over all users) from its column.

    Returns the centered matrix (column means zero to within 1e-12) together
    with the per-item means, so the operation can be inverted exactly.
    """
    means = r.values.mean(axis=0)
    centered = r.values - means[np.newaxis, :]
    out = RatingMatrix(
        values=centered, user_ids=r.user_ids, item_ids=r.item_ids, centered=True
    )
    return out, means


def make_neighbour(r: RatingMatrix, spec: NeighbourSpec) -> RatingMatrix:
    """Return the neighbouring matrix differing from `r` only at (row, col).

    Raises IndexError when the target cell is out of bounds and ValueError
    when the change would produce a negative rating.
    """
    if not 0 <= spec.row < r.n_users or not 0 <= spec.col < r.n_items:
        raise IndexError(
            f"neighbour cell ({spec.row}, {spec.col}) outside "
            f"{r.n_users}x{r.n_items} matrix"
        )
    new_value = r.values[spec.row, spec.col] + spec.delta
    if new_value < 0:
        raise ValueError(
            f"changed rating would be negative ({new_value:.6g}) at "
            f"({spec.row}, {spec.col})"
        )
    values = r.values.copy()
    values[spec.row, spec.col] = new_value
    return RatingMatrix(
        values=values, user_ids=r.user_ids, item_ids=r.item_ids, centered=r.centered
    )
