"""Differentially private rating-matrix publishing.

Pipeline (per the two-branch publishing algorithm):

1. subtract each item's mean rating over the users,
2. derive the reduced dimension ``n1_prime`` and the singular-value
   perturbation magnitude ``w`` from the privacy/utility parameters,
3. lift every singular value sigma to ``sqrt(sigma**2 + w**2)`` while keeping
   the singular vectors,
4. project the item dimension down to ``n1_prime`` with a random transform
   scaled by ``1/sqrt(n1_prime)`` - either a dense i.i.d. Gaussian matrix
   (the plain Johnson-Lindenstrauss route) or the sparse-aware product
   P @ H @ D of a sparse Gaussian matrix, a normalized Hadamard matrix, and a
   random sign diagonal.

Internally matrices ride through the transform stage with one user vector
per row; the published result is users x n1_prime.  Everything is
deterministic given the seed: the sign diagonal, the sparse pattern, and the
dense Gaussian draw each consume an independent named substream.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .fwht import HAVE_NUMBA, fwht_rows_unnormalized
from .ratings import RatingMatrix, center_by_item_mean
from .rng import Stream

__all__ = [
    "TRANSFORM_JLT",
    "TRANSFORM_SJLT",
    "W_METHOD_DIRECT",
    "W_METHOD_ROW_BOUND",
    "NumericError",
    "PublishParams",
    "PerturbationPlan",
    "PublishedMatrix",
    "derive_plan",
    "perturb_singular_values",
    "gaussian_jlt_matrix",
    "draw_sign_diagonal",
    "draw_sparse_projection",
    "sjlt_apply",
    "publish",
    "next_pow2",
    "save_published",
    "load_published",
    "published_to_csv",
]

TRANSFORM_JLT = "jlt"
TRANSFORM_SJLT = "sjlt"
_TRANSFORMS = (TRANSFORM_JLT, TRANSFORM_SJLT)

# w formulas: "direct" is the closed form stated with the algorithm;
# "row_bound" solves the per-row privacy-loss inequality for the minimal w.
W_METHOD_DIRECT = "direct"
W_METHOD_ROW_BOUND = "row_bound"
_W_METHODS = (W_METHOD_DIRECT, W_METHOD_ROW_BOUND)

FORMAT_VERSION = 1

# below this many entries the sparse projection is drawn as a dense
# Bernoulli mask (cheaper); above it, per-row sampling keeps the draw O(nnz)
_SPARSE_DENSE_DRAW_LIMIT = 1 << 20


class NumericError(RuntimeError):
    """Numeric failure inside the publishing pipeline (e.g. SVD breakdown)."""


@dataclass(frozen=True)
class PublishParams:
    """Privacy/utility parameters of one publishing run.

    epsilon / delta are the matrix-level differential-privacy budget,
    eta / mu control the reduced dimension, q is the sparsity probability of
    the sparse projection (the experiments' `sp` knob), and the optional
    override pins n1_prime directly instead of deriving it from eta and mu.
    """

    epsilon: float
    delta: float
    eta: float = 0.5
    mu: float = 0.5
    q: float = 0.5
    n1_prime_override: int | None = None
    transform: str = TRANSFORM_JLT
    seed: int = 0
    w_method: str = W_METHOD_DIRECT

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if not 0 < self.mu < 2:
            raise ValueError(f"mu must be in (0, 2), got {self.mu}")
        if not 0 < self.q <= 1:
            raise ValueError(f"q must be in (0, 1], got {self.q}")
        if self.n1_prime_override is not None and self.n1_prime_override < 1:
            raise ValueError(
                f"n1_prime override must be a positive integer, got "
                f"{self.n1_prime_override}"
            )
        if self.transform not in _TRANSFORMS:
            raise ValueError(f"transform must be one of {_TRANSFORMS}")
        if self.w_method not in _W_METHODS:
            raise ValueError(f"w_method must be one of {_W_METHODS}")


@dataclass(frozen=True)
class PerturbationPlan:
    """Derived quantities: reduced item dimension and perturbation magnitude."""

    n1_prime: int
    w: float

    def __post_init__(self):
        if self.n1_prime < 1:
            raise ValueError(f"n1_prime must be >= 1, got {self.n1_prime}")
        if not self.w >= 0:
            raise ValueError(f"w must be >= 0, got {self.w}")


@dataclass(frozen=True)
class PublishedMatrix:
    """The published matrix (users x n1_prime) plus provenance."""

    values: np.ndarray
    plan: PerturbationPlan
    params: PublishParams
    padded_n: int
    source_users: int
    source_items: int
    warnings: tuple[str, ...] = field(default=())

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (self.source_users, self.plan.n1_prime):
            raise ValueError(
                f"published shape {values.shape} does not match "
                f"(m={self.source_users}, n1_prime={self.plan.n1_prime})"
            )
        if not np.all(np.isfinite(values)):
            raise NumericError("published matrix contains non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "warnings", tuple(self.warnings))


def derive_plan(params: PublishParams) -> PerturbationPlan:
    """Compute (n1_prime, w) from the publishing parameters.

    Without an override, ``n1_prime = ceil(8 ln(2/mu) / eta**2)``.  The
    default w is ``sqrt(32 n1' ln(2/delta)) / eps * ln(4 n1' / delta)``;
    the "row_bound" alternative solves ``2 (1/w + 1/w**2) ln(4/delta0) <=
    eps0`` for the per-row budget (eps0, delta0) implied by (eps, delta).
    """
    if params.n1_prime_override is not None:
        n1_prime = int(params.n1_prime_override)
    else:
        n1_prime = math.ceil(8.0 * math.log(2.0 / params.mu) / params.eta**2)
    if params.w_method == W_METHOD_DIRECT:
        w = (
            math.sqrt(32.0 * n1_prime * math.log(2.0 / params.delta))
            / params.epsilon
            * math.log(4.0 * n1_prime / params.delta)
        )
    else:
        eps0, delta0 = per_row_budget(params.epsilon, params.delta, n1_prime)
        w = 1.0 / (math.sqrt(eps0 / (2.0 * math.log(4.0 / delta0)) + 0.25) - 0.5)
    return PerturbationPlan(n1_prime=n1_prime, w=w)


def per_row_budget(epsilon: float, delta: float, n1_prime: int) -> tuple[float, float]:
    """Per-row (eps0, delta0) whose n1_prime-fold composition meets (eps, delta)."""
    eps0 = epsilon / math.sqrt(4.0 * n1_prime * math.log(2.0 / delta))
    delta0 = delta / (2.0 * n1_prime)
    return eps0, delta0


def perturb_singular_values(matrix: np.ndarray, w: float) -> np.ndarray:
    """Lift every singular value sigma of `matrix` to sqrt(sigma**2 + w**2).

    Uses the thin SVD, so exactly min(m, n) singular values are perturbed
    (zeros among them are raised to w).  Singular vectors are unchanged and
    the output has the input's shape.
    """
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite entries")
    if not w >= 0:
        raise ValueError(f"w must be >= 0, got {w}")
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD did not converge: {exc}") from exc
    return (u * np.sqrt(s * s + w * w)) @ vt


def gaussian_jlt_matrix(n1_prime: int, n1: int, stream: Stream) -> np.ndarray:
    """Dense (n1_prime, n1) matrix of i.i.d. standard normals from `stream`."""
    if n1_prime < 1 or n1 < 1:
        raise ValueError(f"dimensions must be positive, got ({n1_prime}, {n1})")
    return stream.generator().standard_normal((n1_prime, n1))


def draw_sign_diagonal(d: int, stream: Stream) -> np.ndarray:
    """Diagonal of D: d independent +/-1 signs with equal probability."""
    rng = stream.generator()
    return (rng.integers(0, 2, size=d) * 2 - 1).astype(np.float64)


def draw_sparse_projection(
    n1_prime: int, d: int, q: float, stream: Stream
) -> sp.csr_matrix:
    """Sparse (n1_prime, d) matrix P: each entry 0 w.p. 1-q, else N(0, 1/q).

    Small matrices are drawn through a dense Bernoulli mask; large ones
    row-by-row so the draw costs O(nnz) rather than O(n1_prime * d).  Both
    paths realize the same i.i.d. entry distribution.
    """
    if not 0 < q <= 1:
        raise ValueError(f"q must be in (0, 1], got {q}")
    if n1_prime < 1 or d < 1:
        raise ValueError(f"dimensions must be positive, got ({n1_prime}, {d})")
    rng = stream.generator()
    scale = 1.0 / math.sqrt(q)
    if n1_prime * d <= _SPARSE_DENSE_DRAW_LIMIT:
        mask = rng.random((n1_prime, d)) < q
        values = rng.standard_normal(int(mask.sum())) * scale
        rows, cols = np.nonzero(mask)
        return sp.csr_matrix((values, (rows, cols)), shape=(n1_prime, d))
    indptr = np.zeros(n1_prime + 1, dtype=np.int64)
    col_chunks = []
    counts = rng.binomial(d, q, size=n1_prime)
    for i in range(n1_prime):
        idx = rng.choice(d, size=int(counts[i]), replace=False, shuffle=False)
        idx.sort()
        col_chunks.append(idx.astype(np.int64))
        indptr[i + 1] = indptr[i] + counts[i]
    cols = (
        np.concatenate(col_chunks) if col_chunks else np.empty(0, dtype=np.int64)
    )
    values = rng.standard_normal(cols.size) * scale
    return sp.csr_matrix((values, cols, indptr), shape=(n1_prime, d))


if HAVE_NUMBA:
    from numba import njit, prange

    @njit(parallel=True, cache=True)
    def _sparse_right_apply(indptr, cols, vals, rows_in, out):  # pragma: no cover
        # out (m, r) = rows_in (m, d) @ P.T for CSR P (r, d)
        m = rows_in.shape[0]
        r = indptr.size - 1
        for u in prange(m):
            row = rows_in[u]
            for i in range(r):
                acc = 0.0
                for k in range(indptr[i], indptr[i + 1]):
                    acc += vals[k] * row[cols[k]]
                out[u, i] = acc


def _apply_projection_rows(p_mat: sp.csr_matrix, rows_in: np.ndarray) -> np.ndarray:
    """rows_in (m, d) @ P.T without leaving the user-rows layout."""
    if HAVE_NUMBA:
        out = np.empty((rows_in.shape[0], p_mat.shape[0]))
        _sparse_right_apply(
            p_mat.indptr.astype(np.int64),
            p_mat.indices.astype(np.int64),
            p_mat.data,
            np.ascontiguousarray(rows_in),
            out,
        )
        return out
    return (p_mat @ rows_in.T).T


def _sjlt_user_rows(
    rows_in: np.ndarray,
    n1_prime: int,
    q: float,
    stream: Stream,
    precondition: bool = True,
) -> np.ndarray:
    """Apply P H D to user-row vectors: rows_in (m, d) -> (m, n1_prime).

    H D x spreads each vector's energy across coordinates before the sparse
    projection samples them; `precondition=False` (test hook) skips H and D,
    reducing the transform to the sparse projection alone.
    """
    d = rows_in.shape[1]
    if precondition:
        signs = draw_sign_diagonal(d, stream.child("signs"))
        y = np.ascontiguousarray(rows_in * signs[np.newaxis, :])
        fwht_rows_unnormalized(y)
        y *= 1.0 / math.sqrt(d)
    else:
        y = np.ascontiguousarray(rows_in)
    p_mat = draw_sparse_projection(n1_prime, d, q, stream.child("sparse"))
    return _apply_projection_rows(p_mat, y)


def sjlt_apply(
    r1: np.ndarray,
    n1_prime: int,
    q: float,
    stream: Stream,
    precondition: bool = True,
) -> np.ndarray:
    """Sparse-aware transform P @ (H @ (D @ r1)) of an items x users matrix.

    The item dimension (rows of `r1`) must already be padded to a power of
    two.  Returns the (n1_prime, users) projection, unscaled - the pipeline
    applies the 1/sqrt(n1_prime) factor.
    """
    r1 = np.asarray(r1, dtype=np.float64)
    if r1.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {r1.shape}")
    d = r1.shape[0]
    if d < 1 or d & (d - 1):
        raise ValueError(f"item dimension must be a power of two, got {d}")
    out_rows = _sjlt_user_rows(
        np.ascontiguousarray(r1.T), n1_prime, q, stream, precondition=precondition
    )
    return out_rows.T


def next_pow2(n: int) -> int:
    """Smallest power of two >= n."""
    if n < 1:
        raise ValueError(f"need a positive dimension, got {n}")
    return 1 << (n - 1).bit_length()


def publish(r: RatingMatrix, params: PublishParams) -> PublishedMatrix:
    """Run the full publishing pipeline on a raw rating matrix.

    Deterministic given ``params.seed``; the output is users x n1_prime with
    provenance (original dimensions, padding, derived plan) attached.
    """
    plan = derive_plan(params)
    n1 = r.n_items
    centered, _ = center_by_item_mean(r)
    r1_rows = perturb_singular_values(centered.values, plan.w)
    stream = Stream(params.seed)
    warnings = []
    if plan.n1_prime > n1:
        warnings.append(
            f"n1_prime={plan.n1_prime} exceeds the item dimension n1={n1}; "
            "the transform enlarges rather than reduces"
        )
    if params.transform == TRANSFORM_JLT:
        m_mat = gaussian_jlt_matrix(plan.n1_prime, n1, stream.child("gauss_proj"))
        out = r1_rows @ m_mat.T
        padded_n = n1
    else:
        padded_n = next_pow2(n1)
        if padded_n != n1:
            padded = np.zeros((r.n_users, padded_n))
            padded[:, :n1] = r1_rows
            r1_rows = padded
        out = _sjlt_user_rows(
            np.ascontiguousarray(r1_rows),
            plan.n1_prime,
            params.q,
            stream.child("sparse_proj"),
        )
    out *= 1.0 / math.sqrt(plan.n1_prime)
    return PublishedMatrix(
        values=out,
        plan=plan,
        params=params,
        padded_n=padded_n,
        source_users=r.n_users,
        source_items=n1,
        warnings=tuple(warnings),
    )


# --------------------------------------------------------------------------
# file format: one JSON header line, then row-major little-endian float64


def _header_dict(pm: PublishedMatrix) -> dict:
    header = {
        "format_version": FORMAT_VERSION,
        "m": pm.source_users,
        "n1": pm.source_items,
        "n1_prime": pm.plan.n1_prime,
        "padded_n": pm.padded_n,
        "epsilon": pm.params.epsilon,
        "delta": pm.params.delta,
        "eta": pm.params.eta,
        "mu": pm.params.mu,
        "q": pm.params.q,
        "transform_kind": pm.params.transform,
        "seed": pm.params.seed,
        "w": pm.plan.w,
    }
    if pm.warnings:
        header["warnings"] = list(pm.warnings)
    return header


def save_published(pm: PublishedMatrix, path: str | Path) -> None:
    """Write header record plus row-major float64 little-endian payload."""
    path = Path(path)
    header = json.dumps(_header_dict(pm), sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8"))
        fh.write(b"\n")
        fh.write(np.ascontiguousarray(pm.values, dtype="<f8").tobytes())


def load_published(path: str | Path) -> PublishedMatrix:
    """Read a matrix written by :func:`save_published`."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    header = json.loads(header_line.decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(
            f"unsupported format_version {header.get('format_version')} in {path}"
        )
    m, n1_prime = int(header["m"]), int(header["n1_prime"])
    expected = m * n1_prime * 8
    if len(payload) != expected:
        raise ValueError(
            f"payload of {path} has {len(payload)} bytes, expected {expected}"
        )
    values = np.frombuffer(payload, dtype="<f8").reshape(m, n1_prime).copy()
    params = PublishParams(
        epsilon=float(header["epsilon"]),
        delta=float(header["delta"]),
        eta=float(header["eta"]),
        mu=float(header["mu"]),
        q=float(header["q"]),
        n1_prime_override=n1_prime,
        transform=str(header["transform_kind"]),
        seed=int(header["seed"]),
    )
    plan = PerturbationPlan(n1_prime=n1_prime, w=float(header["w"]))
    return PublishedMatrix(
        values=values,
        plan=plan,
        params=params,
        padded_n=int(header["padded_n"]),
        source_users=m,
        source_items=int(header["n1"]),
        warnings=tuple(header.get("warnings", ())),
    )


def published_to_csv(pm: PublishedMatrix, path: str | Path) -> None:
    """CSV export: commented header lines, one row of floats per user."""
    header = _header_dict(pm)
    lines = [f"# {key}={header[key]}" for key in sorted(header)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
        for row in pm.values:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def with_seed(params: PublishParams, seed: int) -> PublishParams:
    """Copy of `params` with a different seed (convenience for trial loops)."""
    return replace(params, seed=seed)
