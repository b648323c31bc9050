"""Fast Walsh-Hadamard transform in O(d log d).

The normalized Hadamard matrix of order d = 2^k has entries
``d**-0.5 * (-1)**<i, j>`` where <i, j> is the bit-wise inner product of the
zero-based indices; it is symmetric and its own inverse.  The butterfly
kernel below applies it without materializing the matrix.  The hot path is
a numba kernel that processes whole rows (one transform per row, so a row
fits in cache and columns parallelize); a pure-numpy fallback keeps the
library importable without a working JIT.
"""

from __future__ import annotations

import numpy as np

try:  # pragma: no cover - exercised implicitly by which path runs
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

__all__ = ["fwht_inplace", "fwht_columns", "fwht_rows_unnormalized", "HAVE_NUMBA"]


def _require_pow2(d: int) -> None:
    if d < 1 or d & (d - 1):
        raise ValueError(f"transform length must be a power of two, got {d}")


if HAVE_NUMBA:

    @njit(parallel=True, cache=True)
    def _fwht_rows_numba(a):  # pragma: no cover - compiled
        rows, d = a.shape
        for r in prange(rows):
            h = 1
            while h < d:
                for start in range(0, d, 2 * h):
                    for j in range(start, start + h):
                        x = a[r, j]
                        y = a[r, j + h]
                        a[r, j] = x + y
                        a[r, j + h] = x - y
                h *= 2


def _fwht_rows_numpy(a: np.ndarray) -> None:
    # same butterflies, vectorized over rows; in place on the (rows, d) array
    rows, d = a.shape
    h = 1
    while h < d:
        b = a.reshape(rows, d // (2 * h), 2, h)
        top = b[:, :, 0] + b[:, :, 1]
        bot = b[:, :, 0] - b[:, :, 1]
        b[:, :, 0] = top
        b[:, :, 1] = bot
        h *= 2


def fwht_rows_unnormalized(a: np.ndarray, use_numba: bool | None = None) -> None:
    """Apply the unnormalized transform to every row of `a`, in place.

    `a` must be a C-contiguous float64 array of shape (rows, d) with d a
    power of two.  This is the layout the publishing pipeline keeps matrices
    in (one user vector per row).
    """
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {a.shape}")
    _require_pow2(a.shape[1])
    if a.dtype != np.float64 or not a.flags.c_contiguous:
        raise ValueError("rows kernel needs a C-contiguous float64 array")
    if use_numba is None:
        use_numba = HAVE_NUMBA
    if use_numba and HAVE_NUMBA:
        _fwht_rows_numba(a)
    else:
        _fwht_rows_numpy(a)


def fwht_inplace(x: np.ndarray, use_numba: bool | None = None) -> np.ndarray:
    """Normalized Walsh-Hadamard transform of a vector, in place.

    Computes H @ x for the normalized Hadamard matrix of order len(x); the
    input must have power-of-two length.  Returns the transformed array
    (the same object when `x` is a float64 ndarray).
    """
    x = np.asarray(x)
    if x.ndim != 1:
        raise ValueError(f"expected a vector, got shape {x.shape}")
    _require_pow2(x.shape[0])
    if x.dtype != np.float64:
        x = x.astype(np.float64)
    fwht_rows_unnormalized(x.reshape(1, -1), use_numba=use_numba)
    x *= 1.0 / np.sqrt(x.shape[0])
    return x


def fwht_columns(mat: np.ndarray, use_numba: bool | None = None) -> np.ndarray:
    """Normalized transform of every column of a (d, m) matrix; returns new array."""
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {mat.shape}")
    _require_pow2(mat.shape[0])
    a = np.ascontiguousarray(mat.T)
    fwht_rows_unnormalized(a, use_numba=use_numba)
    a *= 1.0 / np.sqrt(mat.shape[0])
    return a.T
