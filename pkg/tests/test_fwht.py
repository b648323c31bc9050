import numpy as np
import pytest

from privrec.fwht import HAVE_NUMBA, fwht_columns, fwht_inplace, fwht_rows_unnormalized

PATHS = [False] + ([True] if HAVE_NUMBA else [])


def hadamard_oracle(d: int) -> np.ndarray:
    """Explicit normalized Hadamard matrix from the bitwise inner product."""
    h = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            h[i, j] = (-1) ** bin(i & j).count("1")
    return h / np.sqrt(d)


@pytest.mark.parametrize("use_numba", PATHS)
def test_first_column_of_h2(use_numba):
    out = fwht_inplace(np.array([1.0, 0.0]), use_numba=use_numba)
    assert np.allclose(out, [1 / np.sqrt(2), 1 / np.sqrt(2)], atol=1e-12)


@pytest.mark.parametrize("use_numba", PATHS)
def test_involution(use_numba):
    rng = np.random.default_rng(0)
    x = rng.standard_normal(64)
    out = fwht_inplace(fwht_inplace(x.copy(), use_numba=use_numba), use_numba=use_numba)
    assert np.max(np.abs(out - x)) < 1e-10


@pytest.mark.parametrize("use_numba", PATHS)
def test_length_four_fixed_vector(use_numba):
    # oracle: explicit 4x4 normalized Hadamard multiply
    x = np.array([1.0, 2.0, 3.0, 4.0])
    expected = hadamard_oracle(4) @ x
    assert np.allclose(expected, [5.0, -1.0, -2.0, 0.0], atol=1e-12)
    out = fwht_inplace(x.copy(), use_numba=use_numba)
    assert np.allclose(out, expected, atol=1e-12)


@pytest.mark.parametrize("use_numba", PATHS)
@pytest.mark.parametrize("d", [1, 2, 4, 8, 16, 32, 64])
def test_matches_explicit_matrix(d, use_numba):
    rng = np.random.default_rng(d)
    x = rng.standard_normal(d)
    out = fwht_inplace(x.copy(), use_numba=use_numba)
    assert np.max(np.abs(out - hadamard_oracle(d) @ x)) < 1e-10


def test_non_power_of_two_rejected():
    with pytest.raises(ValueError, match="power of two"):
        fwht_inplace(np.zeros(6))
    with pytest.raises(ValueError, match="power of two"):
        fwht_columns(np.zeros((12, 3)))


def test_in_place_on_float64():
    x = np.array([1.0, 0.0])
    out = fwht_inplace(x)
    assert out is x


@pytest.mark.parametrize("use_numba", PATHS)
def test_columns_match_per_vector_transform(use_numba):
    rng = np.random.default_rng(5)
    mat = rng.standard_normal((16, 7))
    out = fwht_columns(mat, use_numba=use_numba)
    for j in range(7):
        ref = fwht_inplace(mat[:, j].copy(), use_numba=use_numba)
        assert np.max(np.abs(out[:, j] - ref)) < 1e-12


def test_rows_kernel_requires_contiguous_float64():
    with pytest.raises(ValueError, match="C-contiguous"):
        fwht_rows_unnormalized(np.zeros((4, 8)).T)


def test_sign_flip_rotation_preserves_l2():
    # H, D unitary: the preconditioning rotation keeps every vector's norm
    rng = np.random.default_rng(9)
    for d in (8, 64, 256):
        x = rng.standard_normal(d)
        signs = rng.choice([-1.0, 1.0], size=d)
        out = fwht_inplace(signs * x)
        assert abs(np.linalg.norm(out) - np.linalg.norm(x)) < 1e-10
