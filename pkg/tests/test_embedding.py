import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from xmalign.embedding import (
    as_matrix,
    as_vector,
    cosine_similarity,
    l2_distance,
    normalize_rows,
    pairwise_l2,
    unit_normalize,
)
from xmalign.errors import ContractError, DegenerateInputError

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_unit_normalize_simple():
    np.testing.assert_allclose(unit_normalize([3.0, 4.0]), [0.6, 0.8])


def test_unit_normalize_zero_raises():
    with pytest.raises(DegenerateInputError):
        unit_normalize(np.zeros(4))


def test_normalize_rows_names_bad_row():
    with pytest.raises(DegenerateInputError, match="row 1"):
        normalize_rows([[1.0, 0.0], [0.0, 0.0]])


def test_shape_contracts():
    with pytest.raises(ContractError):
        as_vector([[1.0]])
    with pytest.raises(ContractError):
        as_vector([])
    with pytest.raises(ContractError):
        as_matrix(np.zeros((0, 3)))
    with pytest.raises(ContractError):
        as_vector([1.0, np.nan])
    with pytest.raises(ContractError):
        l2_distance([1.0, 2.0], [1.0])


def test_cosine_examples():
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 2], [2, 4]) == pytest.approx(1.0)
    assert cosine_similarity([1, 2], [-1, -2]) == pytest.approx(-1.0)
    with pytest.raises(DegenerateInputError):
        cosine_similarity([0, 0], [1, 0])


def test_pairwise_matches_loop(rng):
    a, b = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
    expected = [[l2_distance(x, y) for y in b] for x in a]
    np.testing.assert_allclose(pairwise_l2(a, b), expected, rtol=1e-14)


def test_pairwise_transpose_is_bitwise(rng):
    a, b = rng.normal(size=(6, 5)), rng.normal(size=(6, 5))
    assert np.array_equal(pairwise_l2(a, b), pairwise_l2(b, a).T)


@given(arrays(np.float64, st.integers(1, 12), elements=finite))
def test_normalized_vectors_have_unit_norm(v):
    if np.linalg.norm(v) < 1e-6:
        return
    assert np.linalg.norm(unit_normalize(v)) == pytest.approx(1.0, abs=1e-12)


@given(arrays(np.float64, 6, elements=finite), arrays(np.float64, 6, elements=finite))
def test_cosine_bounded_and_symmetric(a, b):
    if np.linalg.norm(a) < 1e-6 or np.linalg.norm(b) < 1e-6:
        return
    c = cosine_similarity(a, b)
    assert -1.0 <= c <= 1.0
    assert c == cosine_similarity(b, a)
