"""Vector helpers shared across the package.

Feature vectors are 1-D float64 arrays, feature matrices are 2-D (B, d)
float64 arrays. Everything here is pure.
"""

import numpy as np

from .errors import ContractError, DegenerateInputError

DEFAULT_DIM = 32


def as_vector(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1 or a.size == 0:
        raise ContractError(f"expected a non-empty 1-D vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractError("feature vector has non-finite entries")
    return a


def as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2 or a.shape[0] == 0 or a.shape[1] == 0:
        raise ContractError(f"expected a (B, d) matrix with B, d >= 1, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractError("feature matrix has non-finite entries")
    return a


def unit_normalize(v) -> np.ndarray:
    """Scale ``v`` to unit Euclidean norm.

    Raises DegenerateInputError for a zero vector instead of dividing by zero.
    """
    v = as_vector(v)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise DegenerateInputError("cannot normalize a zero-norm vector")
    return v / n


def normalize_rows(m) -> np.ndarray:
    m = as_matrix(m)
    n = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(n == 0.0):
        bad = int(np.flatnonzero(n[:, 0] == 0.0)[0])
        raise DegenerateInputError(f"row {bad} has zero norm")
    return m / n


def l2_distance(a, b) -> float:
    a, b = as_vector(a), as_vector(b)
    if a.shape != b.shape:
        raise ContractError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return float(np.linalg.norm(a - b))


def cosine_similarity(a, b) -> float:
    a, b = as_vector(a), as_vector(b)
    if a.shape != b.shape:
        raise ContractError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine similarity of a zero-norm vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def pairwise_l2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(n, m) matrix of Euclidean distances, computed by direct differencing.

    Direct differencing (not the Gram trick) keeps D(a, b) == D(b, a).T bit-for-bit.
    """
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))
