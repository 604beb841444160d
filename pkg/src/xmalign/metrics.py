"""Retrieval and distribution metrics: recall@K, Frechet distance, and the
classifier-based score analog of the Inception Score.
"""

import numpy as np

from .embedding import as_matrix, pairwise_l2
from .errors import ContractError, NumericError

FRECHET_RIDGE = 1e-6
PROB_FLOOR = 1e-12


def _unit_or_zero(m):
    m = as_matrix(m)
    n = np.linalg.norm(m, axis=1, keepdims=True)
    return np.divide(m, n, out=np.zeros_like(m), where=n > 0)


def rank_database(queries, database) -> np.ndarray:
    """(n_queries, n_db) database indices sorted nearest first.

    Distances are Euclidean between unit-normalized rows; ties go to the
    lower database index. A zero row stays at the origin, one unit from
    every normalized row.
    """
    q = _unit_or_zero(queries)
    db = _unit_or_zero(database)
    if q.shape[1] != db.shape[1]:
        raise ContractError("query and database dimensions differ")
    return np.argsort(pairwise_l2(q, db), axis=1, kind="stable")


def recall_at_k(queries, database, query_labels, db_labels, k: int) -> float:
    """Fraction of queries with a label-matching database row among their top k.

    Pass class labels for class-level recall, or clip ids for instance-level.
    """
    database = as_matrix(database)
    if database.shape[0] == 0:
        raise ContractError("empty database")
    if k < 1:
        raise ContractError("k must be >= 1")
    query_labels = np.asarray(query_labels)
    db_labels = np.asarray(db_labels)
    queries = as_matrix(queries)
    if query_labels.shape[0] != queries.shape[0] or db_labels.shape[0] != database.shape[0]:
        raise ContractError("labels must be given for every query and database row")
    top = rank_database(queries, database)[:, :k]
    hits = (db_labels[top] == query_labels[:, None]).any(axis=1)
    return float(hits.mean())


def frechet_from_moments(mu1, sigma1, mu2, sigma2):
    """Frechet distance between two Gaussians; returns (distance, clamped eigenvalue mass).

    The trace of (S1 S2)^{1/2} is taken from the eigenvalues of the symmetric
    matrix S1^{1/2} S2 S1^{1/2}, with negative eigenvalues clamped to zero.
    """
    mu1, mu2 = np.atleast_1d(mu1).astype(np.float64), np.atleast_1d(mu2).astype(np.float64)
    s1, s2 = np.atleast_2d(sigma1).astype(np.float64), np.atleast_2d(sigma2).astype(np.float64)
    if not all(np.all(np.isfinite(a)) for a in (mu1, mu2, s1, s2)):
        raise NumericError("non-finite mean or covariance")
    ev1, vec1 = np.linalg.eigh((s1 + s1.T) / 2)
    clamped = float(-ev1[ev1 < 0].sum())
    root1 = (vec1 * np.sqrt(np.clip(ev1, 0.0, None))) @ vec1.T
    inner = root1 @ s2 @ root1
    ev = np.linalg.eigvalsh((inner + inner.T) / 2)
    clamped += float(-ev[ev < 0].sum())
    tr_covmean = np.sqrt(np.clip(ev, 0.0, None)).sum()
    diff = mu1 - mu2
    value = float(diff @ diff + np.trace(s1) + np.trace(s2) - 2.0 * tr_covmean)
    return max(value, 0.0), clamped


def feature_moments(x):
    x = as_matrix(x)
    mu = x.mean(axis=0)
    if x.shape[0] < 2:
        cov = np.zeros((x.shape[1], x.shape[1]))
    else:
        cov = np.atleast_2d(np.cov(x, rowvar=False))
    if x.shape[0] <= x.shape[1]:
        cov = cov + FRECHET_RIDGE * np.eye(x.shape[1])
    return mu, cov


def frechet_distance(real_features, gen_features, with_clamp: bool = False):
    real_features, gen_features = as_matrix(real_features), as_matrix(gen_features)
    if real_features.shape[1] != gen_features.shape[1]:
        raise ContractError("feature dimensions differ")
    value, clamped = frechet_from_moments(*feature_moments(real_features), *feature_moments(gen_features))
    return (value, clamped) if with_clamp else value


def score_analog(probs, splits: int = 4) -> float:
    """exp(E_x KL(p(y|x) || p(y))), averaged over ``splits`` contiguous chunks."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 1:
        raise ContractError("expected an (N, K) probability matrix")
    if np.any(p < 0) or not np.allclose(p.sum(axis=1), 1.0, atol=1e-9, rtol=0):
        raise ContractError("rows must be probability vectors (sum 1 within 1e-9)")
    if not 1 <= splits <= p.shape[0]:
        raise ContractError(f"cannot split {p.shape[0]} rows into {splits} parts")
    scores = []
    for chunk in np.array_split(p, splits):
        colsum = chunk.sum(axis=0)
        marginal = colsum / chunk.shape[0]
        if np.any(marginal < PROB_FLOOR):
            marginal = np.maximum(marginal, PROB_FLOOR)
            inv_marginal = 1.0 / (marginal / marginal.sum())
        else:
            inv_marginal = chunk.shape[0] / colsum
        # exp(KL(p || m)) per row as prod_y (p_y / m_y)^p_y, with 0^0 = 1
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.prod(np.where(chunk > 0, (chunk * inv_marginal) ** chunk, 1.0), axis=1)
        # geometric mean taken relative to the first row, exact when rows agree
        scores.append(ratio[0] * np.exp(np.mean(np.log(ratio / ratio[0]))))
    return float(np.mean(scores))
