import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg

from xmalign.errors import ContractError, NumericError
from xmalign.metrics import (
    feature_moments,
    frechet_distance,
    frechet_from_moments,
    rank_database,
    recall_at_k,
    score_analog,
)


def brute_recall(q, db, ql, dl, k):
    """Rank by a full Python sort of (distance, index) tuples."""
    hits = 0
    for i in range(len(q)):
        qi = q[i] / np.linalg.norm(q[i])
        dists = []
        for j in range(len(db)):
            dj = db[j] / np.linalg.norm(db[j])
            dists.append((float(np.sqrt(np.sum((qi - dj) ** 2))), j))
        top = [j for _, j in sorted(dists)[:k]]
        hits += any(dl[j] == ql[i] for j in top)
    return hits / len(q)


def test_self_retrieval(rng):
    x = rng.normal(size=(10, 4))
    ids = np.arange(10)
    assert recall_at_k(x, x, ids, ids, 1) == 1.0


def test_adversarial_zero():
    q = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    db = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    # query i's match is db row i (orthogonal) but it is parallel to a wrong row
    db_true = np.array([db[0], q[0] * 0 + db[0]])
    ql = np.array([0, 1])
    dl = np.array([0, 1, 2])
    dl[1], dl[2] = 9, 8
    assert recall_at_k(q, db, ql, dl, 1) == 0.0
    del db_true


def test_matches_brute_force_on_seeded_cases():
    for case in range(100):
        r = np.random.default_rng(case)
        nq, nd, d = r.integers(1, 8), r.integers(1, 10), r.integers(1, 5)
        q, db = r.normal(size=(nq, d)), r.normal(size=(nd, d))
        ql, dl = r.integers(0, 3, nq), r.integers(0, 3, nd)
        k = int(r.integers(1, nd + 1))
        assert recall_at_k(q, db, ql, dl, k) == brute_recall(q, db, ql, dl, k)


def test_ties_go_to_lower_index():
    db = np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 1.0]])
    assert rank_database(np.array([[3.0, 0.0]]), db)[0].tolist()[:2] == [0, 1]


def test_zero_rows_do_not_raise():
    # a zero query sits one unit from every normalized row, so ties fall back to index order
    db = np.array([[0.0, 3.0], [1.0, 0.0]])
    assert rank_database(np.zeros((1, 2)), db)[0].tolist() == [0, 1]
    # a zero database row is one unit away from any query
    order = rank_database(np.array([[1.0, 1.0]]), np.array([[0.0, 0.0], [1.0, 1.1], [-1.0, -1.0]]))
    assert order[0].tolist() == [1, 0, 2]


def test_recall_contracts(rng):
    x = rng.normal(size=(3, 2))
    with pytest.raises(ContractError):
        recall_at_k(x, np.zeros((0, 2)), [0, 1, 2], [], 1)
    with pytest.raises(ContractError):
        recall_at_k(x, x, [0, 1, 2], [0, 1, 2], 0)
    with pytest.raises(ContractError):
        recall_at_k(x, x, [0, 1], [0, 1, 2], 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_recall_monotone_in_k(seed):
    r = np.random.default_rng(seed)
    q, db = r.normal(size=(6, 3)), r.normal(size=(9, 3))
    ql, dl = r.integers(0, 4, 6), r.integers(0, 4, 9)
    values = [recall_at_k(q, db, ql, dl, k) for k in range(1, 10)]
    assert all(a <= b for a, b in zip(values, values[1:]))
    assert values[-1] == np.mean([any(dl == lab) for lab in ql])


def test_frechet_identical_sets(rng):
    a = rng.normal(size=(200, 5))
    assert frechet_distance(a, a) <= 1e-6


def test_frechet_univariate_closed_form():
    value, mass = frechet_from_moments(np.array([0.0]), np.array([[1.0]]), np.array([1.0]), np.array([[1.0]]))
    assert value == pytest.approx(1.0, abs=1e-8)
    for m1, s1, m2, s2 in [(0.3, 0.5, -1.2, 2.0), (4.0, 3.0, 4.0, 0.1)]:
        value, _ = frechet_from_moments([m1], [[s1**2]], [m2], [[s2**2]])
        assert value == pytest.approx((m1 - m2) ** 2 + (s1 - s2) ** 2, abs=1e-8)


def _oracle_frechet(mu1, s1, mu2, s2):
    # independent route: scipy's general matrix square root
    covmean = linalg.sqrtm(s1 @ s2).real
    return float(np.sum((mu1 - mu2) ** 2) + np.trace(s1 + s2 - 2 * covmean))


def test_frechet_matches_sqrtm_oracle():
    for seed in range(20):
        r = np.random.default_rng(seed)
        a, b = r.normal(size=(3, 3)), r.normal(size=(3, 3))
        s1, s2 = a @ a.T + 0.1 * np.eye(3), b @ b.T + 0.1 * np.eye(3)
        mu1, mu2 = r.normal(size=3), r.normal(size=3)
        value, mass = frechet_from_moments(mu1, s1, mu2, s2)
        assert value == pytest.approx(_oracle_frechet(mu1, s1, mu2, s2), rel=1e-8, abs=1e-10)
        assert mass <= 1e-6


def test_frechet_from_samples_matches_oracle(rng):
    a = rng.normal(size=(300, 3))
    b = rng.normal(size=(250, 3)) @ np.diag([1.0, 2.0, 0.5]) + 1.0
    mu1, s1 = a.mean(0), np.cov(a, rowvar=False)
    mu2, s2 = b.mean(0), np.cov(b, rowvar=False)
    assert frechet_distance(a, b) == pytest.approx(_oracle_frechet(mu1, s1, mu2, s2), rel=1e-8)


def test_frechet_symmetric(rng):
    a, b = rng.normal(size=(100, 4)), rng.normal(size=(80, 4)) * 1.5
    assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), abs=1e-8)


def test_ridge_when_few_rows(rng):
    _, cov = feature_moments(rng.normal(size=(3, 5)))
    assert np.linalg.eigvalsh(cov).min() > 0


def test_frechet_rejects_non_finite():
    with pytest.raises(NumericError):
        frechet_from_moments([0.0], [[np.nan]], [0.0], [[1.0]])


def test_score_uniform_is_one():
    assert score_analog(np.full((8, 4), 0.25)) == 1.0


@pytest.mark.parametrize("k", [2, 3, 5, 7, 8, 16, 49])
def test_score_one_hot_balanced_is_k(k):
    probs = np.tile(np.eye(k), (4, 1))
    assert score_analog(probs, splits=4) == k
    assert score_analog(probs[np.random.default_rng(k).permutation(4 * k)], splits=1) == k


def test_score_matches_direct_sum(rng):
    logits = rng.normal(size=(40, 6))
    p = np.exp(logits) / np.exp(logits).sum(1, keepdims=True)
    expected = []
    for chunk in (p[0:10], p[10:20], p[20:30], p[30:40]):
        marg = chunk.mean(0)
        kl = [sum(pi * np.log(pi / mi) for pi, mi in zip(row, marg)) for row in chunk]
        expected.append(np.exp(np.mean(kl)))
    assert score_analog(p) == pytest.approx(np.mean(expected), rel=1e-12)


def test_score_contracts():
    with pytest.raises(ContractError):
        score_analog(np.array([[0.5, 0.6]]), splits=1)
    with pytest.raises(ContractError):
        score_analog(np.full((2, 2), 0.5), splits=3)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_score_at_least_one(seed, splits):
    r = np.random.default_rng(seed)
    p = r.dirichlet(np.ones(5) * 0.3, size=12)
    p /= p.sum(1, keepdims=True)
    value = score_analog(p, splits)
    assert 1.0 - 1e-12 <= value <= 5.0 + 1e-9
