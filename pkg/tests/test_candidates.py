import numpy as np
import pytest

from dproxy.candidates import CandidatePool, score_candidates, update_pool
from dproxy.errors import ZeroNormCentroid


def make_pool(embeddings, words=None):
    n = embeddings.shape[0]
    return CandidatePool(
        words=words or [f"w{i}" for i in range(n)],
        embeddings=np.asarray(embeddings, dtype=np.float64),
        active=np.ones(n, dtype=bool),
    )


def test_two_cluster_hand_oracle():
    # proxies split between e1 and e2; candidates {e1, e2, -e1, -e2}
    # centroids become {e1, e2}; mean-cosine scores are +0.5 for the
    # prototypes and -0.5 for their negations
    e1 = np.array([1.0, 0.0])
    e2 = np.array([0.0, 1.0])
    proxies = np.array([e1, e1, e1, e2, e2, e2])
    pool = make_pool(np.array([e1, e2, -e1, -e2]), words=["e1", "e2", "-e1", "-e2"])
    updated = update_pool(pool, proxies, n_classes=2, epoch=10, seed=0)
    assert updated.active_words() == ["e1", "e2"]
    assert updated.history == [(10, ["e1", "e2"])]


def test_floor_is_noop_with_event():
    pool = make_pool(np.eye(3))
    proxies = np.random.default_rng(0).standard_normal((10, 3))
    updated = update_pool(pool, proxies, n_classes=3, epoch=5, seed=1)
    assert updated.active_count == 3
    assert updated.history == []
    assert updated.events == [{"epoch": 5, "event": "PoolExhausted"}]


def test_degenerate_proxies_skip():
    pool = make_pool(np.eye(4))
    proxies = np.ones((8, 4))  # all identical
    updated = update_pool(pool, proxies, n_classes=2, epoch=3, seed=2)
    assert updated.active_count == 4
    assert updated.events == [{"epoch": 3, "event": "DegenerateProxies"}]


def test_halving_schedule_16_to_4():
    rng = np.random.default_rng(3)
    emb = rng.standard_normal((16, 6))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    pool = make_pool(emb)
    proxies = rng.standard_normal((40, 6))
    sizes = [pool.active_count]
    for epoch in (4, 8):
        pool = update_pool(pool, proxies, n_classes=4, epoch=epoch, seed=epoch)
        sizes.append(pool.active_count)
    assert sizes == [16, 8, 4]


def test_deactivated_never_return():
    rng = np.random.default_rng(4)
    emb = rng.standard_normal((8, 4))
    pool = make_pool(emb)
    proxies = rng.standard_normal((20, 4))
    p1 = update_pool(pool, proxies, n_classes=2, epoch=1, seed=1)
    gone = set(pool.words) - set(p1.active_words())
    p2 = update_pool(p1, proxies, n_classes=2, epoch=2, seed=2)
    assert gone.isdisjoint(p2.active_words())


def test_history_reconstructs_masks():
    rng = np.random.default_rng(5)
    emb = rng.standard_normal((12, 5))
    pool = make_pool(emb)
    proxies = rng.standard_normal((30, 5))
    p = pool
    for epoch in (2, 4):
        p = update_pool(p, proxies, n_classes=3, epoch=epoch, seed=epoch)
    # replay: start from all-active, apply each retained list in order
    mask = np.ones(12, dtype=bool)
    for _, retained in p.history:
        mask = np.isin(np.array(pool.words), retained)
    assert np.array_equal(mask, p.active)


def test_score_self_is_one():
    c = np.array([[0.6, 0.8]])
    assert score_candidates(c, c)[0] == pytest.approx(1.0)


def test_score_orthogonal_is_zero():
    cand = np.array([[0.0, 0.0, 1.0]])
    centroids = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    assert score_candidates(cand, centroids)[0] == pytest.approx(0.0)


def test_score_cancellation():
    mu = np.array([0.6, 0.8])
    cand = mu.reshape(1, -1)
    centroids = np.vstack([mu, -mu])
    assert score_candidates(cand, centroids)[0] == pytest.approx(0.0)


def test_score_centroid_order_invariant():
    rng = np.random.default_rng(6)
    cands = rng.standard_normal((5, 4))
    centroids = rng.standard_normal((3, 4))
    a = score_candidates(cands, centroids)
    b = score_candidates(cands, centroids[::-1])
    assert np.allclose(a, b)


def test_zero_norm_centroid_rejected():
    with pytest.raises(ZeroNormCentroid):
        score_candidates(np.eye(2), np.zeros((1, 2)))


def test_ties_break_by_word_order():
    # the centroids are {e1, e2}, so all four candidates tie at a mean
    # cosine of 0.5; stable selection keeps the earliest words
    e1 = np.array([1.0, 0.0])
    e2 = np.array([0.0, 1.0])
    pool = make_pool(np.array([e1, e1, e2, e2]), words=["a", "b", "c", "d"])
    proxies = np.array([e1] * 3 + [e2] * 3)
    updated = update_pool(pool, proxies, n_classes=2, epoch=1, seed=0)
    assert updated.active_words() == ["a", "b"]
