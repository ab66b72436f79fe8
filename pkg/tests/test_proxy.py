import numpy as np
import pytest

from dproxy import diffmath as dm
from dproxy.errors import BatchTooSmall, EmptyCandidateSet
from dproxy.ioformats import DatasetBundle, EmbeddingMatrix, Perspective
from dproxy.proxy import (
    derive_proxies,
    derive_proxies_np,
    init_base,
    loss_concept,
    loss_user,
    proxy_weights,
)
from conftest import unit_rows


def _bundle_with_star(star=None, size=5, dim=4):
    rng = np.random.default_rng(0)
    v = unit_rows(rng, size, dim).astype(np.float32)
    t = unit_rows(rng, size, dim).astype(np.float32)
    labels = np.arange(size) % 2
    return DatasetBundle(
        name="b",
        visual=EmbeddingMatrix(v),
        text=EmbeddingMatrix(t),
        perspectives=[Perspective("p", labels, 2)],
        star_embedding=star,
    )


def test_init_base_copies_star():
    star = np.array([[0.0, 1.0, 0.0, 0.0]], dtype=np.float32)
    state = init_base(_bundle_with_star(star), seed=0)
    assert state.base.shape == (5, 4)
    assert np.allclose(state.base, star)
    state.base[0, 0] = 7.0  # rows are independent copies
    assert state.base[1, 0] == 0.0


def test_init_base_seeded_and_unit_norm():
    a = init_base(_bundle_with_star(None), seed=3)
    b = init_base(_bundle_with_star(None), seed=3)
    c = init_base(_bundle_with_star(None), seed=4)
    assert np.array_equal(a.base, b.base)
    assert not np.array_equal(a.base, c.base)
    assert np.allclose(np.linalg.norm(a.base, axis=1), 1.0)


def test_orthogonal_base_gives_uniform_mixture():
    candidates = np.zeros((3, 6))
    candidates[:, :3] = np.eye(3)
    base = np.zeros((2, 6))
    base[:, 5] = 1.0  # orthogonal to every candidate
    derived = derive_proxies_np(base, candidates, tau_alpha=0.3)
    assert np.allclose(derived, candidates.mean(axis=0))


def test_single_candidate_dominates():
    rng = np.random.default_rng(1)
    candidates = unit_rows(rng, 1, 5)
    base = unit_rows(rng, 4, 5)
    derived = derive_proxies_np(base, candidates, tau_alpha=0.2)
    assert np.allclose(derived, np.tile(candidates, (4, 1)))


def test_low_temperature_approaches_argmax():
    rng = np.random.default_rng(2)
    candidates = unit_rows(rng, 6, 8)
    base = unit_rows(rng, 10, 8)
    sims = base @ candidates.T
    nearest = sims.argmax(axis=1)  # the oracle
    # the limit statement needs a unique argmax; skip near-ties where a
    # 1e-4 temperature still mixes the top two candidates
    top2 = np.sort(sims, axis=1)[:, -2:]
    clear = (top2[:, 1] - top2[:, 0]) > 1e-2
    assert clear.any()
    derived = derive_proxies_np(base, candidates, tau_alpha=1e-4)
    assert np.allclose(derived[clear], candidates[nearest[clear]], atol=1e-6)


def test_convex_hull_property():
    rng = np.random.default_rng(3)
    for _ in range(50):
        candidates = rng.standard_normal((int(rng.integers(1, 9)), 7))
        base = rng.standard_normal((int(rng.integers(1, 12)), 7))
        weights = proxy_weights(base, candidates, tau_alpha=float(rng.uniform(0.05, 1.0)))
        assert weights.min() >= 0.0
        assert np.abs(weights.sum(axis=1) - 1.0).max() <= 1e-6


def test_empty_candidates_rejected():
    with pytest.raises(EmptyCandidateSet):
        derive_proxies(dm.constant(np.ones((2, 3))), dm.constant(np.ones((0, 3))), 0.2)


def test_loss_user_zero_at_centroid():
    rng = np.random.default_rng(4)
    candidates = unit_rows(rng, 5, 4)
    centroid = candidates.mean(axis=0)
    proxies = np.tile(centroid, (3, 1))
    value = loss_user(dm.constant(proxies, dtype=np.float64),
                      dm.constant(candidates, dtype=np.float64)).item()
    assert value == pytest.approx(0.0, abs=1e-12)


def test_loss_user_single_candidate_zero():
    c = np.array([[0.6, 0.8]])
    value = loss_user(dm.constant(c.copy(), dtype=np.float64),
                      dm.constant(c, dtype=np.float64)).item()
    assert value == pytest.approx(0.0, abs=1e-12)


def test_loss_user_unit_offset():
    candidates = np.array([[1.0, 0.0], [0.0, 1.0]])
    proxy = candidates.mean(axis=0) + np.array([1.0, 0.0])
    value = loss_user(dm.constant(proxy.reshape(1, -1), dtype=np.float64),
                      dm.constant(candidates, dtype=np.float64)).item()
    assert value == pytest.approx(1.0)


def test_loss_concept_zero_inner_products():
    fused = np.array([[1.0, 0.0], [0.0, 0.0]])
    proxies = np.array([[0.0, 0.0], [0.0, 1.0]])
    # every off-diagonal inner product is 0: (1/2)(log 1 + log 1) = 0
    value = loss_concept(dm.constant(fused, dtype=np.float64),
                         dm.constant(proxies, dtype=np.float64), sigma=0.2).item()
    assert value == pytest.approx(0.0, abs=1e-12)


def test_loss_concept_three_way_log2():
    fused = np.eye(3)
    proxies = np.zeros((3, 3))
    value = loss_concept(dm.constant(fused, dtype=np.float64),
                         dm.constant(proxies, dtype=np.float64), sigma=0.5).item()
    assert value == pytest.approx(np.log(2.0))


def test_loss_concept_symmetric_pair():
    s = 0.37
    fused = np.array([[1.0, 0.0], [0.0, 1.0]])
    proxies = np.array([[0.0, s], [s, 0.0]])  # f1.w2 = f2.w1 = s
    value = loss_concept(dm.constant(fused, dtype=np.float64),
                         dm.constant(proxies, dtype=np.float64), sigma=0.2).item()
    assert value == pytest.approx(s / 0.2)


def test_loss_concept_needs_two():
    with pytest.raises(BatchTooSmall):
        loss_concept(dm.constant(np.ones((1, 3))), dm.constant(np.ones((1, 3))), 0.2)


def test_loss_concept_monotone_hardness():
    rng = np.random.default_rng(5)
    fused = rng.standard_normal((4, 3))
    proxies = rng.standard_normal((4, 3))

    def value(f):
        return loss_concept(dm.constant(f, dtype=np.float64),
                            dm.constant(proxies, dtype=np.float64), sigma=0.3).item()

    # raise one off-diagonal inner product by nudging f_0 along w_2
    step = 1e-5
    bumped = fused.copy()
    bumped[0] += step * proxies[2]
    assert (value(bumped) - value(fused)) / step > 0


def test_proxy_losses_pass_grad_check():
    rng = np.random.default_rng(6)
    candidates = unit_rows(rng, 4, 6)
    store = dm.ParamStore()
    store.add("base", 0.5 * rng.standard_normal((5, 6)), dtype=np.float64)
    store.add("fused", rng.standard_normal((5, 6)), dtype=np.float64)

    def f(s):
        cands = dm.constant(candidates, dtype=np.float64)
        proxies = derive_proxies(s["base"], cands, tau_alpha=0.2)
        total = dm.add(loss_user(proxies, cands),
                       loss_concept(s["fused"], proxies, sigma=0.2))
        return total

    report = dm.grad_check(f, store, step=1e-5, tolerance=1e-4)
    assert report.passed, report


def test_proposition_bound_frozen_weights():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(1, 10))
        k = int(rng.integers(1, 8))
        d = int(rng.integers(2, 12))
        base = rng.standard_normal((n, d))
        cands = rng.standard_normal((k, d))
        moved = cands + rng.standard_normal((k, d))
        weights = proxy_weights(base, cands, tau_alpha=0.2)
        delta_proxy = np.linalg.norm(weights @ (moved - cands), axis=1)
        bound = np.linalg.norm(moved - cands, axis=1).max()
        assert (delta_proxy <= bound + 1e-9).all()
