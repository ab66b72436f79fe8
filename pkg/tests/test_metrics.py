import numpy as np
import pytest

from dproxy.errors import LengthMismatch, ShapeMismatch
from dproxy.metrics import nmi, rand_index, rand_index_bruteforce, zeroshot_assign


def test_nmi_identical_partitions():
    assert nmi([0, 0, 1, 1], [0, 0, 1, 1]) == 1.0


def test_nmi_relabel_invariant():
    assert nmi([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0


def test_nmi_independent_uniform_is_zero():
    # contingency table is all ones: mutual information exactly 0
    assert nmi([0, 0, 1, 1], [0, 1, 0, 1]) == 0.0


def test_nmi_both_single_cluster_convention():
    assert nmi([0, 0, 0], [0, 0, 0]) == 1.0


def test_nmi_one_sided_degenerate():
    assert nmi([0, 0, 0, 0], [0, 1, 0, 1]) == 0.0


def test_nmi_arithmetic_variant():
    a = [0, 0, 1, 1, 2, 2]
    b = [0, 0, 0, 1, 1, 1]
    sqrt_v = nmi(a, b)
    arith_v = nmi(a, b, normalization="arithmetic")
    assert 0 < arith_v <= sqrt_v <= 1  # arithmetic mean >= geometric mean


def test_rand_index_identical():
    rng = np.random.default_rng(0)
    for n in (2, 5, 20):
        labels = rng.integers(0, 3, size=n)
        labels[0] = 0
        assert rand_index(labels, labels) == 1.0


def test_rand_index_hand_case():
    # pairs: (0,1) same/diff, (0,2) diff/same, (0,3) diff/diff agree,
    # (1,2) diff/diff agree, (1,3) diff/same, (2,3) same/diff -> 2/6
    assert rand_index([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(2 / 6)


def test_rand_index_all_disagree():
    assert rand_index([0, 0, 0], [0, 1, 2]) == 0.0


def test_rand_index_matches_bruteforce_fuzz():
    rng = np.random.default_rng(1)
    for _ in range(60):
        n = int(rng.integers(2, 51))
        a = rng.integers(0, 5, size=n)
        b = rng.integers(0, 4, size=n)
        assert rand_index(a, b) == rand_index_bruteforce(a, b)


def test_metrics_symmetric_and_bounded():
    rng = np.random.default_rng(2)
    for _ in range(30):
        n = int(rng.integers(2, 200))
        a = rng.integers(0, 6, size=n)
        b = rng.integers(0, 6, size=n)
        v = nmi(a, b)
        r = rand_index(a, b)
        assert 0.0 <= v <= 1.0 and 0.0 <= r <= 1.0
        assert v == nmi(b, a)
        assert r == rand_index(b, a)


def test_length_mismatch():
    with pytest.raises(LengthMismatch):
        nmi([0, 1], [0, 1, 1])
    with pytest.raises(LengthMismatch):
        rand_index([0], [1])


def test_zeroshot_exact_match():
    candidates = np.eye(3)
    feature = candidates[2:3].copy()
    assert zeroshot_assign(feature, candidates).tolist() == [2]


def test_zeroshot_tie_goes_lowest():
    candidates = np.array([[1.0, 0.0], [0.0, 1.0]])
    feature = np.array([[np.sqrt(0.5), np.sqrt(0.5)]])
    assert zeroshot_assign(feature, candidates).tolist() == [0]


def test_zeroshot_shape_errors():
    with pytest.raises(ShapeMismatch):
        zeroshot_assign(np.ones((2, 3)), np.ones((2, 4)))
    with pytest.raises(ShapeMismatch):
        zeroshot_assign(np.ones((2, 3)), np.ones((0, 3)))


def test_zeroshot_recovers_synth_prototypes(small_bundle):
    from dproxy.ioformats import load_candidates

    pers = small_bundle.perspective("color")
    cand = load_candidates(pers.candidates_path, small_bundle.dim)
    proto_rows = [i for i, w in enumerate(cand.words) if ":proto" in w]
    assigned = zeroshot_assign(small_bundle.visual.data,
                               cand.embeddings.data[proto_rows])
    assert nmi(assigned, pers.labels) == 1.0
