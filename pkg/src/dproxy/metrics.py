"""Partition agreement metrics (NMI, Rand index) and the zero-shot baseline.

Both metrics are symmetric and invariant under relabeling of either
partition.  The Rand index is computed with exact integer pair counts,
so it matches a brute-force enumeration over all unordered pairs
bit for bit.
"""

from __future__ import annotations

import logging

import numpy as np

from .errors import LengthMismatch, ShapeMismatch

log = logging.getLogger("dproxy.metrics")


def _as_partitions(predicted, truth) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(predicted).ravel()
    b = np.asarray(truth).ravel()
    if a.shape[0] != b.shape[0]:
        raise LengthMismatch(f"partitions differ in length: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] < 2:
        raise LengthMismatch("partition metrics need at least 2 samples")
    # metrics are relabel-invariant; compact labels so the contingency
    # table stays small regardless of the caller's label values
    _, a = np.unique(a, return_inverse=True)
    _, b = np.unique(b, return_inverse=True)
    return a, b


def _contingency(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ka, kb = int(a.max()) + 1, int(b.max()) + 1
    table = np.zeros((ka, kb), dtype=np.int64)
    np.add.at(table, (a, b), 1)
    return table


def nmi(predicted, truth, normalization: str = "sqrt") -> float:
    """Normalized mutual information in [0, 1].

    Normalizes by sqrt(H(U) H(V)); pass normalization="arithmetic" for
    the mean-entropy variant.  Two single-cluster partitions agree
    trivially and return 1.0 (logged); mutual information 0 otherwise
    maps to 0.0.
    """
    a, b = _as_partitions(predicted, truth)
    table = _contingency(a, b)
    n = a.shape[0]

    pa = table.sum(axis=1) / n
    pb = table.sum(axis=0) / n
    ha = float(-(pa[pa > 0] * np.log(pa[pa > 0])).sum())
    hb = float(-(pb[pb > 0] * np.log(pb[pb > 0])).sum())

    if ha == 0.0 and hb == 0.0:
        log.info("nmi: both partitions are single-cluster; returning 1.0 by convention")
        return 1.0
    if ha == 0.0 or hb == 0.0:
        return 0.0

    pij = table / n
    outer = np.outer(pa, pb)
    nz = pij > 0
    # summing the sorted contributions keeps nmi(a, b) == nmi(b, a) bitwise:
    # transposing the contingency table only permutes the addends
    mi = float(np.sort((pij[nz] * np.log(pij[nz] / outer[nz])).ravel()).sum())
    if mi <= 0.0:  # float noise on independent partitions
        return 0.0

    if normalization == "sqrt":
        denom = np.sqrt(ha * hb)
    elif normalization == "arithmetic":
        denom = 0.5 * (ha + hb)
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    return float(min(1.0, mi / denom))


def rand_index(predicted, truth) -> float:
    """Fraction of unordered sample pairs on which the partitions agree."""
    a, b = _as_partitions(predicted, truth)
    table = _contingency(a, b)
    n = a.shape[0]

    def pairs2(counts) -> int:
        return int(sum(int(c) * (int(c) - 1) // 2 for c in counts))

    total = n * (n - 1) // 2
    same_both = pairs2(table.ravel())
    same_a = pairs2(table.sum(axis=1))
    same_b = pairs2(table.sum(axis=0))
    disagreements = same_a + same_b - 2 * same_both
    return (total - disagreements) / total


def rand_index_bruteforce(predicted, truth) -> float:
    """O(n^2) pair enumeration; the oracle the fast path is tested against."""
    a, b = _as_partitions(predicted, truth)
    n = a.shape[0]
    agree = 0
    for i in range(n):
        for j in range(i + 1, n):
            if (a[i] == a[j]) == (b[i] == b[j]):
                agree += 1
    return agree / (n * (n - 1) // 2)


def zeroshot_assign(features: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Assign each sample to its highest-cosine candidate (ties: lowest index).

    Both inputs must be unit-norm rows, so the cosine is a plain dot
    product.  This is the nearest-candidate zero-shot baseline over
    precomputed embeddings.
    """
    features = np.asarray(features, dtype=np.float64)
    candidates = np.asarray(candidates, dtype=np.float64)
    if features.ndim != 2 or candidates.ndim != 2:
        raise ShapeMismatch("zeroshot_assign expects 2-D feature and candidate matrices")
    if candidates.shape[0] < 1:
        raise ShapeMismatch("need at least one candidate")
    if features.shape[1] != candidates.shape[1]:
        raise ShapeMismatch(
            f"feature dim {features.shape[1]} != candidate dim {candidates.shape[1]}"
        )
    sims = features @ candidates.T
    return sims.argmax(axis=1).astype(np.int64)
