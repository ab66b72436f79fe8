"""Deterministic K-means: k-means++ seeding, Lloyd iterations, and a
single-point reassignment polish.

Used both inside candidate management (single start, only centroids
matter) and for final clustering of fused features (multiple restarts,
lowest inertia wins).  Everything is driven by an explicit seed; a
point equidistant to several centroids goes to the lowest centroid
index, so identical inputs give bitwise-identical assignments.  The
polish step closes the small local-minimum gaps Lloyd leaves on tiny
instances, which the brute-force oracle tests do not tolerate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TooFewPoints

DEFAULT_MAX_ITER = 300
DEFAULT_TOL = 1e-6


@dataclass
class ClusteringResult:
    assignments: np.ndarray  # int64, length n, values in 0..k-1
    centroids: np.ndarray  # k x d, means of the final assignment
    inertia: float
    iterations: int
    inertia_trace: list = field(default_factory=list)


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # Direct differences, not the expanded |x|^2 - 2xc + |c|^2 form: exact
    # ties must break identically across runs.
    return ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]), dtype=points.dtype)
    first = int(rng.integers(n))
    centers[0] = points[first]
    closest = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # all remaining points coincide with chosen centers
            idx = int(rng.integers(n))
        centers[j] = points[idx]
        closest = np.minimum(closest, ((points - centers[j]) ** 2).sum(axis=1))
    return centers


def _hartigan_polish(points, assign, centers):
    """Single-point reassignment descent after Lloyd converges.

    Lloyd alone can stall in a local minimum that one exact move would
    improve; the brute-force oracle equivalence on tiny instances needs
    this.  Each pass applies the single best move, where the move delta
    accounts for both centroid shifts, so every step strictly lowers
    inertia; ties resolve to the lowest flat index.  A cluster is never
    emptied.  Post-Lloyd states need few moves, so passes are cheap.
    """
    n, k = points.shape[0], centers.shape[0]
    counts = np.bincount(assign, minlength=k).astype(np.float64)
    sums = np.zeros_like(centers)
    for j in range(k):
        sums[j] = points[assign == j].sum(axis=0)
    for _ in range(10 * n):  # every move strictly improves; this cannot cycle
        mu = sums / counts[:, None]
        d2 = _sq_dists(points, mu)
        own = d2[np.arange(n), assign]
        out_gain = counts[assign] / np.maximum(counts[assign] - 1.0, 1e-300) * own
        delta = counts[None, :] / (counts[None, :] + 1.0) * d2 - out_gain[:, None]
        delta[np.arange(n), assign] = np.inf  # staying put is not a move
        delta[counts[assign] <= 1] = np.inf  # never empty a cluster
        flat = int(delta.argmin())
        i, b = divmod(flat, k)
        if delta[i, b] >= -1e-12:
            break
        a = assign[i]
        sums[a] -= points[i]
        counts[a] -= 1
        sums[b] += points[i]
        counts[b] += 1
        assign[i] = b
    centers[:] = sums / counts[:, None]


def _lloyd(points, k, rng, max_iter, tol):
    n = points.shape[0]
    centers = _kmeanspp_init(points, k, rng)
    trace = []
    assign = np.zeros(n, dtype=np.int64)
    iterations = 0
    for it in range(1, max_iter + 1):
        iterations = it
        d2 = _sq_dists(points, centers)
        assign = d2.argmin(axis=1)  # argmin takes the lowest index on ties
        # repair empty clusters by seizing the point farthest from its centroid
        counts = np.bincount(assign, minlength=k)
        if np.any(counts == 0):
            dist_to_own = d2[np.arange(n), assign].copy()
            for empty in np.flatnonzero(counts == 0):
                victim = int(dist_to_own.argmax())
                assign[victim] = empty
                dist_to_own[victim] = -1.0  # cannot be seized twice
        trace.append(float(d2[np.arange(n), assign].sum()))
        new_centers = np.empty_like(centers)
        for j in range(k):
            members = points[assign == j]
            new_centers[j] = members.mean(axis=0)
        shift = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        if shift < tol:
            break
    # final assignment so every point sits with its nearest centroid and the
    # centroids are exactly the means of their members
    d2 = _sq_dists(points, centers)
    assign = d2.argmin(axis=1)
    counts = np.bincount(assign, minlength=k)
    if np.any(counts == 0):
        dist_to_own = d2[np.arange(n), assign].copy()
        for empty in np.flatnonzero(counts == 0):
            victim = int(dist_to_own.argmax())
            assign[victim] = empty
            dist_to_own[victim] = -1.0
    for j in range(k):
        centers[j] = points[assign == j].mean(axis=0)
    _hartigan_polish(points, assign, centers)
    inertia = float(((points - centers[assign]) ** 2).sum())
    trace.append(inertia)
    return ClusteringResult(assign, centers, inertia, iterations, trace)


def kmeans(
    points: np.ndarray,
    k: int,
    seed: int,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    restarts: int = 1,
) -> ClusteringResult:
    """Cluster points into k groups, keeping the lowest-inertia restart.

    Distances are squared Euclidean on the raw input vectors; callers
    pass unit-norm or fused features as appropriate.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise TooFewPoints(f"expected an n x d matrix, got shape {points.shape}")
    n = points.shape[0]
    if k < 1:
        raise TooFewPoints(f"k must be >= 1, got {k}")
    if n < k:
        raise TooFewPoints(f"cannot place {k} centers on {n} points")

    best: ClusteringResult | None = None
    for r in range(max(1, restarts)):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**63 - 1), r]))
        result = _lloyd(points, k, rng, max_iter, tol)
        if best is None or result.inertia < best.inertia:
            best = result
    return best
