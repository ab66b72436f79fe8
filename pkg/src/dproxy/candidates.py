"""Dynamic candidate management: score against proxy centroids, keep the top half.

The pool starts with 2^(E/R) * M words per concept and is halved at
every update until exactly M survive.  Deactivated words never return;
the history records enough to reconstruct the active mask at any past
epoch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .clustering import kmeans
from .errors import ZeroNormCentroid
from .ioformats import CandidateFile

log = logging.getLogger("dproxy.candidates")


@dataclass
class CandidatePool:
    words: list[str]
    embeddings: np.ndarray  # |words| x d, unit rows, fixed for the whole run
    active: np.ndarray  # bool mask over words
    history: list = field(default_factory=list)  # (epoch, retained word list)
    events: list = field(default_factory=list)  # skipped updates etc.

    @property
    def active_count(self) -> int:
        return int(self.active.sum())

    def active_indices(self) -> np.ndarray:
        return np.flatnonzero(self.active)

    def active_words(self) -> list[str]:
        return [self.words[i] for i in self.active_indices()]

    def active_embeddings(self) -> np.ndarray:
        return self.embeddings[self.active]

    @classmethod
    def from_candidate_file(cls, cand: CandidateFile) -> "CandidatePool":
        return cls(
            words=list(cand.words),
            embeddings=cand.embeddings.data.copy(),
            active=np.ones(len(cand.words), dtype=bool),
        )


def score_candidates(candidates: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Mean cosine of each candidate against every centroid; order-free in centroids."""
    candidates = np.asarray(candidates, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64)
    c_norms = np.linalg.norm(centroids, axis=1)
    if np.any(c_norms == 0):
        raise ZeroNormCentroid("a centroid has zero norm; cosine scoring is undefined")
    cand_norms = np.linalg.norm(candidates, axis=1)
    cand_norms[cand_norms == 0] = 1.0  # defensive; candidate rows are unit by format
    cos = (candidates / cand_norms[:, None]) @ (centroids / c_norms[:, None]).T
    return cos.mean(axis=1)


def _retain_count(active: int, floor: int) -> int:
    keep = active // 2
    if keep < floor:
        keep = (active + 1) // 2  # odd pools keep the larger half first
        if keep < floor:
            keep = floor
    return keep


def update_pool(
    pool: CandidatePool,
    proxies: np.ndarray,
    n_classes: int,
    epoch: int,
    seed: int,
) -> CandidatePool:
    """One refinement step: cluster proxies, score actives, halve the pool.

    No-ops (with a logged event) when the pool already sits at the
    class-count floor or when the proxies have collapsed to fewer than
    n_classes distinct rows, which K-means cannot split.
    """
    active_idx = pool.active_indices()
    new_pool = CandidatePool(
        words=pool.words,
        embeddings=pool.embeddings,
        active=pool.active.copy(),
        history=list(pool.history),
        events=list(pool.events),
    )

    if active_idx.size <= n_classes:
        log.info("epoch %d: pool exhausted at %d active (floor %d); skipping update",
                 epoch, active_idx.size, n_classes)
        new_pool.events.append({"epoch": epoch, "event": "PoolExhausted"})
        return new_pool

    proxies = np.asarray(proxies, dtype=np.float64)
    if np.unique(proxies, axis=0).shape[0] < n_classes:
        log.warning("epoch %d: proxies collapsed below %d distinct rows; skipping update",
                    epoch, n_classes)
        new_pool.events.append({"epoch": epoch, "event": "DegenerateProxies"})
        return new_pool

    result = kmeans(proxies, n_classes, seed=seed, restarts=1)
    scores = score_candidates(pool.embeddings[active_idx], result.centroids)

    keep = _retain_count(active_idx.size, n_classes)
    # stable sort: ties resolve to the earliest original word
    order = np.argsort(-scores, kind="stable")
    kept_local = np.sort(order[:keep])  # back to original word order
    kept_global = active_idx[kept_local]

    mask = np.zeros_like(pool.active)
    mask[kept_global] = True
    new_pool.active = mask
    new_pool.history.append((epoch, [pool.words[i] for i in kept_global]))
    log.info("epoch %d: candidates %d -> %d", epoch, active_idx.size, keep)
    return new_pool
