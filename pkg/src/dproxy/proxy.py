"""Learnable per-sample proxies and the two constraint losses.

Each sample owns a base proxy row; the proxy actually used everywhere
is a softmax-weighted mixture of the active candidate embeddings, so it
always stays inside their convex hull.  Only the base rows are free
parameters; the derived rows are recomputed from them on every pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffmath as dm
from .errors import BatchTooSmall, EmptyCandidateSet
from .ioformats import DatasetBundle
from .seeding import substream


@dataclass
class ProxyState:
    base: np.ndarray  # D x d; one independently trainable row per sample
    tau_alpha: float

    @property
    def rows(self) -> int:
        return self.base.shape[0]


def init_base(bundle: DatasetBundle, seed: int, tau_alpha: float = 0.2) -> ProxyState:
    """One base row per sample, all starting from the same anchor vector.

    The anchor is the bundle's placeholder-token embedding when present,
    otherwise a unit vector from the seeded generator.  Rows are copies,
    not views, so each can drift independently under gradients.
    """
    d = bundle.dim
    if bundle.star_embedding is not None:
        anchor = bundle.star_embedding.reshape(-1).astype(np.float64)
    else:
        rng = substream(seed, "proxy-init")
        anchor = rng.standard_normal(d)
        anchor = anchor / np.linalg.norm(anchor)
    base = np.tile(anchor, (bundle.size, 1))
    return ProxyState(base=base, tau_alpha=float(tau_alpha))


def derive_proxies(base: dm.Tensor2, candidates: dm.Tensor2, tau_alpha: float) -> dm.Tensor2:
    """Softmax-weighted candidate mixtures, one proxy row per base row.

    Differentiable with respect to both inputs.  Weights sum to one and
    are nonnegative by construction, so every proxy lies in the convex
    hull of the active candidates.
    """
    if candidates.shape[0] < 1:
        raise EmptyCandidateSet("cannot derive proxies from an empty candidate set")
    logits = dm.matmul(base, candidates, tb=True)
    weights = dm.rowwise_softmax(logits, temperature=tau_alpha)
    return dm.matmul(weights, candidates)


def proxy_weights(base: np.ndarray, candidates: np.ndarray, tau_alpha: float) -> np.ndarray:
    """Plain-array softmax weights (rows x candidates), for diagnostics."""
    logits = base @ candidates.T / tau_alpha
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def derive_proxies_np(base: np.ndarray, candidates: np.ndarray, tau_alpha: float) -> np.ndarray:
    if candidates.shape[0] < 1:
        raise EmptyCandidateSet("cannot derive proxies from an empty candidate set")
    return proxy_weights(base, candidates, tau_alpha) @ candidates


def loss_user(proxies: dm.Tensor2, candidates: dm.Tensor2) -> dm.Tensor2:
    """Mean squared deviation of the proxies from the candidate centroid."""
    n_cand = candidates.shape[0]
    if n_cand < 1:
        raise EmptyCandidateSet("loss_user needs at least one candidate")
    ones = dm.constant(np.ones((1, n_cand)), dtype=candidates.dtype)
    centroid = dm.smul(dm.matmul(ones, candidates), 1.0 / n_cand)  # 1 x d
    diff = dm.sub(proxies, centroid)
    return dm.smul(dm.sum_all(dm.mul(diff, diff)), 1.0 / proxies.shape[0])


def loss_concept(fused: dm.Tensor2, proxies: dm.Tensor2, sigma: float) -> dm.Tensor2:
    """Contrastive pressure pushing each fused row away from the other proxies.

    Per row i: log sum over j != i of exp(f_i . w_j / sigma), averaged
    over the batch.  Increasing any off-diagonal similarity strictly
    increases the loss; sigma sets how hard the largest terms dominate.
    """
    batch = fused.shape[0]
    if batch < 2:
        raise BatchTooSmall(f"concept loss needs a batch of >= 2, got {batch}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    sims = dm.smul(dm.matmul(fused, proxies, tb=True), 1.0 / sigma)  # B x B
    offdiag = ~np.eye(batch, dtype=bool)
    lse = dm.masked_logsumexp_rows(sims, offdiag)
    return dm.smul(dm.sum_all(lse), 1.0 / batch)
