"""End-to-end training: batching, Adam updates, scheduled constraint
weights, periodic candidate updates, and the 10-run K-means evaluation.

One epoch = shuffle, then per batch: derive the batch's proxies from
the shared base rows, build text tokens, fuse, combine the alignment,
user-constraint, and concept-constraint losses under their schedules,
and take an Adam step.  Candidate management runs between epochs.
Everything is reproducible from the single config seed.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import diffmath as dm
from .candidates import CandidatePool, update_pool
from .errors import ConfigInvalid, NonFiniteLoss
from .fusion import FusionConfig, compose_text_tokens, fuse, init_fusion_params
from .ioformats import DatasetBundle
from .metrics import nmi, rand_index
from .proxy import ProxyState, derive_proxies, derive_proxies_np, init_base, loss_concept, loss_user
from .clustering import kmeans
from .seeding import stream_int, substream

log = logging.getLogger("dproxy.trainer")

EVAL_RUNS = 10  # fixed evaluation protocol: k-means repeated 10 times

FUSION_MODES = ("gated", "concat")
MODALITIES = ("both", "text_only", "visual_only")

# config fields that are internal knobs, not CLI flags
NON_CLI_FIELDS = {"loss_weights"}


@dataclass
class TrainConfig:
    epochs: int = 200
    update_interval: int = 100
    batch_size: int = 64
    lr: float = 3e-3
    weight_decay: float = 0.0
    tau_alpha: float = 0.2
    sigma: float = 0.2
    heads: int | None = None  # None: 4, or 2 when dim < 8
    layers: int = 2
    seed: int = 0
    no_dynamic: bool = False
    no_uconstraints: bool = False
    no_cconstraints: bool = False
    fusion_mode: str = "gated"
    modality: str = "both"
    restarts: int = 50
    # test hook: force (align, user, concept) weights instead of the schedules
    loss_weights: tuple | None = None

    def resolved_heads(self, dim: int) -> int:
        return self.heads if self.heads is not None else FusionConfig.default_heads(dim)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["loss_weights"] is not None:
            d["loss_weights"] = list(d["loss_weights"])
        return d


def config_hash(cfg: TrainConfig, extra: dict | None = None) -> str:
    payload = {"config": cfg.to_dict(), **(extra or {})}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def schedule_alpha(t: int, total_epochs: int) -> float:
    """Linear ramp 0.1 -> 0.5 over the run, clamped so it never exceeds 0.5."""
    return min(0.5, 0.1 + 0.4 * t / total_epochs)


def schedule_beta(t: int, total_epochs: int) -> float:
    """Half-cosine ramp 0.0 -> 0.2 over the full run."""
    return 0.1 * (1.0 - math.cos(math.pi * t / total_epochs))


def validate_config(cfg: TrainConfig, pool: CandidatePool, n_classes: int, n_samples: int) -> None:
    if cfg.epochs < 1:
        raise ConfigInvalid(f"epochs must be >= 1, got {cfg.epochs}")
    if cfg.batch_size < 2:
        raise ConfigInvalid(f"batch size must be >= 2, got {cfg.batch_size}")
    if n_samples < 2:
        raise ConfigInvalid("training needs at least 2 samples")
    if cfg.lr <= 0:
        raise ConfigInvalid(f"lr must be positive, got {cfg.lr}")
    if cfg.tau_alpha <= 0 or cfg.sigma <= 0:
        raise ConfigInvalid("tau_alpha and sigma must be positive")
    if cfg.fusion_mode not in FUSION_MODES:
        raise ConfigInvalid(f"fusion_mode must be one of {FUSION_MODES}")
    if cfg.modality not in MODALITIES:
        raise ConfigInvalid(f"modality must be one of {MODALITIES}")
    if cfg.restarts < 1:
        raise ConfigInvalid("restarts must be >= 1")
    if not cfg.no_dynamic:
        if cfg.update_interval < 1 or cfg.epochs % cfg.update_interval != 0:
            raise ConfigInvalid(
                f"E not divisible by R: epochs={cfg.epochs}, update_interval={cfg.update_interval}"
            )
        halvings = cfg.epochs // cfg.update_interval
        expected = (2**halvings) * n_classes
        if pool.active_count != expected:
            raise ConfigInvalid(
                f"dynamic management expects an initial pool of 2^(E/R)*M = {expected} "
                f"candidates, got {pool.active_count}"
            )


@dataclass
class RunReport:
    config: dict
    config_hash: str
    bundle_name: str
    concept: str
    epochs: list = field(default_factory=list)  # per-epoch loss/schedule records
    candidate_history: list = field(default_factory=list)
    events: list = field(default_factory=list)
    final_active_words: list = field(default_factory=list)
    wall_clock_seconds: float = 0.0
    final_metrics: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    store: dm.ParamStore
    pool: CandidatePool
    proxy_state: ProxyState
    fusion_cfg: FusionConfig
    report: RunReport
    features: dict  # fused / text_stream / visual_stream / lam / proxies arrays


class Adam:
    """Adam with first-moment decay 0.9; optional coupled L2 weight decay."""

    def __init__(self, store: dm.ParamStore, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {name: np.zeros_like(p.data) for name, p in store.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in store.items()}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.store.items():
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled index batches; a trailing singleton folds into its neighbor
    so the concept loss (which needs j != i) stays defined."""
    order = rng.permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and batches[-1].size < 2:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


_SQRT_HALF = 1.0 / math.sqrt(2.0)


def _lift(x: dm.Tensor2) -> dm.Tensor2:
    # duplicate columns so d-dim vectors compare against 2d concat features
    return dm.smul(dm.concat_cols(x, x), _SQRT_HALF)


@dataclass
class BatchForward:
    fused: dm.Tensor2
    t_stream: dm.Tensor2
    v_stream: dm.Tensor2
    lam: np.ndarray
    align_target: dm.Tensor2
    proxies: dm.Tensor2
    proxies_lifted: dm.Tensor2  # matches fused dims in both fusion modes


def forward_batch(
    store: dm.ParamStore,
    fcfg: FusionConfig,
    visual_b: np.ndarray,
    text_b: np.ndarray,
    idx: np.ndarray,
    candidates: np.ndarray,
    cfg: TrainConfig,
    dtype=np.float32,
) -> BatchForward:
    base_b = dm.take_rows(store["proxies.base"], idx)
    cands = dm.constant(candidates, dtype=dtype)
    proxies = derive_proxies(base_b, cands, cfg.tau_alpha)
    v_b = dm.constant(visual_b, dtype=dtype)
    t_b = dm.constant(text_b, dtype=dtype)
    tokens = compose_text_tokens(t_b, proxies, store["w_p"])

    if cfg.fusion_mode == "gated":
        out = fuse(v_b, tokens, store, fcfg)
        return BatchForward(
            fused=out.fused,
            t_stream=out.t_stream,
            v_stream=out.v_stream,
            lam=out.lam.data.copy(),
            align_target=v_b,
            proxies=proxies,
            proxies_lifted=proxies,
        )
    # fixed-fusion ablation: no attention stack, features are the plain
    # concatenation of the two streams; d-dim vectors are lifted to 2d
    # by duplication wherever they meet the concat features
    fused = dm.smul(dm.concat_cols(tokens, v_b), _SQRT_HALF)
    return BatchForward(
        fused=fused,
        t_stream=tokens,
        v_stream=v_b,
        lam=np.full((visual_b.shape[0], 1), 0.5, dtype=dtype),
        align_target=_lift(v_b),
        proxies=proxies,
        proxies_lifted=_lift(proxies),
    )


def batch_loss(
    store: dm.ParamStore,
    fcfg: FusionConfig,
    visual_b: np.ndarray,
    text_b: np.ndarray,
    idx: np.ndarray,
    candidates: np.ndarray,
    cfg: TrainConfig,
    weights: tuple[float, float, float],
    dtype=np.float32,
) -> tuple[dm.Tensor2, dict, BatchForward]:
    """Total loss for one batch plus the unweighted component values."""
    fwd = forward_batch(store, fcfg, visual_b, text_b, idx, candidates, cfg, dtype)
    w_align, w_user, w_concept = weights

    cos = dm.cosine_rows(fwd.fused, fwd.align_target)
    l_align = dm.sadd(dm.smul(dm.mean_all(cos), -1.0), 1.0)
    l_user = loss_user(fwd.proxies, dm.constant(candidates, dtype=dtype))
    l_concept = loss_concept(fwd.fused, fwd.proxies_lifted, cfg.sigma)

    total = dm.smul(l_align, w_align)
    total = dm.add(total, dm.smul(l_user, w_user))
    total = dm.add(total, dm.smul(l_concept, w_concept))
    components = {
        "align": l_align.item(),
        "user": l_user.item(),
        "concept": l_concept.item(),
        "total": total.item(),
    }
    return total, components, fwd


def train(
    bundle: DatasetBundle,
    concept: str,
    pool: CandidatePool,
    cfg: TrainConfig,
) -> TrainResult:
    perspective = bundle.perspective(concept)
    validate_config(cfg, pool, perspective.n_classes, bundle.size)

    start = time.perf_counter()
    dtype = np.float32
    d = bundle.dim
    fcfg = FusionConfig(dim=d, heads=cfg.resolved_heads(d), layers=cfg.layers)

    store = dm.ParamStore()
    init_fusion_params(fcfg, store, substream(cfg.seed, "fusion-init"), dtype=dtype)
    proxy_state = init_base(bundle, cfg.seed, cfg.tau_alpha)
    store.add("proxies.base", proxy_state.base, dtype=dtype)

    optimizer = Adam(store, lr=cfg.lr, beta1=0.9, weight_decay=cfg.weight_decay)
    batch_rng = substream(cfg.seed, "batching")

    visual = bundle.visual.data.astype(dtype)
    text = bundle.text.data.astype(dtype)
    report = RunReport(
        config=cfg.to_dict(),
        config_hash=config_hash(cfg, {"bundle": bundle.name, "concept": concept}),
        bundle_name=bundle.name,
        concept=concept,
    )

    pool = CandidatePool(
        words=pool.words,
        embeddings=pool.embeddings,
        active=pool.active.copy(),
        history=list(pool.history),
        events=list(pool.events),
    )

    for t in range(1, cfg.epochs + 1):
        alpha = schedule_alpha(t, cfg.epochs)
        beta = schedule_beta(t, cfg.epochs)
        weights = (
            (1.0, 0.0 if cfg.no_uconstraints else alpha, 0.0 if cfg.no_cconstraints else beta)
            if cfg.loss_weights is None
            else tuple(cfg.loss_weights)
        )
        active_emb = pool.active_embeddings().astype(dtype)

        sums = {"align": 0.0, "user": 0.0, "concept": 0.0, "total": 0.0}
        for b_i, idx in enumerate(epoch_batches(bundle.size, cfg.batch_size, batch_rng)):
            total, comps, _ = batch_loss(
                store, fcfg, visual[idx], text[idx], idx, active_emb, cfg, weights, dtype
            )
            if not math.isfinite(comps["total"]):
                raise NonFiniteLoss(
                    f"non-finite loss at epoch {t}, batch {b_i}", epoch=t, batch=b_i
                )
            store.zero_grad()
            dm.backward(total)
            optimizer.step()
            for key in sums:
                sums[key] += comps[key] * idx.size

        report.epochs.append({
            "epoch": t,
            "alpha": alpha,
            "beta": beta,
            "loss_align": sums["align"] / bundle.size,
            "loss_user": sums["user"] / bundle.size,
            "loss_concept": sums["concept"] / bundle.size,
            "loss_total": sums["total"] / bundle.size,
        })

        if not cfg.no_dynamic and t % cfg.update_interval == 0:
            derived = derive_proxies_np(
                store["proxies.base"].data.astype(np.float64),
                pool.active_embeddings().astype(np.float64),
                cfg.tau_alpha,
            )
            pool = update_pool(
                pool, derived, perspective.n_classes, t,
                seed=stream_int(cfg.seed, "pool-kmeans", t),
            )

    features = dataset_features(store, fcfg, visual, text, pool, cfg, dtype)
    proxy_state = ProxyState(
        base=store["proxies.base"].data.astype(np.float64).copy(),
        tau_alpha=cfg.tau_alpha,
    )

    report.candidate_history = list(pool.history)
    report.events = list(pool.events)
    report.final_active_words = pool.active_words()
    report.wall_clock_seconds = time.perf_counter() - start
    return TrainResult(
        store=store,
        pool=pool,
        proxy_state=proxy_state,
        fusion_cfg=fcfg,
        report=report,
        features=features,
    )


def dataset_features(
    store: dm.ParamStore,
    fcfg: FusionConfig,
    visual: np.ndarray,
    text: np.ndarray,
    pool: CandidatePool,
    cfg: TrainConfig,
    dtype=np.float32,
) -> dict:
    """Full forward pass in fixed-order evaluation batches; no gradients kept."""
    n = visual.shape[0]
    active_emb = pool.active_embeddings().astype(dtype)
    chunks: dict[str, list] = {"fused": [], "text_stream": [], "visual_stream": [], "lam": []}
    for lo in range(0, n, cfg.batch_size):
        idx = np.arange(lo, min(lo + cfg.batch_size, n))
        fwd = forward_batch(store, fcfg, visual[idx], text[idx], idx, active_emb, cfg, dtype)
        chunks["fused"].append(fwd.fused.data)
        chunks["text_stream"].append(fwd.t_stream.data)
        chunks["visual_stream"].append(fwd.v_stream.data)
        chunks["lam"].append(np.asarray(fwd.lam))
    features = {key: np.concatenate(parts, axis=0) for key, parts in chunks.items()}
    features["proxies"] = derive_proxies_np(
        store["proxies.base"].data.astype(np.float64),
        pool.active_embeddings().astype(np.float64),
        cfg.tau_alpha,
    ).astype(dtype)
    return features


def features_for_modality(features: dict, modality: str) -> np.ndarray:
    if modality == "both":
        return features["fused"]
    if modality == "text_only":
        return features["text_stream"]
    if modality == "visual_only":
        return features["visual_stream"]
    raise ConfigInvalid(f"modality must be one of {MODALITIES}")


@dataclass
class EvalReport:
    perspective: str
    n_runs: int
    nmi_mean: float
    nmi_std: float
    ri_mean: float
    ri_std: float
    nmi_runs: list = field(default_factory=list)
    ri_runs: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(
    fused_features: np.ndarray,
    bundle: DatasetBundle,
    perspective: str,
    cfg: TrainConfig,
) -> EvalReport:
    """Protocol metric: k-means repeated EVAL_RUNS times, mean and std reported."""
    pers = bundle.perspective(perspective)
    points = np.asarray(fused_features, dtype=np.float64)
    nmi_runs, ri_runs = [], []
    for run in range(EVAL_RUNS):
        result = kmeans(
            points, pers.n_classes,
            seed=stream_int(cfg.seed, "eval-kmeans", run),
            restarts=cfg.restarts,
        )
        nmi_runs.append(nmi(result.assignments, pers.labels))
        ri_runs.append(rand_index(result.assignments, pers.labels))
    return EvalReport(
        perspective=perspective,
        n_runs=EVAL_RUNS,
        nmi_mean=float(np.mean(nmi_runs)),
        nmi_std=float(np.std(nmi_runs)),
        ri_mean=float(np.mean(ri_runs)),
        ri_std=float(np.std(ri_runs)),
        nmi_runs=nmi_runs,
        ri_runs=ri_runs,
    )
