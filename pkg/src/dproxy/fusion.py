"""Gated cross-modal fusion: bidirectional cross-attention over the batch,
sigmoid-gated residuals, LayerNorm+FFN refinement, and adaptive mixing.

Attention runs across samples within a mini-batch: one modality's rows
are the queries, the other's are keys and values.  The text stream
enters as a learned projection of [text ; proxy], initialized to their
elementwise mean so gradients reach the proxies from step one.  The
final representation is a per-sample convex mix of the two streams with
a learnable temperature on the agreement score.

Two scale conventions keep the downstream temperatures meaningful:
refined streams are normalized to unit scale (LayerNorm divided by
sqrt(d)), because the mixing temperature (0.1 at init) and the
contrastive hardness temperatures assume inner products of unit-norm
vectors, and raw LayerNorm rows of norm sqrt(d) saturate the mixing
sigmoid and let the contrastive term dwarf the bounded alignment term.
Attention-output and FFN-output projections start at zero so the
streams begin as the identity path; starting them at Xavier scale lets
the LayerNorm rescaling bury each sample's embedding-space geometry
under random features, which destroys the candidate-matching signal
the proxies learn from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import diffmath as dm
from .diffmath import ParamStore, Tensor2
from .errors import ShapeMismatch

LN_EPS = 1e-5
FFN_MULT = 4
TAU_INIT = 0.1
GATE_BIAS_INIT = -1.0


@dataclass
class FusionConfig:
    dim: int
    heads: int = 4
    layers: int = 2
    ffn_mult: int = FFN_MULT
    ln_eps: float = LN_EPS
    tau_init: float = TAU_INIT
    gate_bias_init: float = GATE_BIAS_INIT

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ShapeMismatch(f"dim {self.dim} not divisible by {self.heads} heads")

    @staticmethod
    def default_heads(dim: int) -> int:
        return 2 if dim < 8 else 4


@dataclass
class FusionOutput:
    v_stream: Tensor2  # batch x d, final visual stream
    t_stream: Tensor2  # batch x d, final text stream
    fused: Tensor2  # batch x d
    lam: Tensor2  # batch x 1, per-sample text weight in (0, 1)
    attention_maps: list = field(default_factory=list)  # per layer: {"v": B x B, "t": B x B}
    pre_dfe: list = field(default_factory=list)  # per layer, when collected


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_fusion_params(
    cfg: FusionConfig, store: ParamStore, rng: np.random.Generator, dtype=np.float32
) -> None:
    """Register the whole fusion stack in the store, in stable order."""
    d = cfg.dim
    eye = np.eye(d)
    # averaging start: output equals the mean of text and proxy
    store.add("w_p", 0.5 * np.vstack([eye, eye]), dtype=dtype)
    store.add("log_tau", np.array([[math.log(cfg.tau_init)]]), dtype=dtype)
    for layer in range(cfg.layers):
        for stream in ("v", "t"):
            p = f"l{layer}.{stream}"
            for name in ("w_q", "w_k", "w_v"):
                store.add(f"{p}.{name}", _xavier(rng, d, d), dtype=dtype)
            # zero-init output projections: each layer starts as the identity
            # path and the attention/FFN branches fade in as training needs them
            store.add(f"{p}.w_o", np.zeros((d, d)), dtype=dtype)
            store.add(f"{p}.w_g", _xavier(rng, 2 * d, d), dtype=dtype)
            store.add(f"{p}.b_g", np.full((1, d), cfg.gate_bias_init), dtype=dtype)
            store.add(f"{p}.ffn_w1", _xavier(rng, d, cfg.ffn_mult * d), dtype=dtype)
            store.add(f"{p}.ffn_b1", np.zeros((1, cfg.ffn_mult * d)), dtype=dtype)
            store.add(f"{p}.ffn_w2", np.zeros((cfg.ffn_mult * d, d)), dtype=dtype)
            store.add(f"{p}.ffn_b2", np.zeros((1, d)), dtype=dtype)


def compose_text_tokens(text: Tensor2, proxies: Tensor2, w_p: Tensor2) -> Tensor2:
    """Project [text ; proxy] back to d dims; the text-stream input."""
    if text.shape != proxies.shape:
        raise ShapeMismatch(f"text {text.shape} vs proxies {proxies.shape}")
    if w_p.shape != (2 * text.shape[1], text.shape[1]):
        raise ShapeMismatch(
            f"projection must be {2 * text.shape[1]} x {text.shape[1]}, got {w_p.shape}"
        )
    return dm.matmul(dm.concat_cols(text, proxies), w_p)


def _multihead(query_src: Tensor2, kv_src: Tensor2, store: ParamStore, prefix: str,
               cfg: FusionConfig, maps: dict, key: str) -> Tensor2:
    d = cfg.dim
    dh = d // cfg.heads
    q = dm.matmul(query_src, store[f"{prefix}.w_q"])
    k = dm.matmul(kv_src, store[f"{prefix}.w_k"])
    v = dm.matmul(kv_src, store[f"{prefix}.w_v"])
    head_outs = []
    head_maps = []
    for h in range(cfg.heads):
        lo, hi = h * dh, (h + 1) * dh
        qh = dm.slice_cols(q, lo, hi)
        kh = dm.slice_cols(k, lo, hi)
        vh = dm.slice_cols(v, lo, hi)
        scores = dm.matmul(qh, kh, tb=True)
        attn = dm.rowwise_softmax(scores, temperature=math.sqrt(dh))
        head_maps.append(attn.data.copy())
        head_outs.append(dm.matmul(attn, vh))
    merged = head_outs[0]
    for extra in head_outs[1:]:
        merged = dm.concat_cols(merged, extra)
    maps[key] = np.mean(head_maps, axis=0)  # head-averaged, diagnostic only
    return dm.matmul(merged, store[f"{prefix}.w_o"])


def _ffn(x: Tensor2, store: ParamStore, prefix: str) -> Tensor2:
    h = dm.relu(dm.add(dm.matmul(x, store[f"{prefix}.ffn_w1"]), store[f"{prefix}.ffn_b1"]))
    return dm.add(dm.matmul(h, store[f"{prefix}.ffn_w2"]), store[f"{prefix}.ffn_b2"])


def fuse(
    visual: Tensor2,
    text_tokens: Tensor2,
    store: ParamStore,
    cfg: FusionConfig,
    collect_pre_dfe: bool = False,
) -> FusionOutput:
    """Run the full stack; every step is differentiable end to end."""
    if visual.shape != text_tokens.shape:
        raise ShapeMismatch(f"visual {visual.shape} vs text {text_tokens.shape}")
    if visual.shape[1] != cfg.dim:
        raise ShapeMismatch(f"features are {visual.shape[1]}-d, config says {cfg.dim}")

    v_cur, t_cur = visual, text_tokens
    attention_maps = []
    pre_dfe = []
    stream_scale = 1.0 / math.sqrt(cfg.dim)  # unit-scale rows out of each DFE
    for layer in range(cfg.layers):
        maps: dict = {}
        v_attn = _multihead(v_cur, t_cur, store, f"l{layer}.v", cfg, maps, "v")
        t_attn = _multihead(t_cur, v_cur, store, f"l{layer}.t", cfg, maps, "t")
        attention_maps.append(maps)

        v_gate = dm.sigmoid(dm.add(
            dm.matmul(dm.concat_cols(v_cur, v_attn), store[f"l{layer}.v.w_g"]),
            store[f"l{layer}.v.b_g"]))
        t_gate = dm.sigmoid(dm.add(
            dm.matmul(dm.concat_cols(t_cur, t_attn), store[f"l{layer}.t.w_g"]),
            store[f"l{layer}.t.b_g"]))
        v_cur = dm.add(v_cur, dm.mul(v_gate, v_attn))
        t_cur = dm.add(t_cur, dm.mul(t_gate, t_attn))
        if collect_pre_dfe:
            pre_dfe.append({"v": v_cur.data.copy(), "t": t_cur.data.copy()})

        v_cur = dm.smul(
            dm.layernorm(dm.add(v_cur, _ffn(v_cur, store, f"l{layer}.v")), cfg.ln_eps),
            stream_scale)
        t_cur = dm.smul(
            dm.layernorm(dm.add(t_cur, _ffn(t_cur, store, f"l{layer}.t")), cfg.ln_eps),
            stream_scale)

    inv_tau = dm.exp(dm.smul(store["log_tau"], -1.0))  # 1/tau, tau > 0 by construction
    agreement = dm.mul(dm.rowwise_dot(t_cur, v_cur), inv_tau)
    lam = dm.sigmoid(agreement)
    fused = dm.scalar_mix(lam, t_cur, v_cur)
    return FusionOutput(
        v_stream=v_cur,
        t_stream=t_cur,
        fused=fused,
        lam=lam,
        attention_maps=attention_maps,
        pre_dfe=pre_dfe,
    )


@dataclass
class GradientStructureReport:
    cosine: float  # flattened-matrix cosine between analytic grad and dominant term
    grad_norm: float
    dominant_norm: float
    degenerate_attention: bool  # batch of near-identical samples: uniform attention


def gradient_structure_report(
    visual: np.ndarray, text_tokens: np.ndarray, store: ParamStore, cfg: FusionConfig
) -> GradientStructureReport:
    """How the alignment gradient on the visual query projection decomposes.

    Compares the analytic d(align)/d(w_q) of layer 0's visual-query
    attention against the rank-one structure sum_i v_i v_i^T t_i t_i^T
    scaled by each sample's alignment sensitivity.  Informational: the
    report carries the cosine, no pass/fail threshold.
    """
    if cfg.layers != 1:
        raise ShapeMismatch("the structure report is defined for a single-layer stack")
    batch = visual.shape[0]
    if batch < 2:
        raise ShapeMismatch("need a batch of >= 2")

    v_in = dm.constant(visual, dtype=np.float64)
    t_in = dm.constant(text_tokens, dtype=np.float64)
    store.zero_grad()
    out = fuse(v_in, t_in, store, cfg)
    cos = dm.cosine_rows(out.fused, v_in)
    loss = dm.sadd(dm.smul(dm.mean_all(cos), -1.0), 1.0)
    dm.backward(loss)

    w_q = store["l0.v.w_q"]
    grad = w_q.grad.copy() if w_q.grad is not None else np.zeros_like(w_q.data)

    f = out.fused.data
    f_norms = np.linalg.norm(f, axis=1)
    v_norms = np.linalg.norm(visual, axis=1)
    # d(align)/d(cos_i) = -1/B for the mean of (1 - cos)
    lam_factor = (-1.0 / batch) / (f_norms * v_norms)
    dominant = np.zeros((visual.shape[1], visual.shape[1]))
    for i in range(batch):
        v_i = visual[i]
        t_i = text_tokens[i]
        dominant += lam_factor[i] * np.outer(v_i, v_i) @ np.outer(t_i, t_i)

    gn = float(np.linalg.norm(grad))
    dn = float(np.linalg.norm(dominant))
    if gn == 0.0 or dn == 0.0:
        cosine = 0.0
    else:
        cosine = float((grad.ravel() @ dominant.ravel()) / (gn * dn))

    attn = out.attention_maps[0]["v"]
    degenerate = bool(np.abs(attn - 1.0 / batch).max() < 1e-6)
    return GradientStructureReport(
        cosine=cosine, grad_norm=gn, dominant_norm=dn, degenerate_attention=degenerate
    )
