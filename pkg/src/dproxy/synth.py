"""Synthetic multi-perspective embedding bundles with controllable difficulty.

Each perspective owns a disjoint block of dimensions holding one
orthonormal prototype per class.  A sample's visual vector is the
normalized sum of its class prototypes plus Gaussian noise; its text
vector uses the same construction with every prototype rotated by a
fixed angle toward a spare direction, so the two modalities agree up to
that gap.  Candidate pools are the concept's text-space prototypes plus
distractors, shuffled with a recorded order.  Generation is a pure
function of the spec, so identical specs give byte-identical output
directories.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import SpecInvalid
from .ioformats import (
    CandidateFile,
    EmbeddingMatrix,
    write_candidates,
    write_labels_csv,
    write_manifest,
    write_matrix,
)
from .seeding import substream

HARD_DISTRACTOR_SCALE = 0.3  # perturbation radius around a prototype


@dataclass
class PerspectiveSpec:
    name: str
    classes: int  # ground-truth class count for this perspective
    subspace: int  # dimensions reserved for its prototypes


@dataclass
class SynthSpec:
    samples: int = 600
    dim: int = 32
    perspectives: list[PerspectiveSpec] = field(default_factory=lambda: [
        PerspectiveSpec("color", 3, 8),
        PerspectiveSpec("shape", 3, 8),
    ])
    noise_sigma: float = 0.05
    distractors: int = 9  # per concept; 3M keeps the default pool at 4M words
    visual_text_gap: float = 0.2  # radians between visual and text prototypes
    hard_distractors: bool = False
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def spec_from_dict(raw: dict) -> SynthSpec:
    spec = SynthSpec()
    known = set(spec.to_dict())
    unknown = set(raw) - known
    if unknown:
        raise SpecInvalid(f"unknown synth spec keys: {sorted(unknown)}")
    if "perspectives" in raw:
        spec.perspectives = [PerspectiveSpec(**p) for p in raw["perspectives"]]
    for key, value in raw.items():
        if key != "perspectives":
            setattr(spec, key, value)
    return spec


def validate_spec(spec: SynthSpec) -> None:
    if spec.samples < 2:
        raise SpecInvalid("need at least 2 samples")
    if spec.dim < 2:
        raise SpecInvalid("dimension must be >= 2")
    if not spec.perspectives:
        raise SpecInvalid("need at least one perspective")
    if spec.noise_sigma < 0:
        raise SpecInvalid("noise_sigma must be >= 0")
    if spec.distractors < 0:
        raise SpecInvalid("distractor count must be >= 0")
    total_sub = 0
    total_classes = 0
    for p in spec.perspectives:
        if p.classes < 2:
            raise SpecInvalid(f"perspective {p.name!r}: need at least 2 classes")
        if p.subspace < p.classes:
            raise SpecInvalid(
                f"perspective {p.name!r}: subspace {p.subspace} cannot hold "
                f"{p.classes} orthonormal prototypes"
            )
        if spec.samples < p.classes:
            raise SpecInvalid(f"perspective {p.name!r}: more classes than samples")
        total_sub += p.subspace
        total_classes += p.classes
    if total_sub > spec.dim:
        raise SpecInvalid(f"subspaces need {total_sub} dims, spec has {spec.dim}")
    if spec.visual_text_gap != 0.0 and spec.dim - total_sub < total_classes:
        raise SpecInvalid(
            "rotating prototypes needs at least one spare dimension per prototype: "
            f"{spec.dim - total_sub} spare < {total_classes} prototypes"
        )
    names = [p.name for p in spec.perspectives]
    if len(set(names)) != len(names):
        raise SpecInvalid("perspective names must be distinct")


def _orthonormal_columns(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q * np.sign(np.diag(r))  # canonical signs


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


@dataclass
class SynthOutput:
    manifest_path: Path
    meta_path: Path


def generate(spec: SynthSpec, out_dir: str | Path) -> SynthOutput:
    validate_spec(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    d = spec.dim
    n = spec.samples
    offsets = []
    cursor = 0
    for p in spec.perspectives:
        offsets.append(cursor)
        cursor += p.subspace
    spare_lo = cursor  # rotation directions live past every prototype block

    # visual prototypes: orthonormal within each perspective's block
    visual_protos = []
    for p_i, p in enumerate(spec.perspectives):
        block = _orthonormal_columns(substream(spec.seed, "prototypes", p_i),
                                     p.subspace, p.classes)
        protos = np.zeros((p.classes, d))
        protos[:, offsets[p_i]:offsets[p_i] + p.subspace] = block.T
        visual_protos.append(protos)

    # text prototypes: each rotated by the gap angle toward its own spare direction
    total_classes = sum(p.classes for p in spec.perspectives)
    if spec.visual_text_gap != 0.0:
        spare = _orthonormal_columns(substream(spec.seed, "rotation"),
                                     d - spare_lo, total_classes).T
        cos_g, sin_g = np.cos(spec.visual_text_gap), np.sin(spec.visual_text_gap)
        text_protos = []
        row = 0
        for protos in visual_protos:
            rotated = cos_g * protos
            rotated[:, spare_lo:] += sin_g * spare[row:row + protos.shape[0]]
            text_protos.append(rotated)
            row += protos.shape[0]
    else:
        text_protos = [p.copy() for p in visual_protos]

    # balanced labels, shuffled independently per perspective
    labels = []
    for p_i, p in enumerate(spec.perspectives):
        base = np.arange(n) % p.classes
        perm = substream(spec.seed, "labels", p_i).permutation(n)
        labels.append(base[perm])

    def build_features(protos_list, noise_stream):
        feats = np.zeros((n, d))
        for p_i in range(len(spec.perspectives)):
            feats += protos_list[p_i][labels[p_i]]
        if spec.noise_sigma > 0:
            feats += spec.noise_sigma * noise_stream.standard_normal((n, d))
        return _normalize_rows(feats).astype(np.float32)

    visual = build_features(visual_protos, substream(spec.seed, "noise-visual"))
    text = build_features(text_protos, substream(spec.seed, "noise-text"))

    star = substream(spec.seed, "star").standard_normal(d)
    star = (star / np.linalg.norm(star)).astype(np.float32).reshape(1, -1)

    write_matrix(EmbeddingMatrix(visual), out / "visual.dpx")
    write_matrix(EmbeddingMatrix(text), out / "text.dpx")
    write_matrix(EmbeddingMatrix(star), out / "star.dpx")

    manifest_perspectives = []
    meta: dict = {"spec": spec.to_dict(), "candidate_order": {}}
    for p_i, p in enumerate(spec.perspectives):
        write_labels_csv(labels[p_i], out / f"labels_{p.name}.csv")

        protos = text_protos[p_i]
        words = [f"{p.name}:proto{j}" for j in range(p.classes)]
        rows = [protos]
        if spec.distractors > 0:
            rng_d = substream(spec.seed, "distractors", p_i)
            if spec.hard_distractors:
                # near-prototype impostors: pruning has to actually discriminate
                anchor = protos[np.arange(spec.distractors) % p.classes]
                noise = HARD_DISTRACTOR_SCALE * rng_d.standard_normal((spec.distractors, d))
                rows.append(_normalize_rows(anchor + noise))
                words += [f"{p.name}:hard{j}" for j in range(spec.distractors)]
            else:
                rows.append(_normalize_rows(rng_d.standard_normal((spec.distractors, d))))
                words += [f"{p.name}:rand{j}" for j in range(spec.distractors)]
        emb = np.vstack(rows)

        order = substream(spec.seed, "candidate-order", p_i).permutation(len(words))
        meta["candidate_order"][p.name] = order.tolist()
        cand = CandidateFile(
            concept=p.name,
            words=[words[i] for i in order],
            embeddings=EmbeddingMatrix(emb[order].astype(np.float32)),
        )
        write_candidates(cand, out / f"candidates_{p.name}.json")
        write_matrix(EmbeddingMatrix(protos.astype(np.float32)),
                     out / f"label_embeddings_{p.name}.dpx")

        manifest_perspectives.append({
            "concept": p.name,
            "labels": f"labels_{p.name}.csv",
            "M": p.classes,
            "candidates": f"candidates_{p.name}.json",
        })

    manifest = {
        "name": f"synth-{spec.seed}",
        "visual": "visual.dpx",
        "text": "text.dpx",
        "star": "star.dpx",
        "perspectives": manifest_perspectives,
    }
    manifest_path = out / "manifest.json"
    write_manifest(manifest, manifest_path)
    meta_path = out / "synth_meta.json"
    meta_path.write_text(json.dumps(meta, indent=2) + "\n")
    return SynthOutput(manifest_path=manifest_path, meta_path=meta_path)
