"""On-disk formats: DPROXYV1 binary matrices, labels CSV, dataset manifests.

A DPROXYV1 file is the 8-byte ASCII magic ``DPROXYV1``, a uint32
little-endian row count, a uint32 little-endian column count, then
rows*cols IEEE-754 float32 little-endian values in row-major order.

Embedding files additionally promise unit-norm rows: rows drifting more
than 1e-4 from norm 1 are renormalized on load (float32 rounding from
exporters must not block runs), exact-zero rows are rejected.  Raw
matrices (checkpoints, fused features) use the same container via
``read_raw`` / ``write_raw`` without the norm contract.

All paths inside manifests and candidate files resolve relative to the
file that mentions them.
"""

from __future__ import annotations

import csv
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    DimensionMismatch,
    EmptyClass,
    IoError,
    LabelOutOfRange,
    NonFiniteValue,
    SchemaError,
    TruncatedFile,
    ZeroNormRow,
)

log = logging.getLogger("dproxy.ioformats")

MAGIC = b"DPROXYV1"
HEADER_LEN = len(MAGIC) + 8  # magic + two uint32
UNIT_NORM_TOL = 1e-4


@dataclass
class EmbeddingMatrix:
    """Unit-norm row-major float32 matrix loaded from a DPROXYV1 file."""

    data: np.ndarray  # rows x dim, float32, unit-norm rows
    renormalized: int = 0  # rows whose norm was off by more than UNIT_NORM_TOL

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass
class Perspective:
    concept: str
    labels: np.ndarray  # int64, length D, values in 0..M-1
    n_classes: int
    candidates_path: Path | None = None


@dataclass
class DatasetBundle:
    name: str
    visual: EmbeddingMatrix
    text: EmbeddingMatrix
    perspectives: list[Perspective]
    star_embedding: np.ndarray | None = None  # 1 x d when present

    @property
    def size(self) -> int:
        return self.visual.rows

    @property
    def dim(self) -> int:
        return self.visual.dim

    def perspective(self, concept: str) -> Perspective:
        for p in self.perspectives:
            if p.concept == concept:
                return p
        from .errors import PerspectiveUnknown

        known = ", ".join(p.concept for p in self.perspectives)
        raise PerspectiveUnknown(f"no perspective {concept!r} (have: {known})")


@dataclass
class CandidateFile:
    concept: str
    words: list[str]
    embeddings: EmbeddingMatrix


# ---------------------------------------------------------------------------
# binary matrices


def read_raw(path: str | Path) -> np.ndarray:
    """Read a DPROXYV1 matrix without the embedding norm contract.

    Used for checkpoints and feature dumps where rows are not unit
    vectors.  Values must still be finite.
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    if len(blob) < len(MAGIC) or blob[: len(MAGIC)] != MAGIC:
        raise BadMagic(f"{path}: missing DPROXYV1 magic")
    if len(blob) < HEADER_LEN:
        raise TruncatedFile(f"{path}: header cut short ({len(blob)} bytes)")
    rows, cols = struct.unpack("<II", blob[len(MAGIC) : HEADER_LEN])
    expected = HEADER_LEN + 4 * rows * cols
    if len(blob) != expected:
        raise TruncatedFile(
            f"{path}: header declares {rows}x{cols} "
            f"({expected} bytes), file has {len(blob)}"
        )
    # frombuffer views are read-only; copy so loaders can renormalize in place
    data = np.frombuffer(blob, dtype="<f4", offset=HEADER_LEN).reshape(rows, cols).copy()
    if not np.all(np.isfinite(data)):
        raise NonFiniteValue(f"{path}: payload contains NaN or Inf")
    return data


def write_raw(array: np.ndarray, path: str | Path) -> None:
    array = np.asarray(array, dtype=np.float32)
    if array.ndim != 2:
        raise SchemaError(f"expected a 2-D matrix, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise NonFiniteValue("refusing to write NaN or Inf")
    path = Path(path)
    try:
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<II", array.shape[0], array.shape[1]))
            f.write(array.astype("<f4").tobytes(order="C"))
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def load_matrix(path: str | Path) -> EmbeddingMatrix:
    """Load an embedding matrix, renormalizing rows that drifted off unit norm."""
    data = read_raw(path)
    rows, dim = data.shape
    if rows < 1:
        raise SchemaError(f"{path}: embedding matrix needs at least one row")
    if dim < 2:
        raise SchemaError(f"{path}: embedding dimension must be >= 2, got {dim}")
    norms = np.linalg.norm(data.astype(np.float64), axis=1)
    if np.any(norms == 0.0):
        bad = int(np.argmax(norms == 0.0))
        raise ZeroNormRow(f"{path}: row {bad} is all zeros and cannot be normalized")
    off = np.abs(norms - 1.0) > UNIT_NORM_TOL
    n_off = int(off.sum())
    if n_off:
        log.warning("%s: renormalized %d/%d rows beyond %.0e of unit norm",
                    path, n_off, rows, UNIT_NORM_TOL)
        data[off] = (data[off].astype(np.float64) / norms[off, None]).astype(np.float32)
    return EmbeddingMatrix(data=data, renormalized=n_off)


def write_matrix(matrix: EmbeddingMatrix, path: str | Path) -> None:
    """Write an embedding matrix; load_matrix(write_matrix(m)) is bit-exact."""
    norms = np.linalg.norm(matrix.data.astype(np.float64), axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
        raise SchemaError("matrix rows are not unit norm; normalize before writing")
    write_raw(matrix.data, path)


# ---------------------------------------------------------------------------
# labels CSV


def read_labels_csv(path: str | Path, expected_rows: int) -> np.ndarray:
    path = Path(path)
    try:
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["id", "label"]:
                raise SchemaError(f"{path}: labels CSV must start with header 'id,label'")
            pairs = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 2:
                    raise SchemaError(f"{path}:{lineno}: expected 'id,label', got {row!r}")
                try:
                    pairs.append((int(row[0]), int(row[1])))
                except ValueError as e:
                    raise SchemaError(f"{path}:{lineno}: non-integer id or label") from e
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    if len(pairs) != expected_rows:
        raise DimensionMismatch(
            f"{path}: {len(pairs)} labels but dataset has {expected_rows} samples"
        )
    ids = sorted(p[0] for p in pairs)
    if ids != list(range(expected_rows)):
        raise SchemaError(f"{path}: ids must be exactly 0..{expected_rows - 1}")
    labels = np.empty(expected_rows, dtype=np.int64)
    for i, lab in pairs:
        labels[i] = lab
    return labels


def write_labels_csv(labels: np.ndarray, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "label"])
        for i, lab in enumerate(labels):
            writer.writerow([i, int(lab)])


# ---------------------------------------------------------------------------
# candidate files


def load_candidates(path: str | Path, expected_dim: int | None = None) -> CandidateFile:
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON: {e}") from e
    for key in ("concept", "words", "embeddings"):
        if key not in spec:
            raise SchemaError(f"{path}: candidate file missing key {key!r}")
    words = spec["words"]
    if not isinstance(words, list) or not all(isinstance(w, str) for w in words):
        raise SchemaError(f"{path}: 'words' must be a list of strings")
    if len(set(words)) != len(words):
        raise SchemaError(f"{path}: candidate words must be distinct")
    emb = load_matrix(path.parent / spec["embeddings"])
    if emb.rows != len(words):
        raise DimensionMismatch(
            f"{path}: {len(words)} words but embedding matrix has {emb.rows} rows"
        )
    if expected_dim is not None and emb.dim != expected_dim:
        raise DimensionMismatch(
            f"{path}: candidate dim {emb.dim} != dataset dim {expected_dim}"
        )
    return CandidateFile(concept=spec["concept"], words=list(words), embeddings=emb)


def write_candidates(cand: CandidateFile, json_path: str | Path) -> None:
    json_path = Path(json_path)
    dpx_name = json_path.with_suffix(".dpx").name
    write_matrix(cand.embeddings, json_path.parent / dpx_name)
    json_path.write_text(
        json.dumps(
            {"concept": cand.concept, "words": cand.words, "embeddings": dpx_name},
            indent=2,
        )
        + "\n"
    )


# ---------------------------------------------------------------------------
# manifests


def load_bundle(manifest_path: str | Path) -> DatasetBundle:
    """Load and fully validate a dataset bundle from its manifest."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except OSError as e:
        raise IoError(f"cannot read {manifest_path}: {e}") from e
    except json.JSONDecodeError as e:
        raise SchemaError(f"{manifest_path}: invalid JSON: {e}") from e

    for key in ("name", "visual", "text", "perspectives"):
        if key not in manifest:
            raise SchemaError(f"{manifest_path}: manifest missing key {key!r}")
    base = manifest_path.parent

    visual = load_matrix(base / manifest["visual"])
    text = load_matrix(base / manifest["text"])
    if visual.dim != text.dim:
        raise DimensionMismatch(
            f"visual dim {visual.dim} != text dim {text.dim}"
        )
    if visual.rows != text.rows:
        raise DimensionMismatch(
            f"visual has {visual.rows} rows, text has {text.rows}"
        )

    star = None
    star_ref = manifest.get("star")
    if star_ref:
        star_m = load_matrix(base / star_ref)
        if star_m.rows != 1:
            raise SchemaError(f"star embedding must be a single row, got {star_m.rows}")
        if star_m.dim != visual.dim:
            raise DimensionMismatch(
                f"star dim {star_m.dim} != dataset dim {visual.dim}"
            )
        star = star_m.data
    else:
        log.info("%s: no star embedding; base proxies will be seeded", manifest_path)

    perspectives = []
    specs = manifest["perspectives"]
    if not isinstance(specs, list) or not specs:
        raise SchemaError(f"{manifest_path}: 'perspectives' must be a nonempty list")
    for spec in specs:
        for key in ("concept", "labels", "M"):
            if key not in spec:
                raise SchemaError(f"{manifest_path}: perspective missing key {key!r}")
        n_classes = spec["M"]
        if not isinstance(n_classes, int) or n_classes < 1:
            raise SchemaError(f"perspective {spec['concept']!r}: M must be a positive integer")
        labels = read_labels_csv(base / spec["labels"], visual.rows)
        if labels.min() < 0 or labels.max() >= n_classes:
            raise LabelOutOfRange(
                f"perspective {spec['concept']!r}: labels must lie in 0..{n_classes - 1}, "
                f"found {int(labels.min())}..{int(labels.max())}"
            )
        counts = np.bincount(labels, minlength=n_classes)
        if np.any(counts == 0):
            empty = int(np.argmax(counts == 0))
            raise EmptyClass(f"perspective {spec['concept']!r}: class {empty} has no samples")
        cand_path = (base / spec["candidates"]) if spec.get("candidates") else None
        perspectives.append(
            Perspective(
                concept=spec["concept"],
                labels=labels,
                n_classes=n_classes,
                candidates_path=cand_path,
            )
        )

    return DatasetBundle(
        name=manifest["name"],
        visual=visual,
        text=text,
        perspectives=perspectives,
        star_embedding=star,
    )


def write_manifest(manifest: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2) + "\n")
