"""Run inspection: delimited dumps plus rendered figures.

`inspect` walks a finished run directory and emits CSV/JSON for
external tooling alongside PNG figures (loss curves, schedules, mixing
weights, a 2-D projection of the fused features).  Figures can be
switched off; the delimited output is always written.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import SchemaError
from .ioformats import load_bundle, read_raw

log = logging.getLogger("dproxy.report")


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except FileNotFoundError as e:
        raise SchemaError(f"not a run directory: missing {path.name}") from e


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def _pca_2d(x: np.ndarray) -> np.ndarray:
    centered = x - x.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return centered @ vt[:2].T


def inspect_run(run_dir: str | Path, out_dir: str | Path | None = None,
                figures: bool = True) -> Path:
    """Dump schedules, losses, candidate history, mixing weights, and raw
    fused coordinates; render figures next to them unless disabled."""
    run = Path(run_dir)
    out = Path(out_dir) if out_dir else run / "inspect"
    out.mkdir(parents=True, exist_ok=True)

    report = _read_json(run / "report.json")
    epochs = report.get("epochs", [])

    _write_csv(out / "losses.csv",
               ["epoch", "loss_align", "loss_user", "loss_concept", "loss_total"],
               [[e["epoch"], e["loss_align"], e["loss_user"], e["loss_concept"],
                 e["loss_total"]] for e in epochs])
    _write_csv(out / "schedules.csv",
               ["epoch", "alpha", "beta"],
               [[e["epoch"], e["alpha"], e["beta"]] for e in epochs])
    (out / "candidate_history.json").write_text(json.dumps({
        "history": report.get("candidate_history", []),
        "events": report.get("events", []),
        "final_active_words": report.get("final_active_words", []),
    }, indent=2) + "\n")

    lam = read_raw(run / "lam.dpx")
    stats = {
        "mean": float(lam.mean()),
        "std": float(lam.std()),
        "min": float(lam.min()),
        "max": float(lam.max()),
    }
    (out / "lambda_stats.json").write_text(json.dumps(stats, indent=2) + "\n")
    _write_csv(out / "lambda.csv", ["id", "lambda"],
               [[i, float(v)] for i, v in enumerate(lam.ravel())])

    fused = read_raw(run / "fused.dpx")
    _write_csv(out / "fused_coords.csv",
               ["id"] + [f"x{j}" for j in range(fused.shape[1])],
               [[i] + [float(v) for v in row] for i, row in enumerate(fused)])

    if figures:
        render_figures(run, out, report, fused, lam)
    return out


def render_figures(run: Path, out: Path, report: dict,
                   fused: np.ndarray, lam: np.ndarray) -> None:
    epochs = report.get("epochs", [])
    ts = [e["epoch"] for e in epochs]

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for key, label in [("loss_align", "alignment"), ("loss_user", "user constraint"),
                       ("loss_concept", "concept constraint"), ("loss_total", "total")]:
        ax.plot(ts, [e[key] for e in epochs], label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    ax.set_title(f"losses: {report.get('bundle_name', '')} / {report.get('concept', '')}")
    fig.tight_layout()
    fig.savefig(out / "losses.png", dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ts, [e["alpha"] for e in epochs], label="alpha(t)")
    ax.plot(ts, [e["beta"] for e in epochs], label="beta(t)")
    ax.set_xlabel("epoch")
    ax.set_ylabel("constraint weight")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "schedules.png", dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(lam.ravel(), bins=40, range=(0.0, 1.0))
    ax.set_xlabel("text weight per sample")
    ax.set_ylabel("count")
    fig.tight_layout()
    fig.savefig(out / "lambda_hist.png", dpi=120)
    plt.close(fig)

    # color the projection by ground truth when the manifest is reachable
    colors = None
    config = _read_json(run / "config.json")
    manifest = config.get("manifest")
    concept = config.get("concept")
    if manifest and Path(manifest).exists():
        try:
            bundle = load_bundle(manifest)
            colors = bundle.perspective(concept).labels
        except Exception as e:  # figure stays useful without labels
            log.info("no labels for scatter: %s", e)
    coords = _pca_2d(fused.astype(np.float64))
    fig, ax = plt.subplots(figsize=(5.5, 5))
    if colors is not None:
        scatter = ax.scatter(coords[:, 0], coords[:, 1], c=colors, cmap="tab10", s=8)
        fig.colorbar(scatter, ax=ax, label=f"{concept} label")
    else:
        ax.scatter(coords[:, 0], coords[:, 1], s=8)
    ax.set_xlabel("pc 1")
    ax.set_ylabel("pc 2")
    ax.set_title("fused features, 2-D projection")
    fig.tight_layout()
    fig.savefig(out / "fused_scatter.png", dpi=120)
    plt.close(fig)


def validate_dataset(manifest_path: str | Path) -> dict:
    """Load a bundle and its candidate files, returning a summary dict."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    bundle = load_bundle(manifest_path)
    from .ioformats import load_candidates

    summary = {
        "name": bundle.name,
        "samples": bundle.size,
        "dim": bundle.dim,
        "star": bundle.star_embedding is not None,
        "renormalized_rows": {
            "visual": bundle.visual.renormalized,
            "text": bundle.text.renormalized,
        },
        "perspectives": [],
    }
    for p in bundle.perspectives:
        entry = {
            "concept": p.concept,
            "classes": p.n_classes,
            "candidates": None,
        }
        if p.candidates_path is not None:
            cand = load_candidates(p.candidates_path, expected_dim=bundle.dim)
            entry["candidates"] = {
                "words": len(cand.words),
                "renormalized_rows": cand.embeddings.renormalized,
            }
        summary["perspectives"].append(entry)
    return summary
