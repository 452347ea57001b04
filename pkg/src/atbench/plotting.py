"""Static matplotlib figures written next to the tab-separated reports."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_METADATA = {"Software": None}

METRIC_LABELS = {
    "pq": "PQ",
    "rmse": "RMSE (m)",
    "ocr_acc": "OCR acc",
    "bleu1": "BLEU-1",
    "cider": "CIDEr",
    "vqa_acc": "VQA acc",
}


def _style() -> None:
    plt.rcParams.update(
        {
            "font.size": 9,
            "axes.spines.top": False,
            "axes.spines.right": False,
            "axes.grid": True,
            "grid.alpha": 0.3,
            "savefig.dpi": 100,
        }
    )


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata=_METADATA)
    plt.close(fig)
    return path


def tradeoff_figure(rows: Sequence[Mapping], path: Path) -> Path:
    """One scatter panel per metric: parameter count vs score, labelled by model."""
    _style()
    metrics = [m for m in METRIC_LABELS if any(m in r["scores"] for r in rows)]
    n = max(1, len(metrics))
    fig, axes = plt.subplots(1, n, figsize=(3.0 * n, 2.8), squeeze=False)
    for ax, metric in zip(axes[0], metrics):
        for r in rows:
            if metric in r["scores"]:
                ax.scatter(r["parameters"] / 1e6, r["scores"][metric], s=28)
                ax.annotate(r["label"], (r["parameters"] / 1e6, r["scores"][metric]), fontsize=7,
                            xytext=(3, 3), textcoords="offset points")
        ax.set_xlabel("parameters (M)")
        ax.set_ylabel(METRIC_LABELS[metric])
    if not metrics:
        axes[0][0].text(0.5, 0.5, "no metrics", ha="center", va="center")
    fig.tight_layout()
    return _save(fig, path)


def ablation_figure(rows: Sequence[Mapping], path: Path) -> Path:
    _style()
    fig, ax = plt.subplots(figsize=(4.2, 2.8))
    labels = [f"{r['tokenizer']}\n{r['vocabulary']} ({r['vocab_size']})" for r in rows]
    ax.bar(range(len(rows)), [r["accuracy"] for r in rows], color=["#999999", "#6b8fb3", "#2f5f8f"][: len(rows)])
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, fontsize=7)
    ax.set_ylabel("OCR accuracy")
    ax.set_ylim(0, 1.05)
    fig.tight_layout()
    return _save(fig, path)


def loss_curves(log_rows: List[Dict[str, float]], path: Path) -> Path:
    _style()
    fig, ax = plt.subplots(figsize=(5, 3))
    steps = [r["step"] for r in log_rows]
    for key in [k for k in log_rows[0] if k.startswith("loss_")]:
        ax.plot(steps, [max(r[key], 1e-8) for r in log_rows], lw=0.8, label=key[5:])
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("weighted loss")
    ax.legend(fontsize=7, ncol=3)
    fig.tight_layout()
    return _save(fig, path)


def pixel_examples(images: Sequence[np.ndarray], seg: Sequence[np.ndarray], depth: Sequence[np.ndarray], path: Path) -> Path:
    """Input / predicted segment ids / predicted depth for a few samples."""
    _style()
    n = max(len(images), 1)
    fig, axes = plt.subplots(3, n, figsize=(1.6 * n, 4.8), squeeze=False)
    for i in range(n):
        for row, (arr, kw) in enumerate(
            (
                (images[i] if i < len(images) else None, {}),
                (seg[i] if i < len(seg) else None, {"cmap": "tab20", "interpolation": "nearest"}),
                (depth[i] if i < len(depth) else None, {"cmap": "viridis_r", "vmin": 0, "vmax": 10}),
            )
        ):
            ax = axes[row][i]
            ax.axis("off")
            if arr is not None:
                ax.imshow(arr, **kw)
    fig.tight_layout()
    return _save(fig, path)
