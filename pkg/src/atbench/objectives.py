"""Training losses: set matching, segmentation, scale-invariant depth, token
cross-entropy and the deep-supervised multi-task sum."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from scipy.optimize import linear_sum_assignment
from torch import Tensor

from atbench.metrics import PanopticMap
from atbench.tokenization import PAD_ID, TaskKind

DEPTH_EPS = 1e-3


@dataclass
class LossWeights:
    cls: float = 2.0
    bce: float = 5.0
    dice: float = 5.0
    no_object: float = 0.1
    task: Dict[TaskKind, float] = field(
        default_factory=lambda: {
            TaskKind.PS: 1.0,
            TaskKind.DE: 10.0,
            TaskKind.OCR: 10.0,
            TaskKind.IC: 2.0,
            TaskKind.VQA: 2.0,
        }
    )
    layers: Dict[TaskKind, int] = field(
        default_factory=lambda: {
            TaskKind.PS: 6,
            TaskKind.DE: 3,
            TaskKind.OCR: 6,
            TaskKind.IC: 3,
            TaskKind.VQA: 3,
        }
    )

    def validate(self, num_layers: Optional[int] = None) -> None:
        for name in ("cls", "bce", "dice", "no_object"):
            if getattr(self, name) <= 0:
                raise ValueError(f"loss weight {name} must be positive")
        for t, lam in self.task.items():
            if lam <= 0:
                raise ValueError(f"lambda for {t.value} must be positive")
        for t, nl in self.layers.items():
            if nl < 1 or (num_layers is not None and nl > num_layers):
                raise ValueError(f"nl for {t.value}={nl} must lie in [1, {num_layers}]")


@dataclass
class PanopticTarget:
    masks: Tensor  # (K, h, w) float {0, 1}
    classes: Tensor  # (K,) long, never the no-object id
    is_thing: Tensor  # (K,) bool

    @classmethod
    def from_map(cls, pmap: PanopticMap, dtype=torch.float32) -> "PanopticTarget":
        seg_ids = sorted(k for k in pmap.segments if (pmap.ids == k).any())
        masks = np.stack([pmap.ids == k for k in seg_ids]) if seg_ids else np.zeros((0,) + pmap.ids.shape, bool)
        return cls(
            torch.as_tensor(masks, dtype=dtype),
            torch.tensor([pmap.segments[k][0] for k in seg_ids], dtype=torch.long),
            torch.tensor([pmap.segments[k][1] for k in seg_ids], dtype=torch.bool),
        )

    def __len__(self) -> int:
        return self.masks.shape[0]


Matching = List[Tuple[int, int]]


def hungarian_match(cost) -> Matching:
    """Exact minimum-cost assignment of every target (column) to a distinct query (row)."""
    cost = np.asarray(cost.detach().cpu() if isinstance(cost, Tensor) else cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix has non-finite entries")
    if cost.shape[1] > cost.shape[0]:
        raise ValueError(f"{cost.shape[1]} targets but only {cost.shape[0]} predictions")
    rows, cols = linear_sum_assignment(cost)
    return sorted(zip(rows.tolist(), cols.tolist()), key=lambda p: p[1])


def _pairwise_bce(logits: Tensor, masks: Tensor) -> Tensor:
    """(Q, K) mean per-pixel binary cross-entropy of every logit map vs every mask."""
    x = logits.flatten(1)
    y = masks.flatten(1).to(x.dtype)
    pos = F.softplus(-x)  # -log sigmoid(x)
    neg = F.softplus(x)  # -log(1 - sigmoid(x))
    return (pos @ y.t() + neg @ (1 - y).t()) / x.shape[1]


def _pairwise_dice(logits: Tensor, masks: Tensor) -> Tensor:
    p = torch.sigmoid(logits.flatten(1))
    y = masks.flatten(1).to(p.dtype)
    inter = p @ y.t()
    return 1 - 2 * inter / (p.sum(1)[:, None] + y.sum(1)[None, :])


def match_cost(mask_logits: Tensor, class_affinity: Tensor, target: PanopticTarget, w: LossWeights) -> Tensor:
    """(m-1, K) matching cost for one image."""
    prob = class_affinity.softmax(-1)[:, target.classes]
    return (
        w.cls * -prob
        + w.bce * _pairwise_bce(mask_logits, target.masks)
        + w.dice * _pairwise_dice(mask_logits, target.masks)
    )


def seg_loss(
    mask_logits: Tensor,
    class_affinity: Tensor,
    target: PanopticTarget,
    w: LossWeights,
    no_object: Optional[int] = None,
) -> Tensor:
    """Segmentation loss for one image: ``cls*L_cls + bce*L_bce + dice*L_dice``.

    Unmatched queries are pushed toward the no-object class (the last concept
    row) with relative weight ``w.no_object``.
    """
    n_queries, n_classes = class_affinity.shape
    no_object = n_classes - 1 if no_object is None else no_object
    k = len(target)
    if k > n_queries:
        raise ValueError(f"{k} target segments exceed {n_queries} mask queries")
    with torch.no_grad():
        pairs = hungarian_match(match_cost(mask_logits, class_affinity, target, w)) if k else []
    labels = torch.full((n_queries,), no_object, dtype=torch.long)
    weights = torch.full((n_queries,), w.no_object, dtype=class_affinity.dtype)
    for q, t in pairs:
        labels[q] = target.classes[t]
        weights[q] = 1.0
    ce = F.cross_entropy(class_affinity, labels, reduction="none")
    loss_cls = (ce * weights).sum() / weights.sum()
    if not pairs:
        return w.cls * loss_cls
    q_idx = torch.tensor([q for q, _ in pairs])
    t_idx = torch.tensor([t for _, t in pairs])
    logits = mask_logits[q_idx].flatten(1)
    masks = target.masks[t_idx].flatten(1).to(logits.dtype)
    loss_bce = F.binary_cross_entropy_with_logits(logits, masks, reduction="none").mean(1).mean()
    p = torch.sigmoid(logits)
    loss_dice = (1 - 2 * (p * masks).sum(1) / (p.sum(1) + masks.sum(1))).mean()
    return w.cls * loss_cls + w.bce * loss_bce + w.dice * loss_dice


def depth_loss(pred: Tensor, gt: Tensor) -> Tensor:
    """Scale-invariant log loss ``mean(d^2) - 0.5 * mean(d)^2`` with ``d = log gt - log pred``."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    if bool((pred <= 0).any()) or bool((gt <= 0).any()):
        raise ValueError("depth values must be positive; clamp at DEPTH_EPS first")
    d = torch.log(gt) - torch.log(pred)
    return (d * d).mean() - 0.5 * d.mean() ** 2


def token_loss(affinity: Tensor, targets: Tensor, pad_id: int = PAD_ID) -> Tensor:
    """Mean next-token cross-entropy over non-PAD positions (0 when all are PAD)."""
    vocab = affinity.shape[-1]
    if targets.numel() and int(targets.max()) >= vocab:
        raise ValueError(f"target id {int(targets.max())} outside vocabulary of size {vocab}")
    if affinity.shape[:-1] != targets.shape:
        raise ValueError(f"affinity rows {tuple(affinity.shape[:-1])} vs targets {tuple(targets.shape)}")
    if not bool((targets != pad_id).any()):
        return affinity.sum() * 0.0  # nothing to supervise; keep the graph connected
    return F.cross_entropy(affinity.reshape(-1, vocab), targets.reshape(-1), ignore_index=pad_id)


def multitask_loss(
    per_layer: Mapping[TaskKind, Sequence[Tensor]],
    w: LossWeights,
    scheduled: Optional[Sequence[TaskKind]] = None,
):
    """Sum over tasks of ``lambda_task`` times that task's losses on its top ``nl_task`` layers."""
    scheduled = list(per_layer) if scheduled is None else list(scheduled)
    total = 0.0
    for task in scheduled:
        if task not in per_layer:
            raise ValueError(f"no losses for scheduled task {task.value}")
        losses = list(per_layer[task])
        nl = w.layers[task]
        if len(losses) < nl:
            raise ValueError(f"task {task.value} has {len(losses)} layer losses, needs {nl}")
        total = total + w.task[task] * sum(losses[-nl:])
    return total
