"""Inference over sample lists and scoring with the benchmark metrics."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import torch

from atbench import metrics
from atbench.metrics import MetricReport, PanopticMap
from atbench.model import AtModel
from atbench.synthetic import TaskSample, downsample, downsample_panoptic
from atbench.tokenization import TaskKind

EVAL_BATCH = 32
MAX_GEN_LEN = {TaskKind.OCR: 16, TaskKind.IC: 40, TaskKind.VQA: 12}


@dataclass
class Predictions:
    """Raw model outputs for one task, keyed like the samples they came from."""

    task: TaskKind
    uids: List[str]
    values: list = field(default_factory=list)


def _images(samples: Sequence[TaskSample]) -> torch.Tensor:
    return torch.from_numpy(np.stack([s.image for s in samples]).astype(np.float32))


def predict(model: AtModel, task: TaskKind, samples: Sequence[TaskSample], batch_size: int = EVAL_BATCH) -> Predictions:
    model.eval()
    preds = Predictions(task, [s.uid for s in samples])
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        images = _images(chunk)
        if task is TaskKind.PS:
            preds.values.extend(model.predict_panoptic(images))
        elif task is TaskKind.DE:
            preds.values.extend(list(model.predict_depth(images)))
        else:
            prompts = [s.prompt for s in chunk]
            preds.values.extend(model.generate(task, images, prompts, MAX_GEN_LEN[task]))
    return preds


def _stride(gt_shape, pred_shape) -> int:
    """Integer factor between a full-resolution target and a prediction raster."""
    sh, sw = gt_shape[0] // pred_shape[0], gt_shape[1] // pred_shape[1]
    if sh != sw or sh < 1 or gt_shape[0] != sh * pred_shape[0] or gt_shape[1] != sw * pred_shape[1]:
        raise ValueError(f"prediction shape {tuple(pred_shape)} does not divide target shape {tuple(gt_shape)}")
    return sh


def score(task: TaskKind, preds: Predictions, samples: Sequence[TaskSample]) -> Dict[str, float]:
    """Metric values for one task.

    Pixel targets are point-sampled down to whatever resolution the prediction
    has (the model predicts at 1/4 scale; a full-resolution prediction is
    scored against the full-resolution target).
    """
    by_uid = dict(zip(preds.uids, preds.values))
    missing = [s.uid for s in samples if s.uid not in by_uid]
    if missing:
        raise KeyError(f"no prediction for {missing[:3]}")
    values = [by_uid[s.uid] for s in samples]
    if task is TaskKind.PS:
        gts = [downsample_panoptic(s.target, _stride(s.target.ids.shape, v.ids.shape)) for s, v in zip(samples, values)]
        res = metrics.panoptic_quality(values, gts)
        return {"pq": res.pq, "sq": res.sq, "rq": res.rq}
    if task is TaskKind.DE:
        gts = [downsample(s.target, _stride(s.target.shape, np.shape(v))) for s, v in zip(samples, values)]
        return {"rmse": metrics.depth_rmse(values, gts)}
    if task is TaskKind.OCR:
        return {"ocr_acc": metrics.ocr_accuracy(values, [s.target for s in samples])}
    if task is TaskKind.IC:
        cands = {s.uid: v for s, v in zip(samples, values)}
        refs = {s.uid: list(s.target) for s in samples}
        out = {"bleu1": metrics.bleu1(cands, refs)}
        if len(samples) >= 2:
            out["cider"] = metrics.cider(cands, refs)
        return out
    return {"vqa_acc": metrics.vqa_accuracy(values, [s.target["answers"] for s in samples])}


def evaluate(
    model: AtModel,
    datasets: Mapping[TaskKind, Sequence[TaskSample]],
    tasks: Optional[Sequence[TaskKind]] = None,
) -> MetricReport:
    t0 = time.perf_counter()
    tasks = list(datasets) if tasks is None else list(tasks)
    scores: Dict[str, float] = {}
    for task in tasks:
        samples = datasets[task]
        scores.update(score(task, predict(model, task, samples), samples))
    params = model.parameter_summary()
    report = MetricReport(scores, params["total"], params, time.perf_counter() - t0)
    report.validate()
    return report
