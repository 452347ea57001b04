"""Joint multi-task training: OCR-major scheduling, per-task batches, AdamW
with a step-wise decayed learning rate."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import Tensor

from atbench.checkpoint import load_checkpoint, save_checkpoint
from atbench.model import AtModel
from atbench.objectives import (
    DEPTH_EPS,
    LossWeights,
    PanopticTarget,
    depth_loss,
    multitask_loss,
    seg_loss,
    token_loss,
)
from atbench.synthetic import TaskSample, downsample, downsample_panoptic
from atbench.tokenization import ALL_TASKS, BOS_ID, PAD_ID, TaskKind, encode

logger = logging.getLogger(__name__)

REFERENCE_BATCH_SIZES = {TaskKind.PS: 4, TaskKind.DE: 4, TaskKind.OCR: 768, TaskKind.IC: 8, TaskKind.VQA: 4}
DESK_SHRINK = {TaskKind.PS: 1, TaskKind.DE: 1, TaskKind.OCR: 24, TaskKind.IC: 1, TaskKind.VQA: 1}


class NumericFailure(RuntimeError):
    def __init__(self, task: TaskKind, value: float) -> None:
        super().__init__(f"non-finite loss {value} for task {task.value}")
        self.task = task


@dataclass
class TrainConfig:
    base_lr: float = 1e-3
    total_steps: int = 0
    epochs: int = 15
    batch_sizes: Dict[TaskKind, int] = field(default_factory=lambda: dict(REFERENCE_BATCH_SIZES))
    shrink: Dict[TaskKind, int] = field(default_factory=lambda: dict(DESK_SHRINK))
    seed: int = 0
    decay_fractions: Tuple[float, float] = (0.6, 0.8)
    decay_factor: float = 0.1
    weight_decay: float = 0.01
    betas: Tuple[float, float] = (0.9, 0.999)
    grad_clip: float = 1.0
    tasks: Tuple[TaskKind, ...] = ALL_TASKS
    ckpt_every: int = 0

    def validate(self) -> None:
        if self.base_lr <= 0:
            raise ValueError("train.base_lr must be positive")
        if self.total_steps < 0 or self.epochs < 1:
            raise ValueError("train.total_steps must be >= 0 and train.epochs >= 1")
        for t in self.tasks:
            if self.batch_size(t) < 1:
                raise ValueError(f"batch size for {t.value} must be at least 1")
            if self.shrink.get(t, 1) < 1:
                raise ValueError(f"shrink factor for {t.value} must be at least 1")
        f = self.decay_fractions
        if not (0 < f[0] < f[1] < 1):
            raise ValueError("train.decay_fractions must be strictly increasing inside (0, 1)")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("train.decay_factor must lie in (0, 1]")
        if not self.tasks:
            raise ValueError("train.tasks is empty")

    def batch_size(self, task: TaskKind) -> int:
        return max(1, self.batch_sizes[task] // self.shrink.get(task, 1))

    def major_task(self) -> TaskKind:
        return TaskKind.OCR if TaskKind.OCR in self.tasks else self.tasks[0]

    def resolve_steps(self, major_count: int) -> int:
        """Explicit ``total_steps`` or ceil(|major stream| * epochs / major batch)."""
        if self.total_steps:
            return self.total_steps
        return math.ceil(major_count * self.epochs / self.batch_size(self.major_task()))


def lr_at(step: int, cfg: TrainConfig, total_steps: Optional[int] = None) -> float:
    total = total_steps if total_steps is not None else cfg.total_steps
    if total <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step < total:
        raise ValueError(f"step {step} outside [0, {total})")
    frac = step / total
    decays = sum(frac >= f for f in cfg.decay_fractions)
    return cfg.base_lr * cfg.decay_factor**decays


class TaskStream:
    """Endless batches over a finite sample list; each pass is a fresh
    permutation drawn from (seed, task, pass index)."""

    def __init__(self, task: TaskKind, samples: Sequence[TaskSample], batch_size: int, seed: int) -> None:
        if not samples:
            raise ValueError(f"empty sample stream for {task.value}")
        self.task = task
        self.samples = list(samples)
        self.batch_size = batch_size
        self.seed = seed
        self._perms: Dict[int, np.ndarray] = {}

    def _perm(self, cycle: int) -> np.ndarray:
        if cycle not in self._perms:
            task_idx = list(TaskKind).index(self.task)
            self._perms[cycle] = np.random.default_rng([self.seed, task_idx, cycle]).permutation(len(self.samples))
        return self._perms[cycle]

    def indices(self, step: int) -> List[int]:
        n = len(self.samples)
        out = []
        for pos in range(step * self.batch_size, (step + 1) * self.batch_size):
            cycle, offset = divmod(pos, n)
            out.append(int(self._perm(cycle)[offset]))
        return out

    def batch(self, step: int) -> List[TaskSample]:
        return [self.samples[i] for i in self.indices(step)]


def next_batches(streams: Mapping[TaskKind, TaskStream], step: int) -> Dict[TaskKind, List[TaskSample]]:
    return {task: stream.batch(step) for task, stream in streams.items()}


def make_streams(datasets: Mapping[TaskKind, Sequence[TaskSample]], cfg: TrainConfig) -> Dict[TaskKind, TaskStream]:
    streams = {}
    for task in cfg.tasks:
        if task not in datasets or not datasets[task]:
            raise ValueError(f"no training samples for scheduled task {task.value}")
        streams[task] = TaskStream(task, datasets[task], cfg.batch_size(task), cfg.seed)
    return streams


def token_text(sample: TaskSample) -> str:
    if sample.task is TaskKind.OCR:
        return sample.target
    if sample.task is TaskKind.IC:
        return sample.target[0]
    return sample.target["answer"]


@dataclass
class Batch:
    task: TaskKind
    images: Tensor
    prompts: List[str]
    targets: object = None
    inputs: Optional[Tensor] = None


class Collator:
    """Turns samples into tensors, caching per-sample work by uid."""

    def __init__(self, model: AtModel) -> None:
        self.model = model
        self._cache: Dict[str, object] = {}

    def _target(self, s: TaskSample):
        if s.uid in self._cache:
            return self._cache[s.uid]
        if s.task is TaskKind.PS:
            out: object = PanopticTarget.from_map(downsample_panoptic(s.target))
        elif s.task is TaskKind.DE:
            out = torch.from_numpy(np.maximum(downsample(s.target), DEPTH_EPS).astype(np.float32))
        else:
            vocab, mode = self.model.task_vocabs[s.task]
            out = list(encode(vocab, token_text(s), mode).ids)
        self._cache[s.uid] = out
        return out

    def __call__(self, task: TaskKind, samples: Sequence[TaskSample]) -> Batch:
        images = torch.from_numpy(np.stack([s.image for s in samples]).astype(np.float32))
        prompts = [s.prompt for s in samples]
        targets = [self._target(s) for s in samples]
        if task is TaskKind.PS:
            return Batch(task, images, prompts, targets)
        if task is TaskKind.DE:
            return Batch(task, images, prompts, torch.stack(targets))
        longest = max(len(t) for t in targets)
        inputs = torch.full((len(samples), longest), PAD_ID, dtype=torch.long)
        tgt = torch.full((len(samples), longest), PAD_ID, dtype=torch.long)
        for i, ids in enumerate(targets):
            inputs[i, 0] = BOS_ID
            inputs[i, 1 : len(ids)] = torch.tensor(ids[:-1], dtype=torch.long)
            tgt[i, : len(ids)] = torch.tensor(ids, dtype=torch.long)
        return Batch(task, images, prompts, tgt, inputs)


def task_layer_losses(model: AtModel, batch: Batch, w: LossWeights) -> List[Tensor]:
    """One loss per decoder layer for the batch's task."""
    if batch.task is TaskKind.PS:
        outs = model.forward_pixels(batch.task, batch.images, batch.prompts)
        n = len(batch.targets)
        return [
            sum(seg_loss(o.mask_logits[i], o.class_affinity[i], batch.targets[i], w) for i in range(n)) / n
            for o in outs
        ]
    if batch.task is TaskKind.DE:
        outs = model.forward_pixels(batch.task, batch.images, batch.prompts)
        n = batch.targets.shape[0]
        return [
            sum(depth_loss(o.depth[i].clamp_min(DEPTH_EPS), batch.targets[i]) for i in range(n)) / n for o in outs
        ]
    outs = model.forward_tokens(batch.task, batch.images, batch.inputs, batch.prompts)
    return [token_loss(o.affinity, batch.targets) for o in outs]


@dataclass
class TrainState:
    model: AtModel
    optimizer: torch.optim.Optimizer
    cfg: TrainConfig
    total_steps: int
    step: int = 0
    history: Dict[TaskKind, List[float]] = field(default_factory=dict)
    total_history: List[float] = field(default_factory=list)


def make_state(model: AtModel, cfg: TrainConfig, total_steps: int) -> TrainState:
    decay, no_decay = [], []
    for name, p in model.named_parameters():
        (no_decay if p.dim() < 2 or "norm" in name else decay).append(p)
    optimizer = torch.optim.AdamW(
        [{"params": decay, "weight_decay": cfg.weight_decay}, {"params": no_decay, "weight_decay": 0.0}],
        lr=cfg.base_lr,
        betas=cfg.betas,
    )
    return TrainState(model, optimizer, cfg, total_steps, history={t: [] for t in cfg.tasks})


def apply_update(state: TrainState) -> float:
    """Clips gradients and applies one AdamW update at ``lr_at(step)``; returns the lr."""
    lr = lr_at(state.step, state.cfg, state.total_steps)
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    if state.cfg.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(state.model.parameters(), state.cfg.grad_clip)
    state.optimizer.step()
    return lr


def train_step(
    state: TrainState,
    batches: Mapping[TaskKind, Batch],
    w: LossWeights,
) -> Tuple[float, Dict[TaskKind, float], float]:
    """Forward every scheduled task, backpropagate the multi-task loss, update.

    Returns (total loss, per-task weighted loss, learning rate).
    """
    if state.step >= state.total_steps:
        raise ValueError("training already finished")
    state.model.train()
    state.optimizer.zero_grad(set_to_none=True)
    per_layer = {}
    per_task = {}
    for task in state.cfg.tasks:
        if task not in batches:
            raise ValueError(f"no batch for scheduled task {task.value}")
        losses = task_layer_losses(state.model, batches[task], w)
        contrib = w.task[task] * sum(losses[-w.layers[task] :])
        value = float(contrib.detach())
        if not math.isfinite(value):
            raise NumericFailure(task, value)
        per_layer[task] = losses
        per_task[task] = value
    total = multitask_loss(per_layer, w, state.cfg.tasks)
    total.backward()
    lr = apply_update(state)
    state.step += 1
    for task, value in per_task.items():
        state.history.setdefault(task, []).append(value)
    state.total_history.append(float(total.detach()))
    return state.total_history[-1], per_task, lr


def log_header(tasks: Sequence[TaskKind]) -> str:
    return "\t".join(["step", "lr"] + [f"loss_{t.value}" for t in tasks] + ["total"]) + "\n"


def log_line(step: int, lr: float, per_task: Mapping[TaskKind, float], total: float, tasks: Sequence[TaskKind]) -> str:
    cols = [str(step), repr(lr)] + [repr(per_task[t]) for t in tasks] + [repr(total)]
    return "\t".join(cols) + "\n"


def state_tensors(state: TrainState) -> Dict[str, Tensor]:
    tensors = {f"model.{k}": v for k, v in state.model.state_dict().items()}
    names = {id(p): n for n, p in state.model.named_parameters()}
    for group in state.optimizer.param_groups:
        for p in group["params"]:
            st = state.optimizer.state.get(p)
            if not st:
                continue
            name = names[id(p)]
            for key in ("exp_avg", "exp_avg_sq", "step"):
                tensors[f"optim.{name}.{key}"] = torch.as_tensor(st[key], dtype=torch.float32)
    return tensors


def restore_state(state: TrainState, tensors: Mapping[str, Tensor], meta: Mapping) -> None:
    model_sd = {k[len("model.") :]: v for k, v in tensors.items() if k.startswith("model.")}
    state.model.load_state_dict(model_sd)
    params = dict(state.model.named_parameters())
    for name, p in params.items():
        if f"optim.{name}.exp_avg" in tensors:
            state.optimizer.state[p] = {
                "step": tensors[f"optim.{name}.step"].clone().reshape(()),
                "exp_avg": tensors[f"optim.{name}.exp_avg"].clone(),
                "exp_avg_sq": tensors[f"optim.{name}.exp_avg_sq"].clone(),
            }
    train = meta.get("train", {})
    state.step = int(train.get("step", 0))
    state.history = {TaskKind(k): list(v) for k, v in train.get("history", {}).items()}
    state.total_history = list(train.get("total_history", []))


def train_meta(state: TrainState) -> Dict:
    return {
        "step": state.step,
        "total_steps": state.total_steps,
        "history": {t.value: v for t, v in state.history.items()},
        "total_history": state.total_history,
    }


def run(
    state: TrainState,
    streams: Mapping[TaskKind, TaskStream],
    w: LossWeights,
    *,
    log_path: Optional[Path] = None,
    save: Optional[Callable[[TrainState, str], None]] = None,
    until: Optional[int] = None,
    progress: Optional[Callable[[TrainState, Dict[TaskKind, float], float], None]] = None,
) -> TrainState:
    """Train from ``state.step`` up to ``until`` (default: total steps)."""
    collate = Collator(state.model)
    end = state.total_steps if until is None else min(until, state.total_steps)
    tasks = list(state.cfg.tasks)
    log = None
    if log_path is not None:
        fresh = not log_path.exists() or state.step == 0
        log = open(log_path, "w" if fresh else "a", encoding="utf-8")
        if fresh:
            log.write(log_header(tasks))
    try:
        while state.step < end:
            step = state.step
            batches = {t: collate(t, samples) for t, samples in next_batches(streams, step).items()}
            total, per_task, lr = train_step(state, batches, w)
            if log is not None:
                log.write(log_line(step, lr, per_task, total, tasks))
            if progress is not None:
                progress(state, per_task, total)
            if save is not None and state.cfg.ckpt_every and state.step % state.cfg.ckpt_every == 0:
                log and log.flush()
                save(state, f"ckpt_step{state.step:06d}")
    finally:
        if log is not None:
            log.close()
    return state
