import math

import pytest
import torch

from atbench import synthetic as S
from atbench import trainer as tr
from atbench.model import AtModel, ModelConfig
from atbench.objectives import LossWeights
from atbench.tokenization import TaskKind


def test_lr_schedule_examples():
    cfg = tr.TrainConfig(base_lr=1e-5)
    assert tr.lr_at(0, cfg, 100) == 1e-5
    assert tr.lr_at(59, cfg, 100) == 1e-5
    assert tr.lr_at(60, cfg, 100) == pytest.approx(1e-6, rel=1e-12)
    assert tr.lr_at(99, cfg, 100) == pytest.approx(1e-7, rel=1e-12)
    with pytest.raises(ValueError):
        tr.lr_at(100, cfg, 100)
    with pytest.raises(ValueError):
        tr.lr_at(-1, cfg, 100)
    values = [tr.lr_at(s, cfg, 37) for s in range(37)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_train_config_validation():
    with pytest.raises(ValueError):
        tr.TrainConfig(decay_fractions=(0.8, 0.6)).validate()
    with pytest.raises(ValueError):
        tr.TrainConfig(base_lr=0).validate()
    cfg = tr.TrainConfig()
    cfg.validate()
    assert cfg.batch_size(TaskKind.OCR) == 32
    assert cfg.batch_size(TaskKind.IC) == 8


def test_total_steps_from_major_stream():
    cfg = tr.TrainConfig(epochs=15)
    assert cfg.resolve_steps(256) == math.ceil(256 * 15 / 32)
    assert tr.TrainConfig(total_steps=7).resolve_steps(256) == 7


def test_stream_cycles_with_new_permutation():
    samples = S.generate(TaskKind.DE, 32, 0)
    stream = tr.TaskStream(TaskKind.DE, samples, 4, seed=3)
    first = [i for step in range(8) for i in stream.indices(step)]
    second = [i for step in range(8, 16) for i in stream.indices(step)]
    assert sorted(first) == list(range(32)) == sorted(second)
    assert first != second
    again = tr.TaskStream(TaskKind.DE, samples, 4, seed=3)
    assert [again.indices(s) for s in range(16)] == [stream.indices(s) for s in range(16)]
    with pytest.raises(ValueError):
        tr.TaskStream(TaskKind.DE, [], 4, 0)


def _setup(table, task_vocabs, steps=4, seed=0, tasks=tuple(TaskKind)):
    model = AtModel(ModelConfig(d=16, heads=2, m=8), table, task_vocabs, seed=seed)
    data = {t: S.generate(t, 8 if t is TaskKind.OCR else 4, 0) for t in tasks}
    cfg = tr.TrainConfig(total_steps=steps, tasks=tuple(tasks), seed=seed)
    cfg.shrink = {t: max(1, cfg.batch_sizes[t] // 2) for t in TaskKind}
    state = tr.make_state(model, cfg, steps)
    return state, tr.make_streams(data, cfg)


def test_training_is_deterministic(table, task_vocabs):
    a, sa = _setup(table, task_vocabs)
    b, sb = _setup(table, task_vocabs)
    tr.run(a, sa, LossWeights())
    tr.run(b, sb, LossWeights())
    assert a.total_history == b.total_history
    for (na, pa), (nb, pb) in zip(a.model.state_dict().items(), b.model.state_dict().items()):
        assert torch.equal(pa, pb), na
    assert all(len(h) == a.step for h in a.history.values())


def test_every_task_contributes(table, task_vocabs):
    state, streams = _setup(table, task_vocabs, steps=1)
    tr.run(state, streams, LossWeights())
    assert set(state.history) == set(TaskKind)
    assert all(h[0] > 0 for h in state.history.values())


def test_repeated_step_descends(table, task_vocabs):
    state, streams = _setup(table, task_vocabs, steps=20)
    collate = tr.Collator(state.model)
    batches = {t: collate(t, s) for t, s in tr.next_batches(streams, 0).items()}
    losses = [tr.train_step(state, batches, LossWeights())[0] for _ in range(20)]
    assert losses[-1] < losses[0]


def test_numeric_failure_names_task(table, task_vocabs):
    state, streams = _setup(table, task_vocabs, steps=2, tasks=(TaskKind.DE, TaskKind.OCR))
    with torch.no_grad():
        state.model.pixel_proj.weight.fill_(float("nan"))
    collate = tr.Collator(state.model)
    batches = {t: collate(t, s) for t, s in tr.next_batches(streams, 0).items()}
    with pytest.raises(tr.NumericFailure) as info:
        tr.train_step(state, batches, LossWeights())
    assert info.value.task is TaskKind.DE


def test_resume_continues_trace(table, task_vocabs, tmp_path):
    full, s_full = _setup(table, task_vocabs, steps=4)
    tr.run(full, s_full, LossWeights())

    part, s_part = _setup(table, task_vocabs, steps=4)
    tr.run(part, s_part, LossWeights(), until=2)
    tensors = tr.state_tensors(part)
    meta = {"train": tr.train_meta(part)}
    resumed, s_res = _setup(table, task_vocabs, steps=4, seed=0)
    tr.restore_state(resumed, tensors, meta)
    assert resumed.step == 2
    tr.run(resumed, s_res, LossWeights())
    assert resumed.total_history == full.total_history


def test_log_written(table, task_vocabs, tmp_path):
    state, streams = _setup(table, task_vocabs, steps=3)
    tr.run(state, streams, LossWeights(), log_path=tmp_path / "log.tsv")
    lines = (tmp_path / "log.tsv").read_text().splitlines()
    assert lines[0].split("\t") == ["step", "lr"] + [f"loss_{t.value}" for t in TaskKind] + ["total"]
    assert len(lines) == 4
