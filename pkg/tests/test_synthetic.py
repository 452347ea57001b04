from collections import Counter

import numpy as np
import pytest

from atbench import synthetic as S
from atbench.font5x7 import GLYPHS
from atbench.tokenization import MAX_TEXT_LEN, TaskKind, prompt_for


def test_class_inventory():
    assert S.NUM_CLASSES == 26
    assert len(S.THING_CLASSES) == 24
    assert S.CLASS_NAMES[-1] == "background"
    assert S.CLASS_NAMES[S.STUFF_CLASS] == "ground"


def test_glyphs_distinct_and_complete():
    assert set(GLYPHS) == set(S.OCR_ALPHABET)
    assert len({tuple(g) for g in GLYPHS.values()}) == len(GLYPHS)
    assert all(len(g) == 7 and all(len(row) == 5 for row in g) for g in GLYPHS.values())


@pytest.mark.parametrize("task", list(TaskKind))
def test_generate_deterministic(task):
    a = S.generate(task, 3, seed=7)
    b = S.generate(task, 3, seed=7)
    for x, y in zip(a, b):
        assert x.uid == y.uid
        assert np.array_equal(x.image, y.image)
        assert x.prompt == y.prompt
    assert a[0].image.shape == (64, 64, 3)
    assert a[0].image.min() >= 0 and a[0].image.max() <= 1


def test_generate_count_error():
    with pytest.raises(ValueError):
        S.generate(TaskKind.OCR, 0, 1)


def test_prompts_match_tasks():
    for task in TaskKind:
        for s in S.generate(task, 4, 1):
            q = s.target["question"] if task is TaskKind.VQA else None
            assert s.prompt == prompt_for(task, q)


def test_panoptic_disjoint_cover():
    for s in S.generate(TaskKind.PS, 10, 3):
        ids = s.target.ids
        assert (ids > 0).all()
        assert set(np.unique(ids)) == set(s.target.segments)
        assert len(s.scene.shapes) >= 1
        for k, (cls, thing) in s.target.segments.items():
            assert thing == (cls != S.STUFF_CLASS)


def test_depth_piecewise_constant():
    for s in S.generate(TaskKind.DE, 10, 3):
        planes = {s.scene.background_depth} | {sh.depth for sh in s.scene.shapes}
        assert set(np.unique(s.target).tolist()) <= {np.float32(p) for p in planes}
        assert all(0.5 <= p <= 9.5 for p in planes)


def test_labels_recoverable_from_pixels():
    for s in S.generate(TaskKind.PS, 10, 4):
        image, seg, depth = S.render_scene(s.scene)
        colors, est = S.derive_labels(image)
        for i, shape in enumerate(s.scene.shapes):
            mask = seg == i + 2
            assert (colors[mask] == S.COLORS.index(shape.color)).all()
        assert (colors[seg == 1] == -1).all()
        assert np.abs(est - depth).max() < 0.06  # 8-bit quantization of brightness


def test_cross_task_scenes_shared():
    ps = S.generate(TaskKind.PS, 3, 9)
    ic = S.generate(TaskKind.IC, 3, 9)
    vqa = S.generate(TaskKind.VQA, 3, 9)
    for a, b, c in zip(ps, ic, vqa):
        assert a.scene == b.scene == c.scene
        assert np.array_equal(a.image, b.image)


def test_captions_and_questions():
    for s in S.generate(TaskKind.IC, 10, 2):
        names = sorted(s.scene.shapes, key=lambda x: (x.cx, x.cy))
        assert names[0].name in s.target[0]
    for s in S.generate(TaskKind.VQA, 20, 2):
        assert s.target["answers"] == [s.target["answer"]] * 10
        assert s.target["type"] in ("color", "count", "presence")


def test_vqa_disagreement():
    for s in S.generate(TaskKind.VQA, 10, 2, vqa_disagreement=3):
        c = Counter(s.target["answers"])
        assert c[s.target["answer"]] == 7


def test_ocr_text_and_render():
    for s in S.generate(TaskKind.OCR, 20, 5):
        assert 3 <= len(s.target) <= 10 <= MAX_TEXT_LEN
        assert set(s.target) <= set(S.OCR_ALPHABET)
    a = S.render_text("ab")
    b = S.render_text("ba")
    assert not np.array_equal(a, b)
    assert S.render_text("a" * 15).shape == (64, 64, 3)


def test_split_contract():
    items = list(range(100))
    parts = S.split(items, (0.8, 0.1, 0.1), seed=3)
    assert [len(p) for p in parts] == [80, 10, 10]
    assert sorted(sum(parts, [])) == items
    assert parts == S.split(items, (0.8, 0.1, 0.1), seed=3)
    with pytest.raises(ValueError):
        S.split(items, (1.0, 0.0))
    with pytest.raises(ValueError):
        S.split(items, (0.5, 0.4))


def test_downsample_point_samples_centres():
    arr = np.arange(64).reshape(8, 8)
    assert np.array_equal(S.downsample(arr), arr[2::4, 2::4])
    assert np.array_equal(S.downsample(arr, 1), arr)
