"""Deterministic synthetic micro-datasets for the five tasks.

Every scene is a grey backdrop with up to ``max_shapes`` coloured, non-overlapping
shapes. Each shape (and the backdrop) sits on a constant-depth plane; pixel
brightness falls off linearly with depth, so depth is recoverable from the image.
Scene ``i`` of a given seed is the same for PS, DE, IC and VQA.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from atbench.font5x7 import GLYPHS
from atbench.metrics import PanopticMap
from atbench.tokenization import MAX_TEXT_LEN, TaskKind, prompt_for

IMAGE_SIZE = 64
STRIDE = 4

PALETTE: Dict[str, Tuple[float, float, float]] = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "magenta": (1.0, 0.0, 1.0),
    "cyan": (0.0, 1.0, 1.0),
    "orange": (1.0, 0.5, 0.0),
    "purple": (0.5, 0.0, 1.0),
}
COLORS = tuple(PALETTE)
KINDS = ("square", "circle", "triangle")

# 24 thing classes, one stuff class, then the no-object row.
THING_CLASSES = [f"{c} {k}" for c in COLORS for k in KINDS]
STUFF_CLASS = len(THING_CLASSES)
NO_OBJECT = STUFF_CLASS + 1
CLASS_NAMES = THING_CLASSES + ["ground", "background"]
NUM_CLASSES = len(CLASS_NAMES)

MIN_DEPTH_PLANE, MAX_DEPTH_PLANE = 0.5, 9.5
NUMBER_WORDS = ("zero", "one", "two", "three", "four", "five", "six", "seven", "eight")

_TASK_INDEX = {t: i for i, t in enumerate(TaskKind)}


def class_id(color: str, kind: str) -> int:
    return COLORS.index(color) * len(KINDS) + KINDS.index(kind)


def brightness(depth: float) -> float:
    return 1.0 - 0.075 * (depth - MIN_DEPTH_PLANE)


def quantize(x: np.ndarray) -> np.ndarray:
    # keeps images exact under 8-bit PNG round trips
    return (np.round(np.asarray(x, dtype=np.float64) * 255.0) / 255.0).astype(np.float32)


@dataclass(frozen=True)
class Shape:
    kind: str
    color: str
    cx: float
    cy: float
    size: int
    depth: float

    @property
    def class_id(self) -> int:
        return class_id(self.color, self.kind)

    @property
    def name(self) -> str:
        return f"{self.color} {self.kind}"


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    index: int
    height: int
    width: int
    background_depth: float
    shapes: Tuple[Shape, ...]


@dataclass
class TaskSample:
    task: TaskKind
    uid: str
    image: np.ndarray
    prompt: str
    target: Any
    scene: Optional[SceneSpec] = None
    meta: Dict[str, Any] = field(default_factory=dict)


def _shape_mask(shape: Shape, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64) + 0.5
    half = shape.size / 2.0
    dx, dy = xx - shape.cx, yy - shape.cy
    if shape.kind == "square":
        return (np.abs(dx) <= half) & (np.abs(dy) <= half)
    if shape.kind == "circle":
        return dx * dx + dy * dy <= half * half
    # upward triangle inside the bounding box
    top = shape.cy - half
    rel = (yy - top) / shape.size
    return (rel >= 0) & (rel <= 1) & (np.abs(dx) <= half * rel)


def sample_scene(seed: int, index: int, max_shapes: int = 4, size_range=(12, 20), image_size: int = IMAGE_SIZE) -> SceneSpec:
    if not 1 <= max_shapes <= 8:
        raise ValueError("max_shapes must lie in [1, 8]")
    rng = np.random.default_rng([seed, index, 1000])
    h = w = image_size
    target = int(rng.integers(1, max_shapes + 1))
    bg_depth = float(np.round(rng.uniform(6.0, MAX_DEPTH_PLANE), 2))
    shapes: List[Shape] = []
    boxes: List[Tuple[float, float, float, float]] = []
    attempts = 0
    while len(shapes) < target and attempts < 200:
        attempts += 1
        size = int(rng.integers(size_range[0], size_range[1] + 1))
        cx = float(rng.integers(size // 2 + 1, w - size // 2 - 1)) + (size % 2) * 0.5
        cy = float(rng.integers(size // 2 + 1, h - size // 2 - 1)) + (size % 2) * 0.5
        box = (cx - size / 2, cy - size / 2, cx + size / 2, cy + size / 2)
        gap = 4.0
        if any(
            box[0] < b[2] + gap and b[0] < box[2] + gap and box[1] < b[3] + gap and b[1] < box[3] + gap
            for b in boxes
        ):
            continue
        boxes.append(box)
        shapes.append(
            Shape(
                kind=KINDS[int(rng.integers(len(KINDS)))],
                color=COLORS[int(rng.integers(len(COLORS)))],
                cx=cx,
                cy=cy,
                size=size,
                depth=float(np.round(rng.uniform(MIN_DEPTH_PLANE, bg_depth - 0.5), 2)),
            )
        )
    return SceneSpec(seed, index, h, w, bg_depth, tuple(shapes))


def render_scene(scene: SceneSpec) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (image HxWx3 in [0,1], segment-id map, depth map) at full resolution.

    Segment id 1 is the backdrop; shapes get ids 2, 3, ... in scene order.
    """
    h, w = scene.height, scene.width
    g = brightness(scene.background_depth)
    image = np.full((h, w, 3), g, dtype=np.float64)
    seg = np.ones((h, w), dtype=np.int64)
    depth = np.full((h, w), scene.background_depth, dtype=np.float32)
    for i, shape in enumerate(scene.shapes):
        mask = _shape_mask(shape, h, w)
        image[mask] = np.asarray(PALETTE[shape.color]) * brightness(shape.depth)
        seg[mask] = i + 2
        depth[mask] = shape.depth
    return quantize(image), seg, depth


def scene_panoptic(scene: SceneSpec, seg: np.ndarray) -> PanopticMap:
    table = {1: (STUFF_CLASS, False)}
    for i, shape in enumerate(scene.shapes):
        table[i + 2] = (shape.class_id, True)
    present = set(np.unique(seg).tolist())
    return PanopticMap(seg, {k: v for k, v in table.items() if k in present})


def downsample(arr: np.ndarray, stride: int = STRIDE) -> np.ndarray:
    """Point-samples the pixel nearest each stride cell's centre."""
    off = stride // 2
    return np.ascontiguousarray(arr[off::stride, off::stride])


def downsample_panoptic(pmap: PanopticMap, stride: int = STRIDE) -> PanopticMap:
    ids = downsample(pmap.ids, stride)
    present = set(np.unique(ids).tolist())
    return PanopticMap(ids, {k: v for k, v in pmap.segments.items() if k in present})


def derive_labels(image: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Recovers (color index map, -1 for backdrop) and a depth map from pixels alone."""
    img = np.asarray(image, dtype=np.float64)
    peak = img.max(axis=-1)
    grey = (img.max(axis=-1) - img.min(axis=-1)) < 1e-6
    chroma = img / np.maximum(peak[..., None], 1e-6)
    pal = np.asarray([PALETTE[c] for c in COLORS])
    dist = ((chroma[..., None, :] - pal) ** 2).sum(-1)
    colors = np.where(grey, -1, dist.argmin(-1))
    depth = MIN_DEPTH_PLANE + (1.0 - peak) / 0.075
    return colors, depth


def caption_for(scene: SceneSpec) -> List[str]:
    order = sorted(scene.shapes, key=lambda s: (s.cx, s.cy))
    if len(order) == 1:
        return [f"a {order[0].name}", f"one {order[0].name}"]
    a, b = order[0], order[1]
    return [f"a {a.name} left of a {b.name}", f"a {b.name} right of a {a.name}"]


def question_for(scene: SceneSpec, rng: np.random.Generator) -> Tuple[str, str, str]:
    """Returns (question type, question, answer)."""
    kind = ("color", "count", "presence")[int(rng.integers(3))]
    if kind == "color":
        leftmost = min(scene.shapes, key=lambda s: (s.cx, s.cy))
        return kind, "what color is the leftmost shape?", leftmost.color
    if kind == "count":
        return kind, "how many shapes are there?", NUMBER_WORDS[len(scene.shapes)]
    present = {s.name for s in scene.shapes}
    if rng.random() < 0.5:
        name = sorted(present)[int(rng.integers(len(present)))]
    else:
        absent = [n for n in THING_CLASSES if n not in present]
        name = absent[int(rng.integers(len(absent)))]
    return kind, f"is there a {name}?", "yes" if name in present else "no"


def _divergent_answers(answer: str, qtype: str, k: int, rng: np.random.Generator) -> List[str]:
    pool = {"color": list(COLORS), "count": list(NUMBER_WORDS[1:]), "presence": ["yes", "no"]}[qtype]
    pool = [a for a in pool if a != answer]
    return [pool[int(rng.integers(len(pool)))] for _ in range(k)]


OCR_ALPHABET = string.ascii_lowercase + string.digits
OCR_COLS, OCR_ROWS = 5, 3
CELL_W, CELL_H = 12, 20
GLYPH_SCALE = 2


def random_text(rng: np.random.Generator, min_len: int = 3, max_len: int = 10) -> str:
    n = int(rng.integers(min_len, max_len + 1))
    return "".join(OCR_ALPHABET[int(rng.integers(len(OCR_ALPHABET)))] for _ in range(n))


def render_text(text: str, jitter: int = 0, rng: Optional[np.random.Generator] = None, image_size: int = IMAGE_SIZE) -> np.ndarray:
    """Draws ``text`` as a grid of 5x7 glyphs (5 per row, 3 rows), dark on light."""
    if len(text) > MAX_TEXT_LEN:
        raise ValueError(f"text longer than {MAX_TEXT_LEN} characters")
    ink = np.zeros((image_size, image_size), dtype=bool)
    x0 = (image_size - OCR_COLS * CELL_W) // 2
    y0 = (image_size - OCR_ROWS * CELL_H) // 2
    for i, ch in enumerate(text):
        row, col = divmod(i, OCR_COLS)
        ox = x0 + col * CELL_W + 1
        oy = y0 + row * CELL_H + 3
        if jitter and rng is not None:
            ox += int(rng.integers(-jitter, jitter + 1))
            oy += int(rng.integers(-jitter, jitter + 1))
        glyph = np.array([[c == "#" for c in line] for line in GLYPHS[ch]])
        big = np.kron(glyph, np.ones((GLYPH_SCALE, GLYPH_SCALE), dtype=bool))
        gh, gw = big.shape
        ys, xs = slice(max(oy, 0), min(oy + gh, image_size)), slice(max(ox, 0), min(ox + gw, image_size))
        ink[ys, xs] |= big[ys.start - oy : ys.stop - oy, xs.start - ox : xs.stop - ox]
    image = np.where(ink[..., None], 0.1, 0.9) * np.ones(3)
    return quantize(image)


def generate(
    task: "TaskKind | str",
    count: int,
    seed: int,
    *,
    start: int = 0,
    max_shapes: int = 4,
    ocr_len: Tuple[int, int] = (3, 10),
    ocr_jitter: int = 0,
    vqa_disagreement: int = 0,
) -> List[TaskSample]:
    """Builds ``count`` samples for ``task``; sample ``i`` depends only on (task, seed, start + i)."""
    task = TaskKind.parse(task)
    if count < 1:
        raise ValueError("count must be at least 1")
    samples = []
    for index in range(start, start + count):
        uid = f"{task.value}-{seed}-{index:06d}"
        rng = np.random.default_rng([seed, index, _TASK_INDEX[task]])
        if task is TaskKind.OCR:
            text = random_text(rng, *ocr_len)
            image = render_text(text, ocr_jitter, rng)
            samples.append(TaskSample(task, uid, image, prompt_for(task), text))
            continue
        scene = sample_scene(seed, index, max_shapes=max_shapes)
        image, seg, depth = render_scene(scene)
        if task is TaskKind.PS:
            target: Any = scene_panoptic(scene, seg)
            prompt = prompt_for(task)
        elif task is TaskKind.DE:
            target = depth
            prompt = prompt_for(task)
        elif task is TaskKind.IC:
            target = caption_for(scene)
            prompt = prompt_for(task)
        else:
            qtype, question, answer = question_for(scene, rng)
            answers = [answer] * 10
            if vqa_disagreement:
                k = min(vqa_disagreement, 10)
                answers[:k] = _divergent_answers(answer, qtype, k, rng)
            target = {"question": question, "answer": answer, "answers": answers, "type": qtype}
            prompt = prompt_for(task, question)
        samples.append(TaskSample(task, uid, image, prompt, target, scene))
    return samples


def split(samples: Sequence, fractions: Sequence[float], seed: int = 0) -> Tuple[list, ...]:
    """Seeded, disjoint and exhaustive partition into ``len(fractions)`` parts."""
    if any(f <= 0 for f in fractions):
        raise ValueError("every split fraction must be positive")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions sum to {sum(fractions)}, expected 1")
    n = len(samples)
    order = np.random.default_rng(seed).permutation(n)
    sizes = [int(round(f * n)) for f in fractions[:-1]]
    sizes.append(n - sum(sizes))
    if sizes[-1] < 0:
        raise ValueError("fractions round to more samples than available")
    parts, pos = [], 0
    for size in sizes:
        parts.append([samples[i] for i in order[pos : pos + size]])
        pos += size
    return tuple(parts)


def text_corpus() -> List[str]:
    """Every caption, question, answer, class name and prompt string the
    generators can emit, for building the subword vocabulary."""
    corpus: List[str] = list(CLASS_NAMES) + [prompt_for(t) for t in TaskKind if t is not TaskKind.VQA]
    corpus += list(NUMBER_WORDS) + ["yes", "no", "what color is the leftmost shape?", "how many shapes are there?"]
    corpus += [f"is there a {n}?" for n in THING_CLASSES]
    for a in THING_CLASSES:
        corpus += [f"a {a}", f"one {a}"]
        for b in THING_CLASSES:
            corpus += [f"a {a} left of a {b}", f"a {a} right of a {b}"]
    corpus.append(" ".join(OCR_ALPHABET))
    return corpus
