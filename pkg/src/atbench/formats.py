"""On-disk formats for datasets, predictions and reports.

Layout of a data directory (one subdirectory per task)::

    <task>/samples.jsonl        one JSON record per sample (id, image path, prompt, text targets)
    <task>/images/<id>.png      8-bit RGB input image
    ps/gt/<id>.png              16-bit grayscale segment ids, 0 = void
    ps/gt/<id>.json             segment table {"<id>": {"class": c, "isthing": b}}
    de/gt/<id>.depth            16-byte header (b"ATDEPTH\\0", H, W as uint32 LE) + float32 LE raster
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

import numpy as np
from PIL import Image

from atbench.metrics import PanopticMap
from atbench.synthetic import TaskSample
from atbench.tokenization import TaskKind, prompt_for

DEPTH_MAGIC = b"ATDEPTH\0"


class DataError(Exception):
    pass


def write_depth(path: Path, depth: np.ndarray) -> None:
    depth = np.asarray(depth, dtype="<f4")
    if depth.ndim != 2:
        raise ValueError("depth raster must be 2-D")
    h, w = depth.shape
    path.write_bytes(DEPTH_MAGIC + struct.pack("<II", h, w) + depth.tobytes())


def read_depth(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != DEPTH_MAGIC:
        raise DataError(f"{path}: not a depth raster")
    h, w = struct.unpack_from("<II", raw, 8)
    if len(raw) != 16 + 4 * h * w:
        raise DataError(f"{path}: expected {h}x{w} floats")
    return np.frombuffer(raw, dtype="<f4", offset=16).reshape(h, w).astype(np.float32)


def write_panoptic(stem: Path, pmap: PanopticMap) -> None:
    ids = np.asarray(pmap.ids)
    if ids.max(initial=0) > 65535:
        raise ValueError("segment ids exceed 16 bits")
    Image.fromarray(ids.astype(np.uint16)).save(stem.with_suffix(".png"))
    table = {str(k): {"class": int(c), "isthing": bool(t)} for k, (c, t) in sorted(pmap.segments.items())}
    stem.with_suffix(".json").write_text(json.dumps(table, sort_keys=True) + "\n", encoding="utf-8")


def read_panoptic(stem: Path) -> PanopticMap:
    png, side = stem.with_suffix(".png"), stem.with_suffix(".json")
    if not png.exists() or not side.exists():
        raise DataError(f"missing panoptic files for {stem}")
    ids = np.asarray(Image.open(png), dtype=np.int64)
    table = json.loads(side.read_text(encoding="utf-8"))
    return PanopticMap(ids, {int(k): (int(v["class"]), bool(v["isthing"])) for k, v in table.items()})


def write_image(path: Path, image: np.ndarray) -> None:
    Image.fromarray(np.round(np.asarray(image) * 255.0).astype(np.uint8)).save(path)


def read_image(path: Path) -> np.ndarray:
    if not Path(path).exists():
        raise DataError(f"missing image {path}")
    return (np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0).astype(np.float32)


def write_jsonl(path: Path, records: Iterable[Dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path: Path) -> List[Dict]:
    if not Path(path).exists():
        raise DataError(f"missing {path}")
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_task_dir(root: Path, task: TaskKind, samples: Sequence[TaskSample]) -> Path:
    out = Path(root) / task.value
    (out / "images").mkdir(parents=True, exist_ok=True)
    if task in (TaskKind.PS, TaskKind.DE):
        (out / "gt").mkdir(exist_ok=True)
    records = []
    for s in samples:
        rec: Dict = {"id": s.uid, "image": f"images/{s.uid}.png", "prompt": s.prompt}
        write_image(out / rec["image"], s.image)
        if task is TaskKind.PS:
            write_panoptic(out / "gt" / s.uid, s.target)
        elif task is TaskKind.DE:
            write_depth(out / "gt" / f"{s.uid}.depth", s.target)
        elif task is TaskKind.OCR:
            rec["text"] = s.target
        elif task is TaskKind.IC:
            rec["text"] = s.target[0]
            rec["references"] = list(s.target)
        else:
            rec.update(question=s.target["question"], answers=list(s.target["answers"]), text=s.target["answer"])
            rec["type"] = s.target.get("type", "")
        records.append(rec)
    write_jsonl(out / "samples.jsonl", records)
    return out


def read_task_dir(root: Path, task: TaskKind) -> List[TaskSample]:
    base = Path(root) / task.value
    if not base.is_dir():
        raise DataError(f"no {task.value} data under {root}")
    samples = []
    for rec in read_jsonl(base / "samples.jsonl"):
        uid = rec["id"]
        image = read_image(base / rec["image"])
        if task is TaskKind.PS:
            target = read_panoptic(base / "gt" / uid)
        elif task is TaskKind.DE:
            p = base / "gt" / f"{uid}.depth"
            if not p.exists():
                raise DataError(f"missing depth ground truth {p}")
            target = read_depth(p)
        elif task is TaskKind.OCR:
            target = _field(rec, "text", base)
        elif task is TaskKind.IC:
            target = list(_field(rec, "references", base))
        else:
            answers = list(_field(rec, "answers", base))
            target = {
                "question": _field(rec, "question", base),
                "answer": rec.get("text", answers[0]),
                "answers": answers,
                "type": rec.get("type", ""),
            }
        prompt = rec.get("prompt") or (prompt_for(task, target["question"]) if task is TaskKind.VQA else prompt_for(task))
        samples.append(TaskSample(task, uid, image, prompt, target))
    return samples


def _field(rec: Dict, key: str, base: Path):
    if key not in rec:
        raise DataError(f"record {rec.get('id')} in {base} lacks ground-truth field {key!r}")
    return rec[key]


def write_predictions(root: Path, task: TaskKind, uids: Sequence[str], values: Sequence) -> None:
    """Token tasks: ``<task>.jsonl`` of {id, text}; PS/DE: one file per sample under ``<task>/``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    if task in (TaskKind.PS, TaskKind.DE):
        sub = root / task.value
        sub.mkdir(exist_ok=True)
        for uid, v in zip(uids, values):
            if task is TaskKind.PS:
                write_panoptic(sub / uid, v)
            else:
                write_depth(sub / f"{uid}.depth", v)
    else:
        write_jsonl(root / f"{task.value}.jsonl", ({"id": u, "text": v} for u, v in zip(uids, values)))


def read_predictions(root: Path, task: TaskKind, uids: Sequence[str]) -> List:
    root = Path(root)
    if task is TaskKind.PS:
        return [read_panoptic(root / task.value / uid) for uid in uids]
    if task is TaskKind.DE:
        out = []
        for uid in uids:
            p = root / task.value / f"{uid}.depth"
            if not p.exists():
                raise DataError(f"missing depth prediction {p}")
            out.append(read_depth(p))
        return out
    recs = {r["id"]: r["text"] for r in read_jsonl(root / f"{task.value}.jsonl")}
    missing = [u for u in uids if u not in recs]
    if missing:
        raise DataError(f"no {task.value} prediction for {missing[:3]}")
    return [recs[u] for u in uids]
