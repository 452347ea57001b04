"""Scoring suite: PQ, depth RMSE, OCR accuracy, BLEU-1, CIDEr-D, VQA accuracy,
and parameter counting for the efficiency axis."""

from __future__ import annotations

import itertools
import math
import re
import string
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from atbench.tokenization import normalize_character

VOID = 0


@dataclass
class PanopticMap:
    """Per-pixel segment ids (0 = void) plus a table id -> (class id, is_thing)."""

    ids: np.ndarray
    segments: Dict[int, Tuple[int, bool]]

    def __post_init__(self) -> None:
        self.ids = np.asarray(self.ids, dtype=np.int64)
        present = set(np.unique(self.ids).tolist()) - {VOID}
        missing = present - set(self.segments)
        if missing:
            raise ValueError(f"segment ids {sorted(missing)} missing from segment table")
        if any(k <= 0 for k in self.segments):
            raise ValueError("segment ids must be positive integers")


@dataclass
class PQResult:
    pq: float
    sq: float
    rq: float
    per_class: Dict[int, float] = field(default_factory=dict)


def panoptic_quality(preds: Sequence[PanopticMap], gts: Sequence[PanopticMap]) -> PQResult:
    """Dataset-level panoptic quality.

    Segments of the same class match when IoU > 0.5 (strict). Pixels that are
    void in the ground truth are left out of every IoU. Per-class PQ is
    averaged over the classes present in the ground truth.
    """
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions vs {len(gts)} ground-truth maps")
    iou_sum: Dict[int, float] = defaultdict(float)
    tp: Dict[int, int] = defaultdict(int)
    fp: Dict[int, int] = defaultdict(int)
    fn: Dict[int, int] = defaultdict(int)
    gt_classes = set()

    for pred, gt in zip(preds, gts):
        if pred.ids.shape != gt.ids.shape:
            raise ValueError(f"shape mismatch: prediction {pred.ids.shape} vs ground truth {gt.ids.shape}")
        valid = gt.ids != VOID
        p_ids = pred.ids[valid]
        g_ids = gt.ids[valid]
        p_area = Counter(p_ids.tolist())
        g_area = Counter(g_ids.tolist())
        inter = Counter(zip(p_ids.tolist(), g_ids.tolist()))

        matched_p, matched_g = set(), set()
        for (pid, gid), n in inter.items():
            if pid == VOID:
                continue
            pcls = pred.segments[pid][0]
            gcls = gt.segments[gid][0]
            if pcls != gcls:
                continue
            union = p_area[pid] + g_area[gid] - n
            iou = n / union
            if iou > 0.5:
                matched_p.add(pid)
                matched_g.add(gid)
                iou_sum[gcls] += iou
                tp[gcls] += 1
        for gid in g_area:
            cls = gt.segments[gid][0]
            gt_classes.add(cls)
            if gid not in matched_g:
                fn[cls] += 1
        for pid in p_area:
            if pid == VOID or pid in matched_p:
                continue
            fp[pred.segments[pid][0]] += 1

    per_class: Dict[int, float] = {}
    sq_vals, rq_vals = [], []
    for cls in sorted(gt_classes):
        denom = tp[cls] + 0.5 * fp[cls] + 0.5 * fn[cls]
        per_class[cls] = iou_sum[cls] / denom if denom else 0.0
        sq_vals.append(iou_sum[cls] / tp[cls] if tp[cls] else 0.0)
        rq_vals.append(tp[cls] / denom if denom else 0.0)
    if not per_class:
        return PQResult(0.0, 0.0, 0.0, {})
    return PQResult(
        pq=float(np.mean(list(per_class.values()))),
        sq=float(np.mean(sq_vals)),
        rq=float(np.mean(rq_vals)),
        per_class=per_class,
    )


def depth_rmse(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray]) -> float:
    """RMSE in meters pooled over every valid (gt > 0) pixel of the dataset."""
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions vs {len(gts)} ground-truth maps")
    sq_err = 0.0
    count = 0
    for pred, gt in zip(preds, gts):
        pred = np.asarray(pred, dtype=np.float64)
        gt = np.asarray(gt, dtype=np.float64)
        if pred.shape != gt.shape:
            raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
        valid = gt > 0
        sq_err += float(np.sum((pred[valid] - gt[valid]) ** 2))
        count += int(valid.sum())
    if count == 0:
        raise ValueError("no valid ground-truth depth pixels")
    return math.sqrt(sq_err / count)


def ocr_accuracy(preds: Sequence[str], gts: Sequence[str]) -> float:
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions vs {len(gts)} labels")
    if not gts:
        raise ValueError("empty OCR evaluation set")
    hits = sum(normalize_character(p) == normalize_character(g) for p, g in zip(preds, gts))
    return hits / len(gts)


_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def caption_tokens(text: str) -> List[str]:
    return text.lower().translate(_PUNCT_TABLE).split()


def _check_captions(candidates: Mapping, references: Mapping) -> List:
    if not candidates:
        raise ValueError("no candidate captions")
    keys = sorted(candidates)
    for k in keys:
        if k not in references or not references[k]:
            raise ValueError(f"image {k!r} has no reference captions")
    return keys


def bleu1(candidates: Mapping[str, str], references: Mapping[str, Sequence[str]]) -> float:
    """Corpus BLEU with unigram precision only.

    ``candidates`` maps image id to one caption, ``references`` maps image id to
    a list of reference captions.
    """
    keys = _check_captions(candidates, references)
    clipped = 0
    cand_len = 0
    ref_len = 0
    for k in keys:
        cand = caption_tokens(candidates[k])
        refs = [caption_tokens(r) for r in references[k]]
        counts = Counter(cand)
        max_ref: Counter = Counter()
        for r in refs:
            for tok, n in Counter(r).items():
                max_ref[tok] = max(max_ref[tok], n)
        clipped += sum(min(n, max_ref[tok]) for tok, n in counts.items())
        cand_len += len(cand)
        # closest reference length, shorter wins ties
        ref_len += min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
    if cand_len == 0:
        return 0.0
    precision = clipped / cand_len
    bp = min(1.0, math.exp(1.0 - ref_len / cand_len))
    return precision * bp


def _ngrams(tokens: Sequence[str], n_max: int) -> Counter:
    counts: Counter = Counter()
    for n in range(1, n_max + 1):
        for i in range(len(tokens) - n + 1):
            counts[tuple(tokens[i : i + n])] += 1
    return counts


def cider(
    candidates: Mapping[str, str],
    references: Mapping[str, Sequence[str]],
    n: int = 4,
    sigma: float = 6.0,
) -> float:
    """CIDEr-D: clipped TF-IDF n-gram cosine (n = 1..4), Gaussian length
    penalty, averaged over references and scaled by 10. IDF comes from the
    reference corpus."""
    keys = _check_captions(candidates, references)
    if len(keys) < 2:
        raise ValueError("CIDEr needs at least two images to define document frequencies")

    cand_counts = {k: _ngrams(caption_tokens(candidates[k]), n) for k in keys}
    ref_counts = {k: [_ngrams(caption_tokens(r), n) for r in references[k]] for k in keys}
    cand_lens = {k: len(caption_tokens(candidates[k])) for k in keys}
    ref_lens = {k: [len(caption_tokens(r)) for r in references[k]] for k in keys}

    doc_freq: Counter = Counter()
    for k in keys:
        doc_freq.update(set(itertools.chain.from_iterable(ref_counts[k])))
    log_n_images = math.log(float(len(keys)))

    def tfidf(counts: Counter):
        vec: List[Dict[tuple, float]] = [{} for _ in range(n)]
        norm = [0.0] * n
        for gram, tf in counts.items():
            w = tf * (log_n_images - math.log(max(1.0, doc_freq[gram])))
            vec[len(gram) - 1][gram] = w
            norm[len(gram) - 1] += w * w
        return vec, [math.sqrt(x) for x in norm]

    scores = []
    for k in keys:
        vec_c, norm_c = tfidf(cand_counts[k])
        total = np.zeros(n)
        for counts, rlen in zip(ref_counts[k], ref_lens[k]):
            vec_r, norm_r = tfidf(counts)
            penalty = math.exp(-((cand_lens[k] - rlen) ** 2) / (2 * sigma**2))
            for i in range(n):
                val = sum(min(w, vec_r[i].get(g, 0.0)) * vec_r[i].get(g, 0.0) for g, w in vec_c[i].items())
                if norm_c[i] != 0 and norm_r[i] != 0:
                    val /= norm_c[i] * norm_r[i]
                total[i] += val * penalty
        scores.append(float(np.mean(total)) / len(ref_counts[k]) * 10.0)
    return float(np.mean(scores))


_ARTICLES = {"a", "an", "the"}
_VQA_PUNCT = re.compile(r"[^\w\s]")


def normalize_answer(answer: str) -> str:
    text = _VQA_PUNCT.sub("", answer.lower())
    return " ".join(w for w in text.split() if w not in _ARTICLES)


def vqa_accuracy(pred_answers: Sequence[str], annotator_answers: Sequence[Sequence[str]]) -> float:
    """Consensus accuracy: min(#matching annotators / 3, 1) averaged over the
    ten leave-one-annotator-out subsets, then over questions."""
    if len(pred_answers) != len(annotator_answers):
        raise ValueError(f"{len(pred_answers)} predictions vs {len(annotator_answers)} questions")
    if not pred_answers:
        raise ValueError("empty VQA evaluation set")
    accs = []
    for pred, answers in zip(pred_answers, annotator_answers):
        if len(answers) != 10:
            raise ValueError(f"expected 10 annotator answers, got {len(answers)}")
        pred_n = normalize_answer(pred)
        hits = [normalize_answer(a) == pred_n for a in answers]
        folds = []
        for leave_out in range(10):
            matches = sum(h for i, h in enumerate(hits) if i != leave_out)
            folds.append(min(matches / 3.0, 1.0))
        accs.append(sum(folds) / 10.0)
    return float(np.mean(accs))


def count_parameters(model) -> Dict[str, int]:
    """Scalar parameter count per top-level submodule plus a ``total`` key."""
    breakdown: Dict[str, int] = defaultdict(int)
    seen = set()
    for name, p in model.named_parameters():
        if id(p) in seen:
            continue
        seen.add(id(p))
        breakdown[name.split(".", 1)[0]] += p.numel()
    result = dict(sorted(breakdown.items()))
    result["total"] = sum(breakdown.values())
    return result


@dataclass
class MetricReport:
    """Scores per task plus the parameter count of the evaluated model."""

    scores: Dict[str, float]
    parameters: int
    parameter_breakdown: Dict[str, int] = field(default_factory=dict)
    eval_seconds: Optional[float] = None

    RANGES = {
        "pq": (0.0, 1.0),
        "sq": (0.0, 1.0),
        "rq": (0.0, 1.0),
        "ocr_acc": (0.0, 1.0),
        "bleu1": (0.0, 1.0),
        "vqa_acc": (0.0, 1.0),
        "cider": (0.0, math.inf),
        "rmse": (0.0, math.inf),
    }

    def validate(self) -> None:
        for name, value in self.scores.items():
            lo, hi = self.RANGES.get(name, (-math.inf, math.inf))
            if not (lo <= value <= hi):
                raise ValueError(f"metric {name}={value} outside [{lo}, {hi}]")
        if self.parameters < 0:
            raise ValueError("negative parameter count")

    def to_tsv(self) -> str:
        """Tab-separated report; wall-clock time is deliberately left out so the
        file is byte-identical across repeated runs."""
        lines = ["metric\tvalue"]
        for name in sorted(self.scores):
            lines.append(f"{name}\t{self.scores[name]:.6f}")
        lines.append(f"parameters\t{self.parameters}")
        for name, n in self.parameter_breakdown.items():
            if name != "total":
                lines.append(f"parameters.{name}\t{n}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_tsv(cls, text: str) -> "MetricReport":
        scores: Dict[str, float] = {}
        breakdown: Dict[str, int] = {}
        params = 0
        for line in text.strip().splitlines()[1:]:
            key, value = line.split("\t")
            if key == "parameters":
                params = int(value)
            elif key.startswith("parameters."):
                breakdown[key.split(".", 1)[1]] = int(value)
            else:
                scores[key] = float(value)
        return cls(scores, params, breakdown)
