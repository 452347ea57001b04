"""``atbench`` command line: data generation, training, evaluation, reports.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch

from atbench import formats, plotting
from atbench import synthetic as syn
from atbench.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from atbench.config import ConfigError, RunConfig, load_config, parse_config
from atbench.evaluation import Predictions, evaluate, predict, score
from atbench.formats import DataError
from atbench.metrics import MetricReport
from atbench.model import AtModel, ModelConfig
from atbench.tokenization import (
    Mode,
    TaskKind,
    Vocabulary,
    build_limited_vocab,
    build_subword_vocab,
)
from atbench import trainer as tr

logger = logging.getLogger("atbench")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

ABLATION_ROWS = (("subword", "complete"), ("character", "complete"), ("character", "limited"))


# ---------------------------------------------------------------------------
# building blocks shared by the commands


def build_vocabs(cfg: RunConfig) -> Tuple[Vocabulary, Dict[TaskKind, Tuple[Vocabulary, Mode]]]:
    """The shared embedding table plus the (vocabulary, mode) of each token task."""
    table = build_subword_vocab(syn.text_corpus(), cfg.vocab.subword_size)
    if cfg.vocab.ocr_vocab == "limited":
        ocr = build_limited_vocab()
    else:
        ocr = table
    task_vocabs = {
        TaskKind.OCR: (ocr, Mode(cfg.vocab.ocr_tokenizer)),
        TaskKind.IC: (table, Mode.SUBWORD),
        TaskKind.VQA: (table, Mode.SUBWORD),
    }
    return table, task_vocabs


def build_model(cfg: RunConfig) -> AtModel:
    table, task_vocabs = build_vocabs(cfg)
    return AtModel(cfg.model, table, task_vocabs, seed=cfg.seed)


def make_datasets(cfg: RunConfig, tasks: Sequence[TaskKind]) -> Dict[TaskKind, List[syn.TaskSample]]:
    d = cfg.data
    out = {}
    for task in tasks:
        out[task] = syn.generate(
            task,
            d.ocr_count if task is TaskKind.OCR else d.count,
            d.seed,
            max_shapes=d.max_shapes,
            ocr_len=(d.ocr_min_len, d.ocr_max_len),
            ocr_jitter=d.ocr_jitter,
            vqa_disagreement=d.vqa_disagreement,
        )
    return out


def checkpoint_meta(cfg: RunConfig, model: AtModel, state: Optional[tr.TrainState] = None) -> Dict:
    meta = {
        "config": cfg.to_text(include_out_dir=False),
        "model": model.config_dict(),
        "vocab": {
            "table": list(model.table.tokens),
            "tasks": {t.value: {"tokens": list(v.tokens), "name": v.name, "mode": m.value} for t, (v, m) in model.task_vocabs.items()},
        },
        "class_names": list(model.class_names),
    }
    if state is not None:
        meta["train"] = tr.train_meta(state)
    return meta


def model_from_checkpoint(path: Path) -> Tuple[AtModel, Dict, Dict[str, torch.Tensor]]:
    """Rebuilds a model (weights included) from a checkpoint file."""
    tensors, meta = load_checkpoint(path)
    try:
        mcfg = ModelConfig(**meta["model"])
        voc = meta["vocab"]
        table = Vocabulary(tuple(voc["table"]), "subword")
        task_vocabs = {}
        for name, entry in voc["tasks"].items():
            tokens = tuple(entry["tokens"])
            vocab = table if tokens == table.tokens else Vocabulary(tokens, entry["name"])
            task_vocabs[TaskKind(name)] = (vocab, Mode(entry["mode"]))
        model = AtModel(mcfg, table, task_vocabs, meta["class_names"])
        model.load_state_dict({k[len("model.") :]: v for k, v in tensors.items() if k.startswith("model.")})
    except (KeyError, TypeError, ValueError, RuntimeError) as exc:
        raise CheckpointError(f"{path}: inconsistent checkpoint ({exc})") from exc
    model.eval()
    return model, meta, tensors


def write_report(path: Path, report: MetricReport) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_tsv(), encoding="utf-8")


def read_log(path: Path) -> List[Dict[str, float]]:
    lines = path.read_text(encoding="utf-8").splitlines()
    if len(lines) < 2:
        return []
    head = lines[0].split("\t")
    return [dict(zip(head, map(float, ln.split("\t")))) for ln in lines[1:]]


def _sample_figure(model: AtModel, samples: Mapping[TaskKind, Sequence[syn.TaskSample]], path: Path, n: int = 4) -> None:
    pool = list(samples.get(TaskKind.PS, [])) or list(samples.get(TaskKind.DE, []))
    if not pool:
        return
    chosen = pool[:n]
    images = torch.from_numpy(np.stack([s.image for s in chosen]))
    with torch.no_grad():
        seg = [p.ids for p in model.predict_panoptic(images)]
        depth = list(model.predict_depth(images))
    plotting.pixel_examples([s.image for s in chosen], seg, depth, path)


# ---------------------------------------------------------------------------
# commands


def train_run(cfg: RunConfig, out: Path, resume: Optional[Path] = None, figures: bool = True) -> Tuple[AtModel, MetricReport]:
    """Full train + training-set evaluation; writes everything under ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    model = build_model(cfg)
    model.table.save(out / "vocab_table.txt")
    for task, (vocab, _) in model.task_vocabs.items():
        vocab.save(out / f"vocab_{task.value}.txt")
    data = make_datasets(cfg, cfg.train.tasks)
    major = cfg.train.major_task()
    total = cfg.train.resolve_steps(len(data[major]))
    state = tr.make_state(model, cfg.train, total)
    if resume is not None:
        tensors, meta = load_checkpoint(resume)
        if meta.get("config") != cfg.to_text(include_out_dir=False):
            raise ConfigError("--resume", f"{resume} was written with a different configuration")
        tr.restore_state(state, tensors, meta)
        logger.info("resumed at step %d of %d", state.step, total)
    streams = tr.make_streams(data, cfg.train)

    def save(st: tr.TrainState, name: str) -> None:
        save_checkpoint(out / f"{name}.ckpt", tr.state_tensors(st), checkpoint_meta(cfg, st.model, st))

    def progress(st: tr.TrainState, per: Dict[TaskKind, float], total_loss: float) -> None:
        if st.step % 100 == 0 or st.step == st.total_steps:
            logger.info("step %d/%d loss %.4f", st.step, st.total_steps, total_loss)

    tr.run(state, streams, cfg.loss, log_path=out / "train_log.tsv", save=save, progress=progress)
    save(state, "final")
    report = evaluate(model, data, cfg.train.tasks)
    write_report(out / "metrics.tsv", report)
    if figures:
        rows = read_log(out / "train_log.tsv")
        if rows:
            plotting.loss_curves(rows, out / "loss_curves.png")
        _sample_figure(model, data, out / "samples.png")
    return model, report


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    out = Path(args.out) if args.out else Path(cfg.out_dir)
    _, report = train_run(cfg, out, Path(args.resume) if args.resume else None)
    print(report.to_tsv(), end="")
    return EXIT_OK


def _tasks_arg(value: str) -> List[TaskKind]:
    return list(TaskKind) if value == "all" else [TaskKind.parse(value)]


def cmd_eval(args: argparse.Namespace) -> int:
    tasks = _tasks_arg(args.task)
    samples = {t: formats.read_task_dir(Path(args.data), t) for t in tasks}
    model, _, _ = model_from_checkpoint(Path(args.ckpt))
    scores: Dict[str, float] = {}
    for task in tasks:
        uids = [s.uid for s in samples[task]]
        if args.pred:
            preds = Predictions(task, uids, formats.read_predictions(Path(args.pred), task, uids))
        else:
            preds = predict(model, task, samples[task])
            if args.save_pred:
                formats.write_predictions(Path(args.save_pred), task, preds.uids, preds.values)
        scores.update(score(task, preds, samples[task]))
    params = model.parameter_summary()
    report = MetricReport(scores, params["total"], params)
    report.validate()
    out = Path(args.out)
    write_report(out, report)
    if not args.pred:
        _sample_figure(model, samples, out.with_suffix(".png"))
    print(report.to_tsv(), end="")
    return EXIT_OK


def tradeoff_rows(entries: Sequence[Tuple[str, Path]], data: Optional[Path]) -> List[Dict]:
    """One row per loadable checkpoint, sorted by parameter count (label breaks ties)."""
    rows = []
    for label, ckpt in entries:
        try:
            model, _, _ = model_from_checkpoint(ckpt)
            if data is not None:
                tasks = [t for t in TaskKind if (data / t.value).is_dir()]
                samples = {t: formats.read_task_dir(data, t) for t in tasks}
                scores = evaluate(model, samples, tasks).scores
            elif (ckpt.parent / "metrics.tsv").exists():
                scores = MetricReport.from_tsv((ckpt.parent / "metrics.tsv").read_text(encoding="utf-8")).scores
            else:
                scores = {}
        except (CheckpointError, DataError) as exc:
            logger.warning("skipping %s: %s", label, exc)
            continue
        rows.append({"label": label, "parameters": model.parameter_summary()["total"], "scores": scores})
    rows.sort(key=lambda r: (r["parameters"], r["label"]))
    return rows


def tradeoff_tsv(rows: Sequence[Dict]) -> str:
    metrics = [m for m in plotting.METRIC_LABELS if any(m in r["scores"] for r in rows)]
    lines = ["\t".join(["model", "parameters"] + metrics)]
    for r in rows:
        vals = [f"{r['scores'][m]:.6f}" if m in r["scores"] else "" for m in metrics]
        lines.append("\t".join([r["label"], str(r["parameters"])] + vals))
    return "\n".join(lines) + "\n"


def _parse_entry(text: str) -> Tuple[str, Path]:
    if "=" not in text:
        raise ConfigError("--entry", f"expected LABEL=CKPT, got {text!r}")
    label, path = text.split("=", 1)
    if not label:
        raise ConfigError("--entry", "empty label")
    return label, Path(path)


def cmd_report(args: argparse.Namespace) -> int:
    entries = [_parse_entry(e) for e in args.entry]
    rows = tradeoff_rows(entries, Path(args.data) if args.data else None)
    if not rows:
        logger.error("no checkpoint could be loaded")
        return EXIT_DATA
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = tradeoff_tsv(rows)
    (out / "tradeoff.tsv").write_text(text, encoding="utf-8")
    plotting.tradeoff_figure(rows, out / "tradeoff.png")
    print(text, end="")
    return EXIT_OK


def ablation_config(base: RunConfig, tokenizer: str, vocabulary: str) -> RunConfig:
    text = base.to_text() + (
        f"vocab.ocr_tokenizer={tokenizer}\nvocab.ocr_vocab={vocabulary}\n"
        f"train.tasks=ocr\ntrain.total_steps={base.ablate.steps}\ndata.ocr_count={base.ablate.ocr_count}\n"
    )
    return parse_config(text, env={})


def ablate_tokenizer(base: RunConfig) -> List[Dict]:
    """Trains the three OCR tokenizer/vocabulary variants for equal steps and
    scores each on a held-out OCR set drawn past the training indices."""
    test = syn.generate(
        TaskKind.OCR,
        base.ablate.test_count,
        base.data.seed,
        start=base.ablate.ocr_count,
        ocr_len=(base.data.ocr_min_len, base.data.ocr_max_len),
        ocr_jitter=base.data.ocr_jitter,
    )
    rows = []
    for tokenizer, vocabulary in ABLATION_ROWS:
        cfg = ablation_config(base, tokenizer, vocabulary)
        model = build_model(cfg)
        data = make_datasets(cfg, (TaskKind.OCR,))
        state = tr.make_state(model, cfg.train, cfg.train.total_steps)
        tr.run(state, tr.make_streams(data, cfg.train), cfg.loss)
        acc = evaluate(model, {TaskKind.OCR: test}).scores["ocr_acc"]
        vocab = model.task_vocabs[TaskKind.OCR][0]
        rows.append({"tokenizer": tokenizer, "vocabulary": vocabulary, "vocab_size": len(vocab), "accuracy": acc})
        logger.info("%s/%s: accuracy %.4f", tokenizer, vocabulary, acc)
    return rows


def ablation_tsv(rows: Sequence[Dict]) -> str:
    lines = ["tokenizer\tvocabulary\tvocab_size\tocr_acc"]
    lines += [f"{r['tokenizer']}\t{r['vocabulary']}\t{r['vocab_size']}\t{r['accuracy']:.6f}" for r in rows]
    return "\n".join(lines) + "\n"


def cmd_ablate(args: argparse.Namespace) -> int:
    base = load_config(args.config)
    out = Path(args.out) if args.out else Path(base.out_dir) / "ablation"
    out.mkdir(parents=True, exist_ok=True)
    rows = ablate_tokenizer(base)
    text = ablation_tsv(rows)
    (out / "ablation.tsv").write_text(text, encoding="utf-8")
    plotting.ablation_figure(rows, out / "ablation.png")
    print(text, end="")
    return EXIT_OK


def cmd_gen_data(args: argparse.Namespace) -> int:
    if args.count < 1:
        raise ConfigError("--count", "must be at least 1")
    for task in _tasks_arg(args.task):
        samples = syn.generate(task, args.count, args.seed, max_shapes=args.max_shapes)
        formats.write_task_dir(Path(args.out), task, samples)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="atbench", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    task_choices = [t.value for t in TaskKind] + ["all"]

    t = sub.add_parser("train", help="train on synthetic data and write checkpoints + metrics")
    t.add_argument("--config", required=True)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--out", help="output directory (default: out.dir from the config)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint (or saved predictions) on a data directory")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--task", choices=task_choices, default="all")
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True, help="report path (.tsv); a sample figure goes next to it")
    e.add_argument("--pred", help="score prediction files from this directory instead of running the model")
    e.add_argument("--save-pred", help="also write the model's predictions here")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="parameter / metric trade-off table and plot")
    r.add_argument("--entry", action="append", required=True, metavar="LABEL=CKPT")
    r.add_argument("--data", help="evaluate every entry on this data directory")
    r.add_argument("--out", default="report")
    r.set_defaults(func=cmd_report)

    a = sub.add_parser("ablate-tokenizer", help="OCR tokenizer / vocabulary comparison")
    a.add_argument("--config", required=True)
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)

    g = sub.add_parser("gen-data", help="write a synthetic data directory")
    g.add_argument("--task", choices=task_choices, required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--max-shapes", type=int, default=4)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    torch.set_num_threads(1)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except tr.NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
