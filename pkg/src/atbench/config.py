"""Flat ``key=value`` run configuration with namespaced keys."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Tuple

from atbench.model import ModelConfig
from atbench.objectives import LossWeights
from atbench.tokenization import DEFAULT_SUBWORD_SIZE, MAX_TEXT_LEN, TaskKind
from atbench.trainer import TrainConfig

SEED_ENV = "ATBENCH_SEED"


class ConfigError(ValueError):
    def __init__(self, key: str, message: str) -> None:
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class DataConfig:
    seed: int = 0
    count: int = 32
    ocr_count: int = 256
    max_shapes: int = 4
    ocr_min_len: int = 3
    ocr_max_len: int = 10
    ocr_jitter: int = 0
    vqa_disagreement: int = 0


@dataclass
class VocabConfig:
    ocr_tokenizer: str = "character"
    ocr_vocab: str = "limited"
    subword_size: int = DEFAULT_SUBWORD_SIZE


@dataclass
class AblationConfig:
    steps: int = 1000
    test_count: int = 64
    ocr_count: int = 1024


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/desk"
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    data: DataConfig = field(default_factory=DataConfig)
    vocab: VocabConfig = field(default_factory=VocabConfig)
    ablate: AblationConfig = field(default_factory=AblationConfig)

    def to_text(self, include_out_dir: bool = True) -> str:
        items = to_items(self)
        if not include_out_dir:
            items.pop("out.dir")
        return "".join(f"{k}={v}\n" for k, v in sorted(items.items()))


def _parse_bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes"):
        return True
    if v.lower() in ("0", "false", "no"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _tasks(v: str) -> Tuple[TaskKind, ...]:
    names = [x.strip() for x in v.split(",") if x.strip()]
    if names == ["all"]:
        return tuple(TaskKind)
    return tuple(TaskKind.parse(n) for n in names)


def _floats(v: str) -> Tuple[float, ...]:
    return tuple(float(x) for x in v.split(","))


# key -> (getter, setter-from-string, formatter)
def _fields() -> Dict[str, Tuple[Callable, Callable, Callable]]:
    table: Dict[str, Tuple[Callable, Callable, Callable]] = {}

    def simple(key, section, attr, parse, fmt=str):
        def get(cfg):
            obj = getattr(cfg, section) if section else cfg
            return getattr(obj, attr)

        def put(cfg, raw):
            obj = getattr(cfg, section) if section else cfg
            setattr(obj, attr, parse(raw))

        table[key] = (get, put, fmt)

    simple("seed", None, "seed", int)
    simple("out.dir", None, "out_dir", str)
    for f in fields(ModelConfig):
        simple(f"model.{f.name}", "model", f.name, type(getattr(ModelConfig(), f.name)), repr_num)
    simple("train.base_lr", "train", "base_lr", float, repr_num)
    simple("train.total_steps", "train", "total_steps", int)
    simple("train.epochs", "train", "epochs", int)
    simple("train.decay_factor", "train", "decay_factor", float, repr_num)
    simple("train.weight_decay", "train", "weight_decay", float, repr_num)
    simple("train.grad_clip", "train", "grad_clip", float, repr_num)
    simple("train.ckpt_every", "train", "ckpt_every", int)
    simple("train.decay_fractions", "train", "decay_fractions", _floats, lambda v: ",".join(repr_num(x) for x in v))
    simple("train.betas", "train", "betas", _floats, lambda v: ",".join(repr_num(x) for x in v))
    simple("train.tasks", "train", "tasks", _tasks, lambda v: ",".join(t.value for t in v))
    for t in TaskKind:
        for name, attr in (("batch", "batch_sizes"), ("shrink", "shrink")):

            def get(cfg, t=t, attr=attr):
                return getattr(cfg.train, attr)[t]

            def put(cfg, raw, t=t, attr=attr):
                getattr(cfg.train, attr)[t] = int(raw)

            table[f"train.{name}_{t.value}"] = (get, put, str)
        for name, attr, parse in (("lambda", "task", float), ("nl", "layers", int)):

            def get(cfg, t=t, attr=attr):
                return getattr(cfg.loss, attr)[t]

            def put(cfg, raw, t=t, attr=attr, parse=parse):
                getattr(cfg.loss, attr)[t] = parse(raw)

            table[f"loss.{name}_{t.value}"] = (get, put, repr_num)
    simple("loss.lambda_cls", "loss", "cls", float, repr_num)
    simple("loss.lambda_bce", "loss", "bce", float, repr_num)
    simple("loss.lambda_dice", "loss", "dice", float, repr_num)
    simple("loss.no_object_weight", "loss", "no_object", float, repr_num)
    for section, cls in (("data", DataConfig), ("vocab", VocabConfig), ("ablate", AblationConfig)):
        for f in fields(cls):
            simple(f"{section}.{f.name}", section, f.name, type(getattr(cls(), f.name)))
    return table


def repr_num(v: Any) -> str:
    return repr(v) if isinstance(v, float) else str(v)


FIELDS = _fields()


def to_items(cfg: RunConfig) -> Dict[str, str]:
    return {key: fmt(get(cfg)) for key, (get, _, fmt) in FIELDS.items()}


def parse_config(text: str, env: Dict[str, str] | None = None) -> RunConfig:
    """Parses ``key=value`` lines (``#`` starts a comment) and validates the result."""
    cfg = RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in FIELDS:
            raise ConfigError(key, "unknown configuration key")
        try:
            FIELDS[key][1](cfg, raw)
        except ValueError as exc:
            raise ConfigError(key, f"bad value {raw!r} ({exc})") from None
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            cfg.seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(SEED_ENV, f"bad value {env[SEED_ENV]!r}") from None
    validate(cfg)
    return cfg


def load_config(path: "str | Path", env: Dict[str, str] | None = None) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from None
    return parse_config(text, env)


def validate(cfg: RunConfig) -> None:
    """Checks every module invariant before a run starts; raises ConfigError naming the field."""
    checks: List[Tuple[str, Callable[[], None]]] = [
        ("model", cfg.model.validate),
        ("train", cfg.train.validate),
        ("loss", lambda: cfg.loss.validate(cfg.model.layers)),
    ]
    for section, check in checks:
        try:
            check()
        except ValueError as exc:
            raise ConfigError(section, str(exc)) from None
    cfg.train.seed = cfg.seed
    d = cfg.data
    if d.count < 1 or d.ocr_count < 1:
        raise ConfigError("data.count", "sample counts must be at least 1")
    if not 1 <= d.max_shapes <= 8:
        raise ConfigError("data.max_shapes", "must lie in [1, 8]")
    if cfg.model.m - 1 < d.max_shapes + 1:
        raise ConfigError("model.m", f"needs at least {d.max_shapes + 2} queries for {d.max_shapes} shapes plus backdrop")
    if not 1 <= d.ocr_min_len <= d.ocr_max_len <= MAX_TEXT_LEN:
        raise ConfigError("data.ocr_max_len", f"need 1 <= ocr_min_len <= ocr_max_len <= {MAX_TEXT_LEN}")
    if not 0 <= d.vqa_disagreement <= 10:
        raise ConfigError("data.vqa_disagreement", "must lie in [0, 10]")
    if cfg.vocab.ocr_tokenizer not in ("character", "subword"):
        raise ConfigError("vocab.ocr_tokenizer", "must be 'character' or 'subword'")
    if cfg.vocab.ocr_vocab not in ("limited", "complete"):
        raise ConfigError("vocab.ocr_vocab", "must be 'limited' or 'complete'")
    if cfg.vocab.ocr_tokenizer == "subword" and cfg.vocab.ocr_vocab == "limited":
        raise ConfigError("vocab.ocr_vocab", "the limited vocabulary only supports the character tokenizer")
    if cfg.ablate.steps < 1 or cfg.ablate.test_count < 1 or cfg.ablate.ocr_count < 1:
        raise ConfigError("ablate.steps", "ablation steps, test count and OCR count must be positive")
