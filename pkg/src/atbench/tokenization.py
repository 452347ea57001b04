"""Vocabularies, character/subword tokenizers and per-task prompts."""

from __future__ import annotations

import enum
import logging
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

logger = logging.getLogger(__name__)

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<bos>", "<eos>"
SPECIAL_TOKENS = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3

MAX_TEXT_LEN = 15
DEFAULT_SUBWORD_SIZE = 512


class TaskKind(str, enum.Enum):
    PS = "ps"
    DE = "de"
    OCR = "ocr"
    IC = "ic"
    VQA = "vqa"

    @classmethod
    def parse(cls, value: "str | TaskKind") -> "TaskKind":
        if isinstance(value, TaskKind):
            return value
        try:
            return cls(value.lower())
        except ValueError:
            raise ValueError(f"unknown task {value!r}; expected one of {[t.value for t in cls]}") from None


ALL_TASKS: Tuple[TaskKind, ...] = tuple(TaskKind)
PIXEL_TASKS = (TaskKind.PS, TaskKind.DE)
TOKEN_TASKS = (TaskKind.OCR, TaskKind.IC, TaskKind.VQA)

PROMPTS: Dict[TaskKind, str] = {
    TaskKind.PS: "segment all objects and regions.",
    TaskKind.DE: "estimate the depth of the image.",
    TaskKind.OCR: "recognize the text in the image.",
    TaskKind.IC: "describe the image in one sentence.",
}


class Mode(str, enum.Enum):
    CHARACTER = "character"
    SUBWORD = "subword"


@dataclass(frozen=True)
class Vocabulary:
    """Ordered token inventory; a token's id is its position in ``tokens``."""

    tokens: Tuple[str, ...]
    name: str = "vocab"
    id_of: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if tuple(self.tokens[:4]) != SPECIAL_TOKENS:
            raise ValueError(f"first four tokens must be {SPECIAL_TOKENS}, got {self.tokens[:4]}")
        id_of = {tok: i for i, tok in enumerate(self.tokens)}
        if len(id_of) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        object.__setattr__(self, "id_of", id_of)
        longest = max((len(t) for t in self.tokens[4:]), default=0)
        object.__setattr__(self, "_max_token_len", longest)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def specials(self) -> Dict[str, int]:
        return {"pad": PAD_ID, "unk": UNK_ID, "bos": BOS_ID, "eos": EOS_ID}

    @property
    def max_token_len(self) -> int:
        return self._max_token_len

    def save(self, path: "str | Path") -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: "str | Path", name: Optional[str] = None) -> "Vocabulary":
        text = Path(path).read_text(encoding="utf-8")
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines = lines[:-1]
        return cls(tuple(lines), name=name or Path(path).stem)

    def to_lines(self) -> List[str]:
        return list(self.tokens)


@dataclass(frozen=True)
class TokenSequence:
    ids: Tuple[int, ...]
    unk_count: int = 0

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)


def build_limited_vocab() -> Vocabulary:
    """The 40-token OCR vocabulary: specials, then a-z, then 0-9."""
    return Vocabulary(SPECIAL_TOKENS + tuple(string.ascii_lowercase) + tuple(string.digits), name="limited")


def _split_words(text: str) -> List[str]:
    # spaces are standalone pieces; merges never cross them
    pieces: List[str] = []
    word = []
    for ch in text:
        if ch == " ":
            if word:
                pieces.append("".join(word))
                word = []
            pieces.append(" ")
        else:
            word.append(ch)
    if word:
        pieces.append("".join(word))
    return pieces


def build_subword_vocab(corpus: Sequence[str], target_size: int = DEFAULT_SUBWORD_SIZE) -> Vocabulary:
    """Frequency-merge subword vocabulary learned from ``corpus``.

    Starts from the distinct characters of the normalized corpus and repeatedly
    merges the most frequent adjacent pair inside words until ``target_size``
    tokens exist or no pair remains. Ties go to the lexicographically smallest
    pair.
    """
    if not corpus:
        raise ValueError("corpus must be non-empty")
    texts = [normalize_subword(t) for t in corpus]
    chars = sorted({ch for t in texts for ch in t})
    if target_size < len(SPECIAL_TOKENS) + len(chars):
        raise ValueError(
            f"target_size={target_size} is smaller than 4 specials + {len(chars)} corpus characters"
        )
    tokens: List[str] = list(SPECIAL_TOKENS) + chars
    known = set(tokens)

    words: Counter = Counter()
    for t in texts:
        for piece in _split_words(t):
            if piece != " ":
                words[tuple(piece)] += 1

    while len(tokens) < target_size:
        pairs: Counter = Counter()
        for word, freq in words.items():
            for a, b in zip(word, word[1:]):
                pairs[(a, b)] += freq
        if not pairs:
            break
        best = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        merged = best[0] + best[1]
        new_words: Counter = Counter()
        for word, freq in words.items():
            out = []
            i = 0
            while i < len(word):
                if i + 1 < len(word) and (word[i], word[i + 1]) == best:
                    out.append(merged)
                    i += 2
                else:
                    out.append(word[i])
                    i += 1
            new_words[tuple(out)] += freq
        words = new_words
        if merged not in known:
            tokens.append(merged)
            known.add(merged)
    return Vocabulary(tuple(tokens), name="subword")


def normalize_character(text: str) -> str:
    return "".join(ch for ch in text.lower() if ch.isalnum())


def normalize_subword(text: str) -> str:
    return " ".join(text.lower().split())


def encode(vocab: Vocabulary, text: str, mode: "Mode | str" = Mode.CHARACTER) -> TokenSequence:
    """Encode ``text`` into ids terminated by EOS.

    Character mode lowercases, drops non-alphanumerics and maps each character
    to its own token. Subword mode does greedy longest-match (lowest id on
    equal length). Unrepresentable characters become UNK and are counted.
    """
    mode = Mode(mode)
    ids: List[int] = []
    unk = 0
    if mode is Mode.CHARACTER:
        norm = normalize_character(text)
        if len(norm) > MAX_TEXT_LEN:
            raise ValueError(f"normalized text {norm!r} longer than {MAX_TEXT_LEN} characters")
        for ch in norm:
            idx = vocab.id_of.get(ch)
            if idx is None:
                idx = UNK_ID
                unk += 1
            ids.append(idx)
    else:
        norm = normalize_subword(text)
        longest = vocab.max_token_len
        i = 0
        while i < len(norm):
            for span in range(min(longest, len(norm) - i), 0, -1):
                idx = vocab.id_of.get(norm[i : i + span])
                if idx is not None:
                    ids.append(idx)
                    i += span
                    break
            else:
                ids.append(UNK_ID)
                unk += 1
                i += 1
    if unk:
        logger.warning("%d unrepresentable character(s) in %r mapped to UNK", unk, text)
    ids.append(EOS_ID)
    return TokenSequence(tuple(ids), unk_count=unk)


def decode(vocab: Vocabulary, seq: "TokenSequence | Iterable[int]") -> str:
    ids = seq.ids if isinstance(seq, TokenSequence) else tuple(int(i) for i in seq)
    out = []
    for idx in ids:
        if idx < 0 or idx >= len(vocab):
            raise ValueError(f"token id {idx} out of range for vocabulary of size {len(vocab)}")
        if idx == EOS_ID:
            break
        if idx < len(SPECIAL_TOKENS):
            continue
        out.append(vocab.tokens[idx])
    return "".join(out)


def prompt_for(task: "TaskKind | str", question: Optional[str] = None) -> str:
    task = TaskKind.parse(task)
    if task is TaskKind.VQA:
        if question is None:
            raise ValueError("VQA needs a question to use as its prompt")
        return question
    if question is not None:
        raise ValueError(f"task {task.value} takes no question")
    return PROMPTS[task]
