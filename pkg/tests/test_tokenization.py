import string

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atbench.synthetic import text_corpus
from atbench.tokenization import (
    BOS_ID,
    EOS_ID,
    MAX_TEXT_LEN,
    PAD_ID,
    UNK_ID,
    Mode,
    TaskKind,
    Vocabulary,
    build_limited_vocab,
    build_subword_vocab,
    decode,
    encode,
    prompt_for,
)

ALNUM = string.ascii_lowercase + string.digits


def test_limited_vocab_layout():
    v = build_limited_vocab()
    assert len(v) == 40
    assert v.id_of["a"] == 4
    assert v.id_of["z"] == 29
    assert v.id_of["0"] == 30
    assert sorted(v.id_of.values()) == list(range(40))
    assert len({PAD_ID, UNK_ID, BOS_ID, EOS_ID}) == 4


def test_encode_examples():
    v = build_limited_vocab()
    ids = encode(v, "Cat1", Mode.CHARACTER).ids
    assert list(ids) == [v.id_of["c"], v.id_of["a"], v.id_of["t"], v.id_of["1"], EOS_ID]
    assert list(encode(v, "", Mode.CHARACTER).ids) == [EOS_ID]
    assert decode(v, encode(v, "cat")) == "cat"


def test_encode_too_long_rejected():
    with pytest.raises(ValueError):
        encode(build_limited_vocab(), "a" * (MAX_TEXT_LEN + 1))


def test_unrepresentable_character_becomes_unk():
    v = Vocabulary(build_limited_vocab().tokens[:14], "a_to_j")
    seq = encode(v, "az", Mode.CHARACTER)
    assert seq.ids[1] == UNK_ID
    assert seq.unk_count == 1


def test_decode_examples():
    v = build_limited_vocab()
    c, a, t = v.id_of["c"], v.id_of["a"], v.id_of["t"]
    assert decode(v, [c, a, t, EOS_ID, PAD_ID]) == "cat"
    assert decode(v, [EOS_ID]) == ""
    assert decode(v, [v.id_of["9"], v.id_of["9"]]) == "99"
    with pytest.raises(ValueError):
        decode(v, [40])


def test_subword_merge_example():
    v = build_subword_vocab(["aa aa ab"], 10)
    assert "aa" in v.id_of
    assert len(v) <= 10


def test_subword_single_char():
    v = build_subword_vocab(["x"], 5)
    assert v.tokens[4:] == ("x",)
    assert len(v) == 5


def test_subword_errors():
    with pytest.raises(ValueError):
        build_subword_vocab([], 10)


def test_subword_covers_corpus():
    corpus = text_corpus()
    v = build_subword_vocab(corpus, 512)
    assert len(v) <= 512
    for text in corpus:
        seq = encode(v, text, Mode.SUBWORD)
        assert seq.unk_count == 0
        assert decode(v, seq) == " ".join(text.lower().split())


def test_subword_merges_shorten_sequences():
    corpus = text_corpus()
    v = build_subword_vocab(corpus, 512)
    chars = sum(len(t) for t in corpus)
    toks = sum(len(encode(v, t, Mode.SUBWORD).ids) - 1 for t in corpus)
    assert toks < chars / 2


def test_prompts():
    assert prompt_for(TaskKind.OCR) == "recognize the text in the image."
    assert prompt_for(TaskKind.PS) == "segment all objects and regions."
    assert prompt_for(TaskKind.DE) == "estimate the depth of the image."
    assert prompt_for(TaskKind.IC) == "describe the image in one sentence."
    q = "what color is the square?"
    assert prompt_for(TaskKind.VQA, q) == q
    with pytest.raises(ValueError):
        prompt_for(TaskKind.PS, "anything")
    with pytest.raises(ValueError):
        prompt_for(TaskKind.VQA)
    assert len({prompt_for(t) for t in (TaskKind.PS, TaskKind.DE, TaskKind.OCR, TaskKind.IC)}) == 4


def test_vocab_file_roundtrip(tmp_path):
    v = build_subword_vocab(text_corpus(), 256)
    v.save(tmp_path / "v.txt")
    lines = (tmp_path / "v.txt").read_text(encoding="utf-8").splitlines()
    assert lines[:4] == ["<pad>", "<unk>", "<bos>", "<eos>"]
    assert Vocabulary.load(tmp_path / "v.txt").tokens == v.tokens


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet=ALNUM, max_size=MAX_TEXT_LEN))
def test_character_roundtrip_property(s):
    v = build_limited_vocab()
    assert decode(v, encode(v, s, Mode.CHARACTER)) == s


@settings(max_examples=100, deadline=None)
@given(st.text(alphabet=ALNUM + "  ", max_size=30))
def test_subword_encode_deterministic(s):
    v = build_subword_vocab(text_corpus(), 128)
    assert encode(v, s, Mode.SUBWORD).ids == encode(v, s, Mode.SUBWORD).ids
