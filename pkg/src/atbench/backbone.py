"""Image encoder (3-level feature pyramid) and the shared text encoder."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from atbench.tokenization import SPECIAL_TOKENS, Vocabulary

STRIDES = (4, 8, 16)


def init_weights(module: nn.Module) -> None:
    """Zero-mean normal weights with variance 1/fan_in, zero biases."""
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv2d)):
            fan_in = m.weight[0].numel()
            nn.init.normal_(m.weight, 0.0, 1.0 / math.sqrt(fan_in))
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Embedding):
            nn.init.normal_(m.weight, 0.0, 1.0 / math.sqrt(m.embedding_dim))
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def sinusoid_1d(length: int, dim: int, dtype=torch.float32) -> Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    freq = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    table = torch.zeros(length, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(pos * freq)
    table[:, 1::2] = torch.cos(pos * freq[: dim // 2])
    return table.to(dtype)


@functools.lru_cache(maxsize=32)
def sinusoid_2d(h: int, w: int, dim: int, dtype=torch.float32) -> Tensor:
    """(h, w, dim) table: first half of channels encodes rows, second half columns.

    Results are cached and shared, so callers must not modify them in place.
    """
    with torch.inference_mode(False), torch.no_grad():
        return _sinusoid_2d(h, w, dim, dtype)


def _sinusoid_2d(h: int, w: int, dim: int, dtype) -> Tensor:
    half = dim // 2
    rows = sinusoid_1d(h, half, dtype)[:, None, :].expand(h, w, half)
    cols = sinusoid_1d(w, dim - half, dtype)[None, :, :].expand(h, w, dim - half)
    return torch.cat([rows, cols], dim=-1)


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int) -> None:
        super().__init__()
        if dim % heads:
            raise ValueError(f"width {dim} not divisible by {heads} heads")
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x: Tensor, memory: Optional[Tensor] = None, allow: Optional[Tensor] = None) -> Tensor:
        """``allow`` is a boolean (B, Lq, Lk) or (Lq, Lk) mask, True where attention is permitted."""
        memory = x if memory is None else memory
        b, lq, d = x.shape
        lk = memory.shape[1]
        hd = d // self.heads
        q = self.q(x).view(b, lq, self.heads, hd).transpose(1, 2)
        k = self.k(memory).view(b, lk, self.heads, hd).transpose(1, 2)
        v = self.v(memory).view(b, lk, self.heads, hd).transpose(1, 2)
        if allow is not None and allow.dim() == 3:
            allow = allow[:, None]
        y = F.scaled_dot_product_attention(q, k, v, attn_mask=allow)
        return self.out(y.transpose(1, 2).reshape(b, lq, d))


class FeedForward(nn.Sequential):
    def __init__(self, dim: int, mult: int = 4) -> None:
        super().__init__(nn.Linear(dim, dim * mult), nn.GELU(), nn.Linear(dim * mult, dim))


class Block(nn.Module):
    """Pre-norm self-attention + feed-forward block."""

    def __init__(self, dim: int, heads: int) -> None:
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim)

    def forward(self, x: Tensor, allow: Optional[Tensor] = None) -> Tensor:
        x = x + self.attn(self.norm1(x), allow=allow)
        return x + self.ffn(self.norm2(x))


@dataclass
class MultiScaleFeatures:
    levels: List[Tensor]  # each (B, H_l, W_l, d)
    strides: Tuple[int, ...] = STRIDES

    @property
    def shapes(self) -> List[Tuple[int, ...]]:
        return [tuple(z.shape) for z in self.levels]


class ImageEncoder(nn.Module):
    """Stride-4 patchify, then two stride-2 downsamplings; one transformer block per stage."""

    def __init__(self, dim: int = 64, heads: int = 4) -> None:
        super().__init__()
        self.dim = dim
        self.stems = nn.ModuleList(
            [nn.Conv2d(3, dim, 4, 4), nn.Conv2d(dim, dim, 2, 2), nn.Conv2d(dim, dim, 2, 2)]
        )
        self.stem_norms = nn.ModuleList([nn.LayerNorm(dim) for _ in STRIDES])
        self.blocks = nn.ModuleList([Block(dim, heads) for _ in STRIDES])

    def forward(self, images: Tensor) -> MultiScaleFeatures:
        """``images`` is (B, H, W, 3) in [0, 1]; H and W must be multiples of 16."""
        if images.dim() != 4 or images.shape[-1] != 3:
            raise ValueError(f"expected (B, H, W, 3) images, got {tuple(images.shape)}")
        h, w = images.shape[1:3]
        if h % STRIDES[-1] or w % STRIDES[-1]:
            raise ValueError(f"image size {h}x{w} not divisible by {STRIDES[-1]}")
        if not torch.isfinite(images).all():
            raise ValueError("non-finite pixel values")
        x = images.permute(0, 3, 1, 2)
        levels = []
        for stem, norm, block in zip(self.stems, self.stem_norms, self.blocks):
            x = stem(x)
            b, d, hl, wl = x.shape
            tokens = norm(x.permute(0, 2, 3, 1)) + sinusoid_2d(hl, wl, d, x.dtype)
            tokens = block(tokens.reshape(b, hl * wl, d)).reshape(b, hl, wl, d)
            levels.append(tokens)
            x = tokens.permute(0, 3, 1, 2)
        return MultiScaleFeatures(levels)


@dataclass
class TextEmbedding:
    vectors: Tensor  # (B, n_tok, d)
    ids: Tensor  # (B, n_tok) source ids in the encoder's table


class TextEncoder(nn.Module):
    """Token embedding + sinusoidal positions + causal transformer layers.

    The embedding table is indexed by the ``table`` vocabulary; any other
    vocabulary whose tokens are a subset (e.g. the 40-token OCR vocabulary) is
    remapped onto it, so a single set of weights serves prompts, textual
    queries, class names and answer decoding.
    """

    def __init__(self, table: Vocabulary, dim: int = 64, heads: int = 4, layers: int = 2, max_len: int = 64) -> None:
        super().__init__()
        self.table = table
        self.dim = dim
        self.max_len = max_len
        self.embed = nn.Embedding(len(table), dim)
        self.blocks = nn.ModuleList([Block(dim, heads) for _ in range(layers)])
        self.norm = nn.LayerNorm(dim)
        self.register_buffer("pos", sinusoid_1d(max_len, dim), persistent=False)
        self._maps = {}

    def index_map(self, vocab: Vocabulary) -> Tensor:
        """Rows of the embedding table holding each token of ``vocab``."""
        key = vocab.tokens
        if key not in self._maps:
            missing = [t for t in vocab.tokens if t not in self.table.id_of]
            if missing:
                raise ValueError(f"tokens {missing[:5]} not in the text encoder's table")
            self._maps[key] = torch.tensor([self.table.id_of[t] for t in vocab.tokens], dtype=torch.long)
        return self._maps[key]

    def token_embeddings(self, vocab: Optional[Vocabulary] = None) -> Tensor:
        """(V, d) embeddings of every token of ``vocab``, used for the token affinity."""
        if vocab is None:
            return self.embed.weight
        return self.embed.weight[self.index_map(vocab)]

    def forward(self, ids: Tensor, vocab: Optional[Vocabulary] = None) -> TextEmbedding:
        if ids.dim() == 1:
            ids = ids[None]
        n = ids.shape[1]
        if n > self.max_len:
            raise ValueError(f"sequence of {n} tokens exceeds positional limit {self.max_len}")
        vocab_size = len(vocab) if vocab is not None else len(self.table)
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= vocab_size):
            raise ValueError("token id outside the active vocabulary")
        rows = self.index_map(vocab)[ids] if vocab is not None else ids
        x = self.embed(rows) * math.sqrt(self.dim) + self.pos[:n].to(self.embed.weight.dtype)
        causal = torch.ones(n, n, dtype=torch.bool).tril()
        for block in self.blocks:
            x = block(x, allow=causal)
        return TextEmbedding(self.norm(x), rows)

    def embed_class_names(self, names: Sequence[str], encode_fn) -> Tensor:
        """Mean-pooled (N, d) concept embeddings; ``names`` ends with the no-object class."""
        if not names:
            raise ValueError("class name list is empty")
        seqs = [encode_fn(name) for name in names]
        longest = max(len(s) for s in seqs)
        ids = torch.zeros(len(seqs), longest, dtype=torch.long)
        keep = torch.zeros(len(seqs), longest, dtype=self.embed.weight.dtype)
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = torch.tensor(s, dtype=torch.long)
            keep[i, : len(s)] = 1.0
        out = self(ids).vectors
        # causal encoding: trailing padding never leaks into the real positions
        return (out * keep[..., None]).sum(1) / keep.sum(1, keepdim=True)
