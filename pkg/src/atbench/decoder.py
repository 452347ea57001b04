"""Unified transformer decoder over latent and textual queries, its pixel and
token heads, and greedy autoregressive generation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional

import torch
from torch import Tensor, nn

from atbench.backbone import Attention, FeedForward, MultiScaleFeatures, TextEmbedding, sinusoid_2d
from atbench.tokenization import BOS_ID, EOS_ID, PAD_ID, TokenSequence

MIN_DEPTH = 0.1
MAX_DEPTH = 10.0
_LOGIT_CLAMP = 15.0


@dataclass
class DecoderConfig:
    num_layers: int = 7
    m: int = 16
    d: int = 64
    heads: int = 4

    def __post_init__(self) -> None:
        if self.m < 2:
            raise ValueError("need at least one mask query and one depth query (m >= 2)")
        if self.num_layers < 1:
            raise ValueError("num_layers must be positive")


@dataclass
class QuerySet:
    latent: Tensor  # (m, d) or (B, m, d)
    textual: Optional[Tensor] = None  # (B, n_tok, d)


@dataclass
class LayerState:
    """Normalized decoder outputs of one layer."""

    latent: Tensor  # (B, m, d)
    textual: Optional[Tensor]  # (B, n_tok, d) or None


@dataclass
class PixelOutputs:
    mask_logits: Tensor  # (B, m-1, H/4, W/4)
    class_affinity: Tensor  # (B, m-1, N)
    depth: Tensor  # (B, H/4, W/4), meters


@dataclass
class TokenOutputs:
    affinity: Tensor  # (B, n_tok, V)


class DecoderLayer(nn.Module):
    def __init__(self, dim: int, heads: int) -> None:
        super().__init__()
        self.norm_self = nn.LayerNorm(dim)
        self.self_attn = Attention(dim, heads)
        self.norm_cross = nn.LayerNorm(dim)
        self.cross_attn = Attention(dim, heads)
        self.norm_ffn = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim)

    def forward(self, x: Tensor, memory: Tensor, allow: Tensor) -> Tensor:
        x = x + self.self_attn(self.norm_self(x), allow=allow)
        x = x + self.cross_attn(self.norm_cross(x), memory=memory)
        return x + self.ffn(self.norm_ffn(x))


def attention_mask(m: int, n_tok: int, prompt_valid: Tensor) -> Tensor:
    """Boolean (B, L, L) self-attention mask over the stream [latent; textual; prompt].

    Latent and prompt positions see latent and prompt positions only; textual
    position j additionally sees textual positions <= j. Nothing attends to
    padded prompt positions.
    """
    b, n_p = prompt_valid.shape
    total = m + n_tok + n_p
    allow = torch.zeros(total, total, dtype=torch.bool)
    allow[:, :m] = True
    allow[:, m + n_tok :] = True
    if n_tok:
        allow[m : m + n_tok, m : m + n_tok] = torch.ones(n_tok, n_tok, dtype=torch.bool).tril()
    allow = allow[None].expand(b, total, total).clone()
    allow[:, :, m + n_tok :] &= prompt_valid[:, None, :]
    return allow


class UnifiedDecoder(nn.Module):
    """``num_layers`` blocks of masked self-attention over [Q^l; Q^t; prompt],
    cross-attention to the flattened feature pyramid, and a feed-forward."""

    def __init__(self, cfg: DecoderConfig, num_levels: int = 3) -> None:
        super().__init__()
        self.cfg = cfg
        self.latent = nn.Parameter(torch.empty(cfg.m, cfg.d))
        self.level_embed = nn.Parameter(torch.empty(num_levels, cfg.d))
        self.memory_norm = nn.LayerNorm(cfg.d)
        self.layers = nn.ModuleList([DecoderLayer(cfg.d, cfg.heads) for _ in range(cfg.num_layers)])
        self.out_norm = nn.LayerNorm(cfg.d)

    def reset_queries(self) -> None:
        nn.init.normal_(self.latent, 0.0, 1.0)
        nn.init.normal_(self.level_embed, 0.0, 1.0)

    def memory(self, features: MultiScaleFeatures) -> Tensor:
        parts = []
        for lvl, z in enumerate(features.levels):
            b, h, w, d = z.shape
            if d != self.cfg.d:
                raise ValueError(f"feature width {d} does not match decoder width {self.cfg.d}")
            z = z + sinusoid_2d(h, w, d, z.dtype) + self.level_embed[lvl]
            parts.append(z.reshape(b, h * w, d))
        return self.memory_norm(torch.cat(parts, dim=1))

    def forward(
        self,
        features: MultiScaleFeatures,
        prompt: Optional[TextEmbedding],
        prompt_valid: Optional[Tensor] = None,
        textual: Optional[Tensor] = None,
        latent: Optional[Tensor] = None,
        memory: Optional[Tensor] = None,
    ) -> List[LayerState]:
        """Runs every layer and returns the normalized state after each one."""
        b = features.levels[0].shape[0]
        d = self.cfg.d
        latent = self.latent if latent is None else latent
        if latent.dim() == 2:
            latent = latent[None].expand(b, -1, -1)
        m = latent.shape[1]
        if latent.shape[-1] != d:
            raise ValueError(f"latent query width {latent.shape[-1]} != {d}")
        n_tok = 0 if textual is None else textual.shape[1]
        if textual is not None and textual.shape[-1] != d:
            raise ValueError(f"textual query width {textual.shape[-1]} != {d}")
        if prompt is None:
            p = latent.new_zeros(b, 0, d)
            prompt_valid = torch.zeros(b, 0, dtype=torch.bool)
        else:
            p = prompt.vectors
            if p.shape[-1] != d:
                raise ValueError(f"prompt width {p.shape[-1]} != {d}")
            if p.shape[0] == 1 and b > 1:
                p = p.expand(b, -1, -1)
            if prompt_valid is None:
                prompt_valid = torch.ones(p.shape[:2], dtype=torch.bool)
            elif prompt_valid.shape[0] == 1 and b > 1:
                prompt_valid = prompt_valid.expand(b, -1)
        mem = self.memory(features) if memory is None else memory
        allow = attention_mask(m, n_tok, prompt_valid)
        parts = [latent] + ([textual] if n_tok else []) + [p]
        x = torch.cat(parts, dim=1)
        states = []
        for layer in self.layers:
            x = layer(x, mem, allow)
            y = self.out_norm(x)
            states.append(LayerState(y[:, :m], y[:, m : m + n_tok] if n_tok else None))
        return states


def pixel_head(
    latent: Tensor,
    pixel_embed: Tensor,
    concepts: Tensor,
    min_depth: float = MIN_DEPTH,
    max_depth: float = MAX_DEPTH,
) -> PixelOutputs:
    """Masks, class affinities and depth from one layer's latent outputs.

    ``latent`` (B, m, d); ``pixel_embed`` (B, h, w, d) at stride 4; ``concepts`` (N, d).
    Queries 0..m-2 produce masks and class affinities, query m-1 produces depth.
    Dot products are scaled by 1/sqrt(d).
    """
    d = latent.shape[-1]
    if concepts.shape[-1] != d or pixel_embed.shape[-1] != d:
        raise ValueError("latent, pixel embedding and concept widths differ")
    scale = 1.0 / math.sqrt(d)
    mask_q = latent[:, :-1]
    mask_logits = torch.einsum("bqd,bhwd->bqhw", mask_q, pixel_embed) * scale
    class_aff = torch.einsum("bqd,nd->bqn", mask_q, concepts) * scale
    depth_logit = torch.einsum("bd,bhwd->bhw", latent[:, -1], pixel_embed) * scale
    depth_logit = depth_logit.clamp(-_LOGIT_CLAMP, _LOGIT_CLAMP)
    depth = min_depth + (max_depth - min_depth) * torch.sigmoid(depth_logit)
    return PixelOutputs(mask_logits, class_aff, depth)


def token_head(textual: Tensor, token_embeddings: Tensor) -> TokenOutputs:
    """(B, n_tok, V) affinity: dot product with every token embedding."""
    return TokenOutputs(textual @ token_embeddings.t())


def greedy_generate(
    step_logits: Callable[[Tensor], Tensor],
    batch: int,
    max_len: int,
) -> List[TokenSequence]:
    """Greedy decoding from BOS.

    ``step_logits(prefix)`` maps a (B, t) prefix to (B, t, V) top-layer logits.
    The argmax of the last row is appended (lowest id wins ties) until EOS or
    ``max_len`` generated ids.
    """
    if max_len <= 0:
        raise ValueError("max_len must be positive")
    prefix = torch.full((batch, 1), BOS_ID, dtype=torch.long)
    done = torch.zeros(batch, dtype=torch.bool)
    out: List[List[int]] = [[] for _ in range(batch)]
    for _ in range(max_len):
        logits = step_logits(prefix)[:, -1]
        nxt = torch.argmax(logits, dim=-1)
        for i in range(batch):
            if not done[i]:
                out[i].append(int(nxt[i]))
                if int(nxt[i]) == EOS_ID:
                    done[i] = True
        if bool(done.all()):
            break
        nxt = torch.where(done, torch.full_like(nxt, PAD_ID), nxt)
        prefix = torch.cat([prefix, nxt[:, None]], dim=1)
    return [TokenSequence(tuple(ids)) for ids in out]
