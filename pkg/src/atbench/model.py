"""The prompt-routed multi-task model and its multi-head comparator."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import Tensor, nn

from atbench.backbone import ImageEncoder, MultiScaleFeatures, TextEncoder, TextEmbedding, init_weights
from atbench.decoder import (
    MAX_DEPTH,
    MIN_DEPTH,
    DecoderConfig,
    PixelOutputs,
    TokenOutputs,
    UnifiedDecoder,
    greedy_generate,
    pixel_head,
    token_head,
)
from atbench.metrics import PanopticMap
from atbench.synthetic import CLASS_NAMES, NO_OBJECT, STUFF_CLASS
from atbench.tokenization import (
    PAD_ID,
    TOKEN_TASKS,
    Mode,
    TaskKind,
    Vocabulary,
    decode,
    encode,
    prompt_for,
)

MODES = ("prompt", "multihead")


@dataclass
class ModelConfig:
    d: int = 64
    m: int = 16
    layers: int = 7
    heads: int = 4
    text_layers: int = 2
    max_text_positions: int = 64
    mode: str = "prompt"
    min_depth: float = MIN_DEPTH
    max_depth: float = MAX_DEPTH

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"model.mode must be one of {MODES}, got {self.mode!r}")
        if self.heads < 1:
            raise ValueError("model.heads must be at least 1")
        if self.d <= 0 or self.d % self.heads:
            raise ValueError(f"model.d={self.d} must be positive and divisible by model.heads={self.heads}")
        if self.d % 4:
            raise ValueError("model.d must be a multiple of 4 for the 2D positional encoding")
        if self.m < 2:
            raise ValueError("model.m must be at least 2")
        if not 0 < self.min_depth < self.max_depth:
            raise ValueError("need 0 < model.min_depth < model.max_depth")

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(num_layers=self.layers, m=self.m, d=self.d, heads=self.heads)


def mlp_head(dim: int) -> nn.Sequential:
    """3-layer MLP output head used by the multi-head comparator."""
    return nn.Sequential(nn.Linear(dim, dim), nn.ReLU(), nn.Linear(dim, dim), nn.ReLU(), nn.Linear(dim, dim))


class AtModel(nn.Module):
    """Image encoder + shared text encoder + unified decoder.

    In ``prompt`` mode every task is routed by its text prompt. In
    ``multihead`` mode no task prompt is used (VQA still reads its question)
    and each token task gets its own 3-layer MLP head instead.
    """

    def __init__(
        self,
        cfg: ModelConfig,
        table: Vocabulary,
        task_vocabs: Dict[TaskKind, Tuple[Vocabulary, Mode]],
        class_names: Sequence[str] = CLASS_NAMES,
        seed: int = 0,
    ) -> None:
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.table = table
        self.task_vocabs = dict(task_vocabs)
        self.class_names = list(class_names)
        torch.manual_seed(seed)
        self.image_encoder = ImageEncoder(cfg.d, cfg.heads)
        self.text_encoder = TextEncoder(table, cfg.d, cfg.heads, cfg.text_layers, cfg.max_text_positions)
        self.decoder = UnifiedDecoder(cfg.decoder_config())
        self.pixel_proj = nn.Linear(cfg.d, cfg.d)
        if cfg.mode == "multihead":
            self.task_heads = nn.ModuleDict({t.value: mlp_head(cfg.d) for t in TOKEN_TASKS})
        init_weights(self)
        self.decoder.reset_queries()
        for t in TOKEN_TASKS:
            self.text_encoder.index_map(self.task_vocabs[t][0])

    # text side ---------------------------------------------------------
    def encode_string(self, text: str) -> List[int]:
        """Table ids of ``text`` in subword mode, EOS included."""
        return list(encode(self.table, text, Mode.SUBWORD).ids)

    def encode_prompts(self, prompts: Sequence[str]) -> Tuple[TextEmbedding, Tensor]:
        seqs = [self.encode_string(p) for p in prompts]
        unique = len(set(map(tuple, seqs))) == 1
        if unique:
            seqs = seqs[:1]
        longest = max(len(s) for s in seqs)
        ids = torch.full((len(seqs), longest), PAD_ID, dtype=torch.long)
        valid = torch.zeros(len(seqs), longest, dtype=torch.bool)
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = torch.tensor(s)
            valid[i, : len(s)] = True
        return self.text_encoder(ids), valid

    def concepts(self) -> Tensor:
        return self.text_encoder.embed_class_names(self.class_names, self.encode_string)

    def task_prompt(self, task: TaskKind, prompts: Optional[Sequence[str]], batch: int):
        if self.cfg.mode == "multihead" and task is not TaskKind.VQA:
            return None, None
        if prompts is None:
            prompts = [prompt_for(task)] * batch
        return self.encode_prompts(prompts)

    # forward passes ----------------------------------------------------
    def encode_image(self, images: Tensor) -> MultiScaleFeatures:
        return self.image_encoder(images)

    def forward_pixels(self, task: TaskKind, images: Tensor, prompts: Optional[Sequence[str]] = None) -> List[PixelOutputs]:
        """Per-layer pixel outputs for PS/DE (no textual queries)."""
        task = TaskKind.parse(task)
        feats = self.encode_image(images)
        prompt, valid = self.task_prompt(task, prompts, images.shape[0])
        states = self.decoder(feats, prompt, valid)
        pix = self.pixel_proj(feats.levels[0])
        concepts = self.concepts()
        return [pixel_head(s.latent, pix, concepts, self.cfg.min_depth, self.cfg.max_depth) for s in states]

    def forward_tokens(
        self,
        task: TaskKind,
        images: Tensor,
        prefix: Tensor,
        prompts: Optional[Sequence[str]] = None,
        feats: Optional[MultiScaleFeatures] = None,
        prompt_cache=None,
        memory: Optional[Tensor] = None,
    ) -> List[TokenOutputs]:
        """Per-layer next-token affinities for the (B, n) prefix ids of the task vocabulary."""
        task = TaskKind.parse(task)
        vocab = self.task_vocabs[task][0]
        feats = self.encode_image(images) if feats is None else feats
        prompt, valid = prompt_cache if prompt_cache is not None else self.task_prompt(task, prompts, prefix.shape[0])
        textual = self.text_encoder(prefix, vocab).vectors
        states = self.decoder(feats, prompt, valid, textual=textual, memory=memory)
        emb = self.text_encoder.token_embeddings(vocab)
        outs = []
        for s in states:
            tok = s.textual
            if self.cfg.mode == "multihead":
                tok = self.task_heads[task.value](tok)
            outs.append(token_head(tok, emb))
        return outs

    # inference ---------------------------------------------------------
    @torch.no_grad()
    def generate(
        self,
        task: TaskKind,
        images: Tensor,
        prompts: Optional[Sequence[str]] = None,
        max_len: int = 32,
    ) -> List[str]:
        task = TaskKind.parse(task)
        vocab = self.task_vocabs[task][0]
        feats = self.encode_image(images)
        cache = self.task_prompt(task, prompts, images.shape[0])
        memory = self.decoder.memory(feats)

        def step(prefix: Tensor) -> Tensor:
            return self.forward_tokens(task, images, prefix, feats=feats, prompt_cache=cache, memory=memory)[-1].affinity

        seqs = greedy_generate(step, images.shape[0], max_len)
        return [decode(vocab, s) for s in seqs]

    @torch.no_grad()
    def predict_depth(self, images: Tensor) -> np.ndarray:
        return self.forward_pixels(TaskKind.DE, images)[-1].depth.numpy()

    @torch.no_grad()
    def predict_panoptic(self, images: Tensor, score_threshold: float = 0.5, overlap_threshold: float = 0.8) -> List[PanopticMap]:
        out = self.forward_pixels(TaskKind.PS, images)[-1]
        return [
            panoptic_inference(out.mask_logits[i], out.class_affinity[i], score_threshold, overlap_threshold)
            for i in range(images.shape[0])
        ]

    def parameter_summary(self) -> Dict[str, int]:
        from atbench.metrics import count_parameters

        return count_parameters(self)

    def config_dict(self) -> Dict:
        return asdict(self.cfg)


def panoptic_inference(
    mask_logits: Tensor,
    class_affinity: Tensor,
    score_threshold: float = 0.5,
    overlap_threshold: float = 0.8,
    no_object: int = NO_OBJECT,
    stuff_classes: Sequence[int] = (STUFF_CLASS,),
) -> PanopticMap:
    """Turns one image's (m-1) masks and class affinities into a panoptic map.

    Queries whose best class is not no-object and whose confidence exceeds
    ``score_threshold`` compete per pixel; a query keeps its segment when at
    least ``overlap_threshold`` of its own mask survives. Stuff segments of the
    same class are merged.
    """
    probs = torch.softmax(class_affinity, dim=-1)
    scores, labels = probs.max(dim=-1)
    keep = (labels != no_object) & (scores > score_threshold)
    h, w = mask_logits.shape[-2:]
    ids = np.zeros((h, w), dtype=np.int64)
    segments: Dict[int, Tuple[int, bool]] = {}
    if not bool(keep.any()):
        return PanopticMap(ids, segments)
    mask_probs = torch.sigmoid(mask_logits[keep])
    cls = labels[keep]
    weighted = scores[keep][:, None, None] * mask_probs
    owner = weighted.argmax(dim=0)
    next_id = 1
    stuff_ids: Dict[int, int] = {}
    for k in range(mask_probs.shape[0]):
        c = int(cls[k])
        own = (owner == k) & (mask_probs[k] >= 0.5)
        area = int(own.sum())
        full = int((mask_probs[k] >= 0.5).sum())
        if area == 0 or full == 0 or area / full < overlap_threshold:
            continue
        is_thing = c not in stuff_classes
        if not is_thing and c in stuff_ids:
            seg_id = stuff_ids[c]
        else:
            seg_id = next_id
            next_id += 1
            segments[seg_id] = (c, is_thing)
            if not is_thing:
                stuff_ids[c] = seg_id
        ids[own.numpy()] = seg_id
    return PanopticMap(ids, segments)
