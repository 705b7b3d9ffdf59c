"""Span masking, mask insertion and segment permutation for denoising pre-training."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tokenizer import MASK_ID, TokenSequence


@dataclass(frozen=True)
class NoiseConfig:
    lam: float = 3.5
    mask_ratio: float = 0.35
    insert_masks: int = 1
    permute: bool = True
    seed: int = 0
    # token ids that close a segment for permutation (typically punctuation)
    boundary_ids: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be > 0")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ValueError("mask_ratio must be in [0, 1]")
        if self.insert_masks < 0:
            raise ValueError("insert_masks must be >= 0")


@dataclass(frozen=True)
class NoisedPair:
    noisy: TokenSequence
    clean: TokenSequence


def mask_spans(content: list, cfg: NoiseConfig, rng: np.random.Generator) -> tuple[list, int]:
    """Replace Poisson-length spans with single MASK tokens.

    Spans are drawn until exactly ``ceil(p * n)`` tokens are masked: each span
    length is truncated to the remaining budget and stops at already-masked
    positions. Returns the new token list and the number of masked tokens.
    """
    n = len(content)
    budget = math.ceil(cfg.mask_ratio * n - 1e-12)
    masked = np.zeros(n, dtype=bool)
    consumed = 0
    while consumed < budget:
        length = max(1, int(rng.poisson(cfg.lam)))
        length = min(length, budget - consumed)
        free = np.flatnonzero(~masked)
        start = int(free[rng.integers(len(free))])
        end = start
        while end < n and end - start < length and not masked[end]:
            masked[end] = True
            end += 1
        consumed += end - start
    out = []
    for i, tok in enumerate(content):
        if not masked[i]:
            out.append(tok)
        elif i == 0 or not masked[i - 1]:
            out.append(MASK_ID)
    return out, consumed


def insert_masks(content: list, count: int, rng: np.random.Generator) -> list:
    out = list(content)
    for _ in range(count):
        out.insert(int(rng.integers(len(out) + 1)), MASK_ID)
    return out


def permute_segments(content: list, boundary_ids, rng: np.random.Generator) -> list:
    segments = []
    current = []
    for tok in content:
        current.append(tok)
        if tok in boundary_ids:
            segments.append(current)
            current = []
    if current:
        segments.append(current)
    if len(segments) < 2:
        return list(content)
    order = rng.permutation(len(segments))
    return [tok for k in order for tok in segments[k]]


def noise(seq: TokenSequence, cfg: NoiseConfig, rng: np.random.Generator) -> NoisedPair:
    """Corrupt ``seq``: span masking, then mask insertion, then segment permutation.

    A style prefix, if present, is left untouched at position 0.
    """
    content = list(seq.content)
    if not content:
        raise ValueError("sequence has no content tokens")
    out, _ = mask_spans(content, cfg, rng)
    out = insert_masks(out, cfg.insert_masks, rng)
    if cfg.permute:
        out = permute_segments(out, cfg.boundary_ids, rng)
    if seq.has_style_prefix:
        out = [seq.prefix] + out
    return NoisedPair(TokenSequence(out, seq.has_style_prefix), seq)
