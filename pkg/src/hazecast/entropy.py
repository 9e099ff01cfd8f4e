"""Tsallis entropy over variance-weighted ordinal patterns (TEWPP)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidBeta, SeriesTooShort, TooFewSegments, ValidationError, ZeroTotalWeight


@dataclass(frozen=True)
class EmbeddingConfig:
    m: int = 5
    tau: int = 2
    beta: float = 0.8

    def __post_init__(self):
        if self.m < 2:
            raise ValidationError("embedding dimension m must be >= 2")
        if self.tau < 1:
            raise ValidationError("time lag tau must be >= 1")
        if not (self.beta > 0) or self.beta == 1:
            raise InvalidBeta(f"beta must be > 0 and != 1, got {self.beta}")


@dataclass(frozen=True)
class Segment:
    values: np.ndarray
    start_index: int
    weight: float


@dataclass(frozen=True)
class PatternDistribution:
    probs: dict
    total_weight: float


def _values(x) -> np.ndarray:
    return np.asarray(getattr(x, "values", x), dtype=np.float64).reshape(-1)


def _embed(x: np.ndarray, m: int, tau: int) -> np.ndarray:
    span = (m - 1) * tau
    if x.size < span + 1:
        raise SeriesTooShort(f"need at least {(m - 1) * tau + 1} points for m={m}, tau={tau}, got {x.size}")
    n = x.size - span
    idx = np.arange(n)[:, None] + tau * np.arange(m)[None, :]
    return x[idx]


def embed_segments(x, m: int, tau: int) -> list:
    """Delay-embedded segments ``(x[t], x[t+tau], ..., x[t+(m-1)tau])`` with variance weights."""
    emb = _embed(_values(x), m, tau)
    weights = emb.var(axis=1)
    return [Segment(emb[t].copy(), t, float(weights[t])) for t in range(emb.shape[0])]


def ordinal_patterns(emb: np.ndarray) -> np.ndarray:
    """Rank permutation of each row; equal values rank by position."""
    order = np.argsort(emb, axis=1, kind="stable")
    return np.argsort(order, axis=1, kind="stable")


def weighted_pattern_probs(x, m: int, tau: int) -> PatternDistribution:
    emb = _embed(_values(x), m, tau)
    weights = emb.var(axis=1)
    total = float(weights.sum())
    if not total > 0:
        raise ZeroTotalWeight("all embedded segments are constant")
    ranks = ordinal_patterns(emb)
    mass: dict = {}
    for row, w in zip(map(tuple, ranks.tolist()), weights.tolist()):
        mass[row] = mass.get(row, 0.0) + w
    return PatternDistribution({k: v / total for k, v in mass.items()}, total)


def tsallis(probs, beta: float) -> float:
    if not (beta > 0) or beta == 1:
        raise InvalidBeta(f"beta must be > 0 and != 1, got {beta}")
    p = np.asarray(list(probs.values()) if isinstance(probs, dict) else probs, dtype=np.float64)
    p = p[p > 0]
    return max(0.0, float((1.0 - np.sum(p ** beta)) / (beta - 1.0)))


def shannon(probs) -> float:
    p = np.asarray(list(probs.values()) if isinstance(probs, dict) else probs, dtype=np.float64)
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def tsallis_upper_bound(m: int, beta: float) -> float:
    """Entropy of the uniform distribution over all m! patterns."""
    n = math.factorial(m)
    return (1.0 - n ** (1.0 - beta)) / (beta - 1.0)


def tewpp(x, cfg: EmbeddingConfig = EmbeddingConfig()) -> float:
    dist = weighted_pattern_probs(x, cfg.m, cfg.tau)
    return tsallis(dist.probs, cfg.beta)


def segment_entropies(segments, cfg: EmbeddingConfig = EmbeddingConfig()) -> np.ndarray:
    """TEWPP per segment; constant segments (zero total weight) score 0."""
    out = np.empty(len(segments))
    for i, seg in enumerate(segments):
        try:
            out[i] = tewpp(seg, cfg)
        except ZeroTotalWeight:
            out[i] = 0.0
    return out


def partition_by_entropy(entropies) -> tuple:
    """Indices above the median (high) and at or below it (low)."""
    e = np.asarray(entropies, dtype=np.float64)
    if e.size < 2:
        raise TooFewSegments("need at least 2 segments to partition")
    threshold = float(np.median(e))
    high = [i for i in range(e.size) if e[i] > threshold]
    low = [i for i in range(e.size) if e[i] <= threshold]
    return high, low


def uncertainty_partition(segments, cfg: EmbeddingConfig = EmbeddingConfig()) -> tuple:
    """Split segments into (high, low) uncertainty lists by median TEWPP."""
    if len(segments) < 2:
        raise TooFewSegments("need at least 2 segments to partition")
    high, low = partition_by_entropy(segment_entropies(segments, cfg))
    return [segments[i] for i in high], [segments[i] for i in low]
