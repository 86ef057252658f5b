"""Group-relative advantages, masked importance ratios, and the clipped
surrogate value, plus the masked SFT negative log-likelihood.

These are pure computations over externally supplied token log-probabilities;
nothing here updates parameters. All arithmetic runs in 64-bit floats with
log-space accumulation so products over long sequences stay finite. The
group standard deviation is the population one, and no KL term appears in
the surrogate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .protocol import LinearizedSequence

DEFAULT_DELTA = 1e-4


@dataclass(frozen=True)
class GrpoConfig:
    """Stability constant, asymmetric clip range, and group size."""

    delta: float = DEFAULT_DELTA
    clip_low: float = 0.2
    clip_high: float = 0.28
    group_size: int = 8

    def __post_init__(self) -> None:
        if not (0 < self.clip_low <= self.clip_high < 1):
            raise ValueError("clip range must satisfy 0 < clip_low <= clip_high < 1")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")


@dataclass
class Group:
    """A sampled group: one scalar reward and one linearized sequence per
    trajectory."""

    rewards: list[float]
    sequences: list[LinearizedSequence]

    def __post_init__(self) -> None:
        if len(self.rewards) != len(self.sequences):
            raise ValueError("rewards and sequences must align")
        if len(self.rewards) < 2:
            raise ValueError("a group needs at least two trajectories")


def group_advantages(rewards: Sequence[float], delta: float = DEFAULT_DELTA) -> list[float]:
    """Center each reward on the group mean and scale by the population
    standard deviation plus ``delta``."""
    if len(rewards) < 2:
        raise ValueError("advantages need at least two rewards")
    n = len(rewards)
    mean = sum(rewards) / n
    variance = sum((r - mean) ** 2 for r in rewards) / n
    denom = math.sqrt(variance) + delta
    return [(r - mean) / denom for r in rewards]


def masked_log_ratio(seq: LinearizedSequence) -> float:
    if seq.logp_new is None or seq.logp_old is None:
        raise ValueError("masked ratio needs both logp_new and logp_old")
    total = 0.0
    for m, new, old in zip(seq.mask, seq.logp_new, seq.logp_old):
        if not (math.isfinite(new) and math.isfinite(old)):
            raise ValueError("log-probabilities must be finite")
        if m:
            total += new - old
    return total


def masked_ratio(seq: LinearizedSequence) -> float:
    """Sequence-level importance ratio over policy tokens only: the product
    of per-token probability ratios raised to the mask, computed in log
    space. Environment-side tokens never move it."""
    return math.exp(masked_log_ratio(seq))


def clipped_surrogate(group: Group, advantages: Sequence[float], cfg: GrpoConfig) -> float:
    """Mean over the group of min(r*A, clip(r, 1-clip_low, 1+clip_high)*A)."""
    if len(advantages) != len(group.rewards):
        raise ValueError("advantages must align with the group")
    lo, hi = 1.0 - cfg.clip_low, 1.0 + cfg.clip_high
    total = 0.0
    for seq, advantage in zip(group.sequences, advantages):
        ratio = masked_ratio(seq)
        clipped = min(max(ratio, lo), hi)
        total += min(ratio * advantage, clipped * advantage)
    return total / len(advantages)


def masked_sft_nll(seq: LinearizedSequence) -> float:
    """Negative log-likelihood summed over policy tokens only; environment
    tokens contribute exactly zero."""
    if seq.logp_new is None:
        raise ValueError("masked NLL needs logp_new")
    total = 0.0
    for m, logp in zip(seq.mask, seq.logp_new):
        if not math.isfinite(logp):
            raise ValueError("log-probabilities must be finite")
        if m:
            total += logp
    return -total
