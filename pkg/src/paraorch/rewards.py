"""Trajectory reward stack: task accuracy, format, diversity, and efficiency.

All four signals are pure functions of an immutable trajectory. The total is
their plain sum, so it lives in [0, 4]:

* task       — strict indicator: normalized final answer equals ground truth.
* format     — per-round average of the binary turn-template check.
* diversity  — 0.5 * (parallelism bit + tool-variety bit).
* efficiency — 0.5 * (length score + cost score), each a soft budget that is
  1 up to the target, decays linearly, and reaches 0 at twice the target.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from .protocol import FINAL_ANSWER_TOOL, Trajectory, check_format


@dataclass
class RewardConfig:
    """Thresholds and soft budgets. Maximums are pinned at twice the targets;
    supplying anything else is a configuration error."""

    theta_par: float = 1.25
    theta_tool: int = 3
    length_target: int = 12288
    cost_target: float = 8.0
    length_max: int | None = None
    cost_max: float | None = None
    include_tool_tokens: bool = False

    def __post_init__(self) -> None:
        if self.length_target <= 0 or self.cost_target <= 0:
            raise ValueError("length_target and cost_target must be positive")
        if self.length_max is None:
            self.length_max = 2 * self.length_target
        if self.cost_max is None:
            self.cost_max = 2 * self.cost_target
        if self.length_max != 2 * self.length_target:
            raise ValueError("length_max must equal 2 * length_target")
        if self.cost_max != 2 * self.cost_target:
            raise ValueError("cost_max must equal 2 * cost_target")


@dataclass
class RewardBreakdown:
    task: int
    format: float
    diversity: float
    efficiency: float
    total: float
    parallel_ok: int
    tool_variety_ok: int
    length_score: float
    cost_score: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "task": self.task,
            "format": self.format,
            "diversity": self.diversity,
            "efficiency": self.efficiency,
            "total": self.total,
            "parallel_ok": self.parallel_ok,
            "tool_variety_ok": self.tool_variety_ok,
            "length_score": self.length_score,
            "cost_score": self.cost_score,
        }


def normalize_answer(text: str) -> str:
    """Canonical answer form: trim, strip enclosing ``$`` and ``\\boxed{}``,
    collapse internal whitespace. Comparison stays textual; no numeric
    equivalence is attempted."""
    out = text.strip()
    while True:
        if len(out) >= 2 and out.startswith("$") and out.endswith("$"):
            out = out[1:-1].strip()
            continue
        if out.startswith("\\boxed{") and out.endswith("}"):
            out = out[len("\\boxed{") : -1].strip()
            continue
        break
    return " ".join(out.split())


def reward_task(traj: Trajectory, ground_truth: str) -> int:
    """1 iff the final answer matches the labeled answer after normalization."""
    if not ground_truth:
        raise ValueError("ground_truth must be non-empty")
    if traj.final_answer is None:
        return 0
    return 1 if normalize_answer(traj.final_answer) == normalize_answer(ground_truth) else 0


def reward_format(traj: Trajectory) -> float:
    """Per-round average of the binary template check over all manager turns."""
    if traj.round_count < 1:
        raise ValueError("format reward requires at least one round")
    return sum(check_format(r.turn) for r in traj.rounds) / traj.round_count


def reward_diversity(traj: Trajectory, cfg: RewardConfig) -> float:
    """Average of two binary bits: mean emitted calls per round reaching the
    parallelism threshold, and distinct non-terminal tool names reaching the
    variety threshold. Counts use the emitted call set, before validation."""
    if traj.round_count < 1:
        raise ValueError("diversity reward requires at least one round")
    par_bit, tool_bit = diversity_bits(traj, cfg)
    return 0.5 * (par_bit + tool_bit)


def diversity_bits(traj: Trajectory, cfg: RewardConfig) -> tuple[int, int]:
    mean_calls = sum(len(r.turn.calls) for r in traj.rounds) / traj.round_count
    par_bit = 1 if mean_calls >= cfg.theta_par else 0
    distinct = {
        call.tool_name for call in traj.iter_calls() if call.tool_name != FINAL_ANSWER_TOOL
    }
    tool_bit = 1 if len(distinct) >= cfg.theta_tool else 0
    return par_bit, tool_bit


def length_reward(total_tokens: float, cfg: RewardConfig) -> float:
    if total_tokens <= cfg.length_target:
        return 1.0
    return max(0.0, (2 * cfg.length_target - total_tokens) / cfg.length_target)


def cost_reward(total_cost: float, cfg: RewardConfig) -> float:
    if total_cost <= cfg.cost_target:
        return 1.0
    return max(0.0, (2 * cfg.cost_target - total_cost) / cfg.cost_target)


def trajectory_length(traj: Trajectory, cfg: RewardConfig) -> int:
    """Token length the efficiency budget sees. Tool-internal model tokens
    are excluded unless the config opts them in."""
    length = traj.total_tokens
    if cfg.include_tool_tokens:
        length += traj.tool_tokens
    return length


def reward_efficiency(traj: Trajectory, cfg: RewardConfig) -> float:
    return 0.5 * (
        length_reward(trajectory_length(traj, cfg), cfg)
        + cost_reward(traj.total_cost, cfg)
    )


def reward_total(traj: Trajectory, ground_truth: str, cfg: RewardConfig) -> RewardBreakdown:
    """Compose the four reward signals into a breakdown with their plain sum."""
    task = reward_task(traj, ground_truth)
    fmt = reward_format(traj)
    par_bit, tool_bit = diversity_bits(traj, cfg)
    diversity = 0.5 * (par_bit + tool_bit)
    len_score = length_reward(trajectory_length(traj, cfg), cfg)
    cost_score = cost_reward(traj.total_cost, cfg)
    efficiency = 0.5 * (len_score + cost_score)
    return RewardBreakdown(
        task=task,
        format=fmt,
        diversity=diversity,
        efficiency=efficiency,
        total=task + fmt + diversity + efficiency,
        parallel_ok=par_bit,
        tool_variety_ok=tool_bit,
        length_score=len_score,
        cost_score=cost_score,
    )
