"""Training-data pipelines: outcome-dispersion filtering for RL instances,
recovery-first SFT trajectory selection, tool-balance enforcement, and
leakage dedup between the two sets.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .protocol import FINAL_ANSWER_TOOL, Status, Trajectory

# Built-in tools eligible as a dominant-tool label (everything but the
# terminating call).
_BALANCE_CLASS_COUNT = 7


@dataclass
class SampledInstance:
    """One question with its sampled trajectories and per-sample correctness."""

    question: str
    ground_truth: str
    trajectories: list[Trajectory]
    correctness: list[int]

    def __post_init__(self) -> None:
        if len(self.correctness) != len(self.trajectories):
            raise ValueError("correctness must align with trajectories")


@dataclass
class CurationConfig:
    samples_per_instance: int = 8
    balance_cap: float = 0.35
    tool_class_count: int = _BALANCE_CLASS_COUNT

    def __post_init__(self) -> None:
        if not (0 < self.balance_cap <= 1):
            raise ValueError("balance_cap must be in (0, 1]")
        if self.balance_cap * self.tool_class_count < 1:
            raise ValueError("balance_cap * tool_class_count must be >= 1")


def filter_rl_instances(instances: Iterable[SampledInstance]) -> list[SampledInstance]:
    """Keep only instances with mixed outcomes: unanimous-correct samples
    carry near-zero preference signal and unanimous-incorrect ones likely
    mark unsolvable or low-quality questions."""
    kept = []
    for instance in instances:
        hits = sum(instance.correctness)
        if 1 <= hits <= len(instance.correctness) - 1:
            kept.append(instance)
    return kept


def has_recovery(traj: Trajectory) -> bool:
    """True when some round contains a non-OK observation and a strictly
    later round has observations that are all OK."""
    fault_seen = False
    for record in traj.rounds:
        observations = record.observations
        if fault_seen and observations and all(o.status is Status.OK for o in observations):
            return True
        if any(o.status is not Status.OK for o in observations):
            fault_seen = True
    return False


def select_sft_trajectory(instance: SampledInstance) -> Trajectory | None:
    """Pick at most one supervision trajectory: correct ones only, recovery
    runs first, then fewer rounds, then lower cost, then first sampled."""
    candidates = [
        (idx, traj)
        for idx, traj in enumerate(instance.trajectories)
        if instance.correctness[idx] == 1
    ]
    if not candidates:
        return None
    ranked = min(
        candidates,
        key=lambda pair: (
            0 if has_recovery(pair[1]) else 1,
            pair[1].round_count,
            pair[1].total_cost,
            pair[0],
        ),
    )
    return ranked[1]


def dominant_tool(traj: Trajectory) -> str:
    """Most frequently called non-terminal tool, lexicographic tie-break.
    Empty string when the trajectory never called one."""
    counts: dict[str, int] = {}
    for call in traj.iter_calls():
        if call.tool_name != FINAL_ANSWER_TOOL:
            counts[call.tool_name] = counts.get(call.tool_name, 0) + 1
    if not counts:
        return ""
    return min(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]


def enforce_tool_balance(
    selected: list[Trajectory], cfg: CurationConfig
) -> list[Trajectory]:
    """Greedily drop trajectories (lowest selection priority first, i.e. from
    the back of the list) from any dominant-tool class whose share of the
    retained set exceeds the cap, until every class fits or is down to one
    member. Input order encodes priority and is preserved in the output."""
    retained = list(selected)
    while True:
        if not retained:
            return retained
        classes: dict[str, list[int]] = {}
        for idx, traj in enumerate(retained):
            classes.setdefault(dominant_tool(traj), []).append(idx)
        total = len(retained)
        violating = [
            (len(indices) / total, label)
            for label, indices in classes.items()
            if len(indices) > 1 and len(indices) / total > cfg.balance_cap
        ]
        if not violating:
            return retained
        violating.sort(key=lambda pair: (-pair[0], pair[1]))
        worst_label = violating[0][1]
        drop_idx = classes[worst_label][-1]
        retained.pop(drop_idx)


def normalize_question(text: str) -> str:
    return " ".join(text.casefold().split())


def dedup_against(sft_questions: list[str], rl_questions: list[str]) -> list[str]:
    """Drop SFT questions whose normalized form appears in the RL set."""
    rl_normalized = {normalize_question(q) for q in rl_questions}
    return [q for q in sft_questions if normalize_question(q) not in rl_normalized]
