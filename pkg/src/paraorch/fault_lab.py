"""Scripted fault injection and usage measurement at desk scale.

Faults are injected by wrapping a registry, never by touching the executor:
a scheduled (round, slot) returns its forced status without invoking the
inner adapter, everything else passes through untouched. The usage report
aggregates tool/model call shares and budget statistics over trajectories.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import yaml

from .protocol import Observation, Status, Trajectory
from .tool_pool import MODEL_BACKED_TOOLS, Adapter, CallContext, ToolRegistry


@dataclass(frozen=True)
class FaultEntry:
    round_index: int  # 1-based
    call_slot: int  # 1-based
    forced_status: Status

    def __post_init__(self) -> None:
        if self.round_index < 1 or self.call_slot < 1:
            raise ValueError("fault indices are 1-based")
        if self.forced_status is Status.OK:
            raise ValueError("only failure statuses can be forced")


@dataclass
class FaultSchedule:
    entries: list[FaultEntry]

    def __post_init__(self) -> None:
        keys = [(e.round_index, e.call_slot) for e in self.entries]
        if len(keys) != len(set(keys)):
            raise ValueError("at most one fault per (round, slot)")
        self._by_key = {(e.round_index, e.call_slot): e.forced_status for e in self.entries}

    def lookup(self, round_index: int, slot: int) -> Status | None:
        return self._by_key.get((round_index, slot))


def load_schedule(path: str | Path) -> FaultSchedule:
    """Read a schedule file (YAML or JSON):
    ``entries: [{round: 1, slot: 2, status: EXEC_ERR}, ...]``."""
    text = Path(path).read_text(encoding="utf-8")
    data = yaml.safe_load(text) if str(path).endswith((".yaml", ".yml")) else json.loads(text)
    entries = [
        FaultEntry(
            round_index=int(e["round"]),
            call_slot=int(e["slot"]),
            forced_status=Status(e["status"]),
        )
        for e in data.get("entries", [])
    ]
    return FaultSchedule(entries=entries)


def _forced_observation(status: Status, cost_units: float, round_index: int, slot: int) -> Observation:
    diagnostic = f"injected {status.value} at round {round_index} slot {slot}"
    if status is Status.PARSE_ERR:
        # Validation-shaped failure: absent value, nothing was executed.
        return Observation(value=None, status=status, diagnostic=diagnostic)
    # Execution-shaped failure: mimic a real failed invocation, which still
    # charges the registered cost.
    return Observation(value=diagnostic, status=status, cost_units=cost_units, diagnostic=diagnostic)


def wrap_registry(registry: ToolRegistry, schedule: FaultSchedule) -> ToolRegistry:
    """Registry whose adapters consult the schedule first: scheduled slots
    return the forced status without calling the inner adapter; unscheduled
    slots pass through unchanged."""

    def wrap(name: str, inner: Adapter) -> Adapter:
        cost = registry.spec(name).cost_units

        def run(arguments: dict, ctx: CallContext) -> Observation:
            forced = schedule.lookup(ctx.round_index, ctx.slot)
            if forced is not None:
                return _forced_observation(forced, cost, ctx.round_index, ctx.slot)
            return inner(arguments, ctx)

        return run

    overrides = {name: wrap(name, adapter) for name, adapter in registry.adapters.items()}
    return registry.with_adapters(overrides)


def usage_report(
    trajs: Sequence[Trajectory], default_model_label: str = "default"
) -> dict:
    """Call-share percentages per tool and per model (for model-backed calls),
    plus mean rounds, mean parallelism, and mean cost."""
    if not trajs:
        raise ValueError("usage_report needs at least one trajectory")
    tool_counts: dict[str, int] = {}
    model_counts: dict[str, int] = {}
    total_calls = 0
    total_rounds = 0
    total_cost = 0.0
    for traj in trajs:
        total_rounds += traj.round_count
        total_cost += traj.total_cost
        for call in traj.iter_calls():
            total_calls += 1
            tool_counts[call.tool_name] = tool_counts.get(call.tool_name, 0) + 1
            if call.tool_name in MODEL_BACKED_TOOLS:
                model = call.arguments.get("model_id") or default_model_label
                model_counts[model] = model_counts.get(model, 0) + 1

    def shares(counts: dict[str, int]) -> dict[str, float]:
        total = sum(counts.values())
        if total == 0:
            return {}
        return {
            name: round(100.0 * count / total, 2)
            for name, count in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        }

    return {
        "trajectories": len(trajs),
        "total_calls": total_calls,
        "tool_share": shares(tool_counts),
        "model_share": shares(model_counts),
        "mean_rounds": total_rounds / len(trajs),
        "mean_parallelism": (total_calls / total_rounds) if total_rounds else 0.0,
        "mean_cost": total_cost / len(trajs),
    }


def plot_usage(report: dict, path: str | Path) -> None:
    """Optional bar chart of the tool/model distributions (needs matplotlib)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(11, 4))
    for ax, key, title in (
        (axes[0], "tool_share", "Tool call share (%)"),
        (axes[1], "model_share", "Model call share (%)"),
    ):
        data = report.get(key, {})
        ax.bar(list(data.keys()), list(data.values()))
        ax.set_title(title)
        ax.tick_params(axis="x", rotation=45)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
