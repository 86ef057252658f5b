"""Shared builders: scripted registries with invocation counters and quick
trajectory construction helpers."""

from __future__ import annotations

import threading
import time

import pytest

from paraorch import (
    ManagerTurn,
    Observation,
    RoundRecord,
    Status,
    ToolCallRequest,
    ToolRegistry,
    ToolSpec,
    Trajectory,
    render_manager_turn,
)
from paraorch.tool_pool import CallContext, ToolKind

OPEN_SCHEMA = {"type": "object"}
STRICT_SCHEMA = {
    "type": "object",
    "properties": {"x": {"type": "string"}},
    "required": ["x"],
    "additionalProperties": False,
}


class CountingAdapter:
    """Adapter that counts invocations and returns a scripted observation."""

    def __init__(self, cost: float = 0.0, result: str = "ok", sleep_s: float = 0.0):
        self.cost = cost
        self.result = result
        self.sleep_s = sleep_s
        self.calls: list[tuple[dict, CallContext]] = []
        self._lock = threading.Lock()

    @property
    def invocations(self) -> int:
        return len(self.calls)

    def __call__(self, arguments: dict, ctx: CallContext) -> Observation:
        with self._lock:
            self.calls.append((arguments, ctx))
        if self.sleep_s:
            time.sleep(self.sleep_s)
        return Observation(
            value={"echo": arguments, "result": self.result},
            status=Status.OK,
            cost_units=self.cost,
        )


def make_test_registry(
    tools: dict[str, CountingAdapter] | None = None,
    strict: dict[str, CountingAdapter] | None = None,
) -> ToolRegistry:
    """Registry of open-schema tools plus optional strict-schema ones."""
    tools = tools if tools is not None else {"alpha": CountingAdapter(), "beta": CountingAdapter()}
    specs = {}
    adapters = {}
    for name, adapter in tools.items():
        specs[name] = ToolSpec(
            name=name,
            description=f"test tool {name}",
            parameter_schema=OPEN_SCHEMA,
            cost_units=adapter.cost,
            kind=ToolKind.SANDBOX,
        )
        adapters[name] = adapter
    for name, adapter in (strict or {}).items():
        specs[name] = ToolSpec(
            name=name,
            description=f"strict test tool {name}",
            parameter_schema=STRICT_SCHEMA,
            cost_units=adapter.cost,
            kind=ToolKind.SANDBOX,
        )
        adapters[name] = adapter
    return ToolRegistry(specs=specs, adapters=adapters)


def make_turn(
    tool_names: list[str],
    reasoning: str = "plan",
    well_formed: bool = True,
    arguments: dict | None = None,
) -> ManagerTurn:
    calls = [ToolCallRequest(name, dict(arguments or {})) for name in tool_names]
    raw = render_manager_turn(reasoning, calls)
    if not well_formed:
        raw = "malformed " + raw
    return ManagerTurn(raw_text=raw, reasoning=reasoning, calls=calls, well_formed=well_formed)


def make_round(
    tool_names: list[str],
    statuses: list[Status] | None = None,
    round_index: int = 1,
    costs: list[float] | None = None,
    well_formed: bool = True,
) -> RoundRecord:
    statuses = statuses or [Status.OK] * len(tool_names)
    costs = costs or [0.0] * len(tool_names)
    observations = []
    for status, cost in zip(statuses, costs):
        if status is Status.OK:
            observations.append(Observation(value="fine", status=status, cost_units=cost))
        elif status is Status.PARSE_ERR:
            observations.append(
                Observation(value=None, status=status, cost_units=cost, diagnostic="bad call")
            )
        else:
            observations.append(
                Observation(value="boom", status=status, cost_units=cost, diagnostic="boom")
            )
    return RoundRecord(
        turn=make_turn(tool_names, well_formed=well_formed),
        observations=observations,
        round_index=round_index,
    )


def make_trajectory(
    rounds_tools: list[list[str]],
    final_answer: str | None = "42",
    total_tokens: int = 100,
    total_cost: float | None = None,
    statuses: list[list[Status]] | None = None,
    well_formed: list[bool] | None = None,
    question: str = "test question",
) -> Trajectory:
    rounds = []
    for idx, tools in enumerate(rounds_tools):
        rounds.append(
            make_round(
                tools,
                statuses=statuses[idx] if statuses else None,
                round_index=idx + 1,
                well_formed=well_formed[idx] if well_formed else True,
            )
        )
    traj = Trajectory(
        question=question,
        rounds=rounds,
        final_answer=final_answer,
        total_tokens=total_tokens,
    )
    traj.total_cost = (
        total_cost
        if total_cost is not None
        else sum(o.cost_units for r in rounds for o in r.observations)
    )
    return traj


@pytest.fixture
def counting_registry():
    alpha = CountingAdapter(result="alpha-result")
    beta = CountingAdapter(cost=1.0, result="beta-result")
    strict = CountingAdapter(result="strict-result")
    registry = make_test_registry({"alpha": alpha, "beta": beta}, {"strict": strict})
    return registry, {"alpha": alpha, "beta": beta, "strict": strict}
