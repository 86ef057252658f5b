"""Per-call validation and bounded-parallel execution of one round's calls.

Every call gets an independent verdict; invalid or over-budget calls are
skipped and surface as (absent value, PARSE_ERR) without their adapter ever
running. Valid calls run concurrently with a hard in-flight bound, results
come back in call order, and one call's failure never cancels its siblings.
No retries happen here: recovery belongs to the policy loop.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

from .protocol import Observation, Status, ToolCallRequest
from .tool_pool import CallContext, ToolRegistry, validate_arguments

DEFAULT_PARALLEL_LIMIT = 4

BUDGET_EXCEEDED_REASON = "parallelism budget exceeded"
UNREGISTERED_REASON = "unregistered tool"


@dataclass
class ValidationReport:
    """Independent per-call verdicts (1 valid / 0 invalid) with reasons."""

    per_call: list[int]
    reasons: list[str]


def validate(registry: ToolRegistry, calls: Sequence[ToolCallRequest]) -> ValidationReport:
    """Check each call against the registry: the tool must exist and the
    arguments must satisfy its parameter schema. No call's verdict depends
    on another's."""
    per_call: list[int] = []
    reasons: list[str] = []
    for call in calls:
        if not registry.has_tool(call.tool_name):
            per_call.append(0)
            reasons.append(UNREGISTERED_REASON)
            continue
        reason = validate_arguments(registry.spec(call.tool_name).parameter_schema, call.arguments)
        if reason is not None:
            per_call.append(0)
            reasons.append(reason)
        else:
            per_call.append(1)
            reasons.append("")
    return ValidationReport(per_call=per_call, reasons=reasons)


def _skip(reason: str) -> Observation:
    return Observation(value=None, status=Status.PARSE_ERR, diagnostic=reason)


def execute_round(
    registry: ToolRegistry,
    calls: Sequence[ToolCallRequest],
    parallel_limit: int = DEFAULT_PARALLEL_LIMIT,
    *,
    round_index: int = 1,
    question: str | None = None,
    history_text: str | None = None,
) -> list[Observation]:
    """Execute one round of calls, returning observations in call order.

    Slots beyond ``parallel_limit`` are refused up front (structured
    PARSE_ERR feedback, adapter untouched); among the rest, invalid calls
    are skipped the same way and valid ones run concurrently, at most
    ``parallel_limit`` in flight.
    """
    if not calls:
        raise ValueError("execute_round requires at least one call")
    if parallel_limit < 1:
        raise ValueError("parallel_limit must be >= 1")
    report = validate(registry, calls)

    observations: list[Observation | None] = [None] * len(calls)
    runnable: list[int] = []
    for j, call in enumerate(calls):
        if j >= parallel_limit:
            observations[j] = _skip(BUDGET_EXCEEDED_REASON)
        elif report.per_call[j] == 0:
            observations[j] = _skip(report.reasons[j])
        else:
            runnable.append(j)

    if runnable:
        with ThreadPoolExecutor(max_workers=parallel_limit) as pool:
            futures = {
                j: pool.submit(
                    _run_one,
                    registry,
                    calls[j],
                    CallContext(
                        round_index=round_index,
                        slot=j + 1,
                        question=question,
                        history_text=history_text,
                    ),
                )
                for j in runnable
            }
            for j, future in futures.items():
                observations[j] = future.result()

    return [obs for obs in observations if obs is not None]


def _run_one(registry: ToolRegistry, call: ToolCallRequest, ctx: CallContext) -> Observation:
    # Adapters return statuses rather than raising; this is the last-resort
    # net so a buggy adapter still cannot take down its siblings.
    try:
        return registry.adapters[call.tool_name](dict(call.arguments), ctx)
    except Exception as exc:  # noqa: BLE001
        diagnostic = f"adapter raised {type(exc).__name__}: {exc}"
        return Observation(
            value=diagnostic,
            status=Status.EXEC_ERR,
            cost_units=registry.spec(call.tool_name).cost_units,
            diagnostic=diagnostic,
        )
