"""Wire protocol for manager turns, per-call observations, and trajectories.

A manager turn is tag-delimited text: exactly one ``<reasoning>`` block
followed by one or more ``<tool_call>`` blocks, each holding a JSON object
with exactly the fields ``name`` and ``arguments``. Parsing never raises:
malformed turns are data (``well_formed=False``) that flows into the reward
and feedback loop, and call blocks are salvaged independently so one bad
block does not poison its siblings.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Iterator

FINAL_ANSWER_TOOL = "final_answer"

_REASONING_OPEN = "<reasoning>"
_REASONING_CLOSE = "</reasoning>"
_TOOL_CALL_OPEN = "<tool_call>"
_TOOL_CALL_CLOSE = "</tool_call>"

_REASONING_RE = re.compile(r"<reasoning>(.*?)</reasoning>", re.DOTALL)
_TOOL_CALL_RE = re.compile(r"<tool_call>(.*?)</tool_call>", re.DOTALL)


class Status(str, Enum):
    """Execution status of a single tool call. No other status exists."""

    OK = "OK"
    PARSE_ERR = "PARSE_ERR"
    EXEC_ERR = "EXEC_ERR"
    TIMEOUT = "TIMEOUT"


@dataclass(frozen=True)
class ToolCallRequest:
    """One parsed call: a tool name plus its argument record."""

    tool_name: str
    arguments: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.tool_name:
            raise ValueError("tool_name must be non-empty")
        if not isinstance(self.arguments, dict):
            raise ValueError("arguments must be a record")


@dataclass
class Observation:
    """Per-call result: structured value plus status.

    ``value`` holds the result payload only when status is OK. For EXEC_ERR
    and TIMEOUT it holds the diagnostic text; for a PARSE_ERR produced by
    validation it is absent (None) and the reason lives in ``diagnostic``.
    ``token_usage`` counts model tokens consumed inside the tool, kept
    separate from the manager-side token accounting.
    """

    value: Any
    status: Status
    elapsed_ms: int = 0
    cost_units: float = 0.0
    token_usage: int = 0
    diagnostic: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "value": self.value,
            "status": self.status.value,
            "elapsed_ms": self.elapsed_ms,
            "cost_units": self.cost_units,
            "token_usage": self.token_usage,
            "diagnostic": self.diagnostic,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Observation":
        return cls(
            value=data.get("value"),
            status=Status(data["status"]),
            elapsed_ms=int(data.get("elapsed_ms", 0)),
            cost_units=float(data.get("cost_units", 0.0)),
            token_usage=int(data.get("token_usage", 0)),
            diagnostic=data.get("diagnostic"),
        )


@dataclass
class ManagerTurn:
    """One manager output: raw text, extracted reasoning, and parsed calls."""

    raw_text: str
    reasoning: str | None
    calls: list[ToolCallRequest]
    well_formed: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "raw_text": self.raw_text,
            "reasoning": self.reasoning,
            "well_formed": self.well_formed,
            "calls": [
                {"tool_name": c.tool_name, "arguments": c.arguments} for c in self.calls
            ],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ManagerTurn":
        return cls(
            raw_text=data["raw_text"],
            reasoning=data.get("reasoning"),
            calls=[
                ToolCallRequest(c["tool_name"], dict(c.get("arguments", {})))
                for c in data.get("calls", [])
            ],
            well_formed=bool(data["well_formed"]),
        )


@dataclass
class RoundRecord:
    """One round: the manager turn plus observations aligned with its calls."""

    turn: ManagerTurn
    observations: list[Observation]
    round_index: int  # 1-based

    def to_dict(self) -> dict[str, Any]:
        return {
            "round_index": self.round_index,
            "turn": self.turn.to_dict(),
            "observations": [o.to_dict() for o in self.observations],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RoundRecord":
        return cls(
            turn=ManagerTurn.from_dict(data["turn"]),
            observations=[Observation.from_dict(o) for o in data.get("observations", [])],
            round_index=int(data["round_index"]),
        )


@dataclass
class Trajectory:
    """Full episode record from question to termination, with accounting.

    ``total_tokens`` accumulates manager-side prompt+generation tokens as
    reported by the policy backend; ``tool_tokens`` accumulates model tokens
    consumed inside tools (excluded from the length budget by default).
    ``budget_forced`` marks episodes terminated by the round limit rather
    than an explicit final-answer action.
    """

    question: str
    rounds: list[RoundRecord] = field(default_factory=list)
    final_answer: str | None = None
    total_tokens: int = 0
    total_cost: float = 0.0
    tool_tokens: int = 0
    budget_forced: bool = False
    error: str | None = None

    @property
    def round_count(self) -> int:
        return len(self.rounds)

    def iter_calls(self) -> Iterator[ToolCallRequest]:
        for record in self.rounds:
            yield from record.turn.calls

    def iter_observations(self) -> Iterator[Observation]:
        for record in self.rounds:
            yield from record.observations

    def to_dict(self) -> dict[str, Any]:
        return {
            "question": self.question,
            "rounds": [r.to_dict() for r in self.rounds],
            "final_answer": self.final_answer,
            "round_count": self.round_count,
            "total_tokens": self.total_tokens,
            "total_cost": self.total_cost,
            "tool_tokens": self.tool_tokens,
            "budget_forced": self.budget_forced,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Trajectory":
        return cls(
            question=data["question"],
            rounds=[RoundRecord.from_dict(r) for r in data.get("rounds", [])],
            final_answer=data.get("final_answer"),
            total_tokens=int(data.get("total_tokens", 0)),
            total_cost=float(data.get("total_cost", 0.0)),
            tool_tokens=int(data.get("tool_tokens", 0)),
            budget_forced=bool(data.get("budget_forced", False)),
            error=data.get("error"),
        )


@dataclass
class LinearizedSequence:
    """Token sequence of a trajectory with its per-token supervision mask.

    ``mask[i] == 1`` exactly when token ``i`` comes from a manager turn;
    question, prompt, and observation tokens carry 0. Log-probability lists,
    when present, align 1:1 with ``tokens``.
    """

    tokens: list[Any]
    mask: list[int]
    logp_new: list[float] | None = None
    logp_old: list[float] | None = None

    def __post_init__(self) -> None:
        if len(self.mask) != len(self.tokens):
            raise ValueError("mask length must equal token length")
        for name, probs in (("logp_new", self.logp_new), ("logp_old", self.logp_old)):
            if probs is not None and len(probs) != len(self.tokens):
                raise ValueError(f"{name} length must equal token length")
        if any(m not in (0, 1) for m in self.mask):
            raise ValueError("mask entries must be 0 or 1")


Tokenizer = Callable[[str], list[Any]]


def whitespace_tokenizer(text: str) -> list[str]:
    """Toy tokenizer for tests: one whitespace-separated word per token."""
    return text.split()


def parse_manager_turn(raw: str) -> ManagerTurn:
    """Parse arbitrary manager output into a ManagerTurn. Never fails.

    A turn is well-formed iff the text is exactly one reasoning block
    followed by one or more tool-call blocks (whitespace allowed between
    blocks, nothing else), and every call block parses. When the template is
    violated, whatever call blocks still parse are salvaged so they can
    execute anyway.
    """
    scanned = _scan_template(raw)
    if scanned is not None:
        reasoning, bodies = scanned
        parsed = [_parse_call_block(body) for body in bodies]
        calls = [c for c in parsed if c is not None]
        well_formed = len(calls) == len(bodies)
        return ManagerTurn(raw, reasoning, calls, well_formed)

    # Template violated: salvage independently parseable blocks.
    reasoning_match = _REASONING_RE.search(raw)
    reasoning = reasoning_match.group(1) if reasoning_match else None
    calls = []
    for match in _TOOL_CALL_RE.finditer(raw):
        call = _parse_call_block(match.group(1))
        if call is not None:
            calls.append(call)
    return ManagerTurn(raw, reasoning, calls, False)


def _scan_template(raw: str) -> tuple[str, list[str]] | None:
    """Sequentially match the exact turn template; None on any violation."""
    pos = _skip_ws(raw, 0)
    if not raw.startswith(_REASONING_OPEN, pos):
        return None
    end = raw.find(_REASONING_CLOSE, pos)
    if end < 0:
        return None
    reasoning = raw[pos + len(_REASONING_OPEN) : end]
    pos = end + len(_REASONING_CLOSE)

    bodies: list[str] = []
    while True:
        pos = _skip_ws(raw, pos)
        if pos >= len(raw):
            break
        if not raw.startswith(_TOOL_CALL_OPEN, pos):
            return None
        end = raw.find(_TOOL_CALL_CLOSE, pos)
        if end < 0:
            return None
        bodies.append(raw[pos + len(_TOOL_CALL_OPEN) : end])
        pos = end + len(_TOOL_CALL_CLOSE)
    if not bodies:
        return None
    return reasoning, bodies


def _skip_ws(text: str, pos: int) -> int:
    while pos < len(text) and text[pos].isspace():
        pos += 1
    return pos


def _parse_call_block(body: str) -> ToolCallRequest | None:
    """Strict call-block schema: a JSON object with exactly name+arguments."""
    try:
        payload = json.loads(body)
    except (json.JSONDecodeError, ValueError):
        return None
    if not isinstance(payload, dict) or set(payload.keys()) != {"name", "arguments"}:
        return None
    name = payload["name"]
    arguments = payload["arguments"]
    if not isinstance(name, str) or not name or not isinstance(arguments, dict):
        return None
    return ToolCallRequest(name, arguments)


def render_manager_turn(reasoning: str, calls: Iterable[ToolCallRequest]) -> str:
    """Canonical textual form of a well-formed turn (round-trips via parse)."""
    parts = [f"{_REASONING_OPEN}{reasoning}{_REASONING_CLOSE}"]
    for call in calls:
        payload = json.dumps(
            {"name": call.tool_name, "arguments": call.arguments}, ensure_ascii=False
        )
        parts.append(f"{_TOOL_CALL_OPEN}{payload}{_TOOL_CALL_CLOSE}")
    return "\n".join(parts)


def check_format(turn: ManagerTurn) -> int:
    """Binary per-round format check: 1 iff the turn matched the template."""
    return 1 if turn.well_formed else 0


def render_observation(slot: int, obs: Observation, max_chars: int | None = None) -> str:
    """Deterministic one-line text form of an observation for prompts."""
    if obs.status is Status.OK:
        if isinstance(obs.value, str):
            body = obs.value
        else:
            body = json.dumps(obs.value, ensure_ascii=False, sort_keys=True)
    else:
        body = obs.diagnostic or (obs.value if isinstance(obs.value, str) else "") or ""
    if max_chars is not None and len(body) > max_chars:
        body = body[:max_chars] + "...[truncated]"
    return f"[call {slot}] status={obs.status.value} result: {body}"


def render_round_observations(
    observations: Iterable[Observation], max_chars: int | None = None
) -> str:
    return "\n".join(
        render_observation(slot, obs, max_chars)
        for slot, obs in enumerate(observations, start=1)
    )


def linearize(traj: Trajectory, tokenizer: Tokenizer) -> LinearizedSequence:
    """Linearize a trajectory into tokens with the manager-token mask.

    Segment order per round: environment context first (the question before
    round 1, each round's observations after its turn), manager turns in
    between. Mask is 1 exactly on turn tokens.
    """
    if not traj.rounds:
        raise ValueError("cannot linearize a trajectory with zero rounds")
    tokens: list[Any] = []
    mask: list[int] = []

    def extend(text: str, flag: int) -> None:
        segment = tokenizer(text)
        tokens.extend(segment)
        mask.extend([flag] * len(segment))

    extend(traj.question, 0)
    for record in traj.rounds:
        extend(record.turn.raw_text, 1)
        if record.observations:
            extend(render_round_observations(record.observations), 0)
    return LinearizedSequence(tokens=tokens, mask=mask)


def write_trajectories_jsonl(path: str, trajectories: Iterable[Trajectory]) -> None:
    """Persist trajectories one JSON record per line (stable byte output)."""
    with open(path, "w", encoding="utf-8") as handle:
        for traj in trajectories:
            handle.write(json.dumps(traj.to_dict(), ensure_ascii=False))
            handle.write("\n")


def read_trajectories_jsonl(path: str) -> list[Trajectory]:
    trajectories = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                trajectories.append(Trajectory.from_dict(json.loads(line)))
    return trajectories
