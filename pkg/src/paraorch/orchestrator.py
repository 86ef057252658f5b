"""Multi-round episode loop: render state, query the policy, execute calls,
track budget, and synthesize the final answer with the frozen summarizer.

The loop never aborts on a tool status; statuses are feedback the policy can
react to in later rounds. Only a hard policy-backend failure (after one
retry) ends an episode early, with an episode-level error distinct from any
tool status.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

from .executor import execute_round
from .prompts import PromptSet, load_prompts
from .protocol import (
    FINAL_ANSWER_TOOL,
    ManagerTurn,
    Observation,
    RoundRecord,
    Status,
    Trajectory,
    parse_manager_turn,
    render_round_observations,
)
from .services import ChatBackend, HttpChatBackend, ServiceError, ServiceTimeout
from .tool_pool import ConfigurationError, ModelEndpoint, ToolRegistry, extract_boxed_answer

DEFAULT_TERMINATION_INSTRUCTION = (
    "The orchestration loop has ended. Review the collected evidence and "
    "produce the final answer now."
)

EMPTY_TURN_DIAGNOSTIC = "no parseable tool calls in the turn"


class PolicyBackendError(RuntimeError):
    """The policy backend failed to produce a turn (transient or fatal)."""


class EpisodeError(RuntimeError):
    """Episode-level failure: the policy backend stayed down after a retry."""


@dataclass
class PolicyResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0


class PolicyBackend:
    """Behavior contract: map a rendered state prompt to a manager turn."""

    def generate(self, prompt: str) -> PolicyResponse:  # pragma: no cover - interface
        raise NotImplementedError


class ScriptedPolicy(PolicyBackend):
    """Deterministic test policy: serves scripted turn texts in order.

    Entries may be exceptions (raised as-is for failure-path tests). When the
    script runs out, the last turn repeats if ``repeat_last`` is set,
    otherwise the backend reports a hard failure.
    """

    def __init__(self, turns: Sequence[str | Exception], repeat_last: bool = False):
        if not turns:
            raise ValueError("scripted policy needs at least one turn")
        self.turns = list(turns)
        self.repeat_last = repeat_last
        self.cursor = 0
        self.prompts_seen: list[str] = []

    def generate(self, prompt: str) -> PolicyResponse:
        self.prompts_seen.append(prompt)
        if self.cursor < len(self.turns):
            entry = self.turns[self.cursor]
            self.cursor += 1
        elif self.repeat_last:
            entry = self.turns[-1]
        else:
            raise PolicyBackendError("scripted policy exhausted")
        if isinstance(entry, Exception):
            raise entry
        return PolicyResponse(
            text=entry,
            prompt_tokens=len(prompt.split()),
            completion_tokens=len(entry.split()),
        )


class RemoteChatPolicy(PolicyBackend):
    """Policy backed by a chat-completion endpoint. The rendered state text
    travels as a single user message; token usage comes from the response."""

    def __init__(self, endpoint: ModelEndpoint, chat: ChatBackend):
        self.endpoint = endpoint
        self.chat = chat

    def generate(self, prompt: str) -> PolicyResponse:
        try:
            result = self.chat.complete(
                model_id=self.endpoint.model_id,
                messages=[{"role": "user", "content": prompt}],
                temperature=self.endpoint.temperature,
                max_tokens=self.endpoint.max_tokens,
                timeout_s=self.endpoint.timeout_s,
            )
        except ServiceError as exc:
            raise PolicyBackendError(str(exc)) from exc
        return PolicyResponse(
            text=result.text,
            prompt_tokens=result.prompt_tokens,
            completion_tokens=result.completion_tokens,
        )


@dataclass
class Budget:
    rounds_left: int
    tokens_left: int


@dataclass
class OrchestratorState:
    question: str
    history: list[RoundRecord]
    remaining_budget: Budget


@dataclass
class OrchestratorConfig:
    max_rounds: int = 12
    max_parallel: int = 4
    max_response_tokens: int = 24576
    token_budget: int = 24576
    max_tool_response_chars: int = 4096
    summarizer_endpoint: ModelEndpoint | None = None
    termination_instruction: str = DEFAULT_TERMINATION_INSTRUCTION
    prompts: PromptSet | None = None

    def __post_init__(self) -> None:
        if self.max_rounds < 1:
            raise ConfigurationError("max_rounds must be >= 1")
        if self.max_parallel < 1:
            raise ConfigurationError("max_parallel must be >= 1")

    def prompt_set(self) -> PromptSet:
        return self.prompts if self.prompts is not None else _default_prompts()


@lru_cache(maxsize=1)
def _default_prompts() -> PromptSet:
    return load_prompts()


def render_history(
    question: str,
    rounds: Sequence[RoundRecord],
    max_tool_response_chars: int | None = None,
    current_reasoning: str | None = None,
) -> str:
    """Deterministic text form of the interaction so far, shared by the
    reviewer's history block and the summarizer prompt."""
    parts = [f"Question:\n{question}"]
    for record in rounds:
        parts.append(f"Round {record.round_index} manager output:\n{record.turn.raw_text}")
        if record.observations:
            parts.append(
                f"Round {record.round_index} observations:\n"
                + render_round_observations(record.observations, max_tool_response_chars)
            )
    if current_reasoning is not None:
        parts.append(f"Current reasoning:\n{current_reasoning}")
    return "\n\n".join(parts)


def render_state(state: OrchestratorState, registry: ToolRegistry, cfg: OrchestratorConfig) -> str:
    """Render the full policy prompt: system prompt, tool catalog, question,
    per-round history with statuses, and the remaining-budget note.
    Identical states render to identical text."""
    lines = [cfg.prompt_set().manager, "", "# Available Tools"]
    for name in registry.names():
        spec = registry.spec(name)
        params = ", ".join(spec.parameter_schema.get("properties", {})) or "none"
        extra = f"; subtool: {spec.subtool}" if spec.subtool else ""
        lines.append(f"- {name} (cost {spec.cost_units:g}): {spec.description}; parameters: {params}{extra}")
    if registry.model_pool:
        lines.append(
            f"Model pool for the model_id argument: {', '.join(registry.model_pool)} "
            f"(default: {registry.default_model})"
        )
    lines += ["", "# Question", state.question]
    for record in state.history:
        lines += ["", f"# Round {record.round_index}", "## Manager", record.turn.raw_text]
        if record.observations:
            lines += [
                "## Observations",
                render_round_observations(record.observations, cfg.max_tool_response_chars),
            ]
    lines += ["", f"remaining rounds: {state.remaining_budget.rounds_left}"]
    return "\n".join(lines)


def _generate_with_retry(policy: PolicyBackend, prompt: str) -> PolicyResponse:
    # One retry covers infrastructure flakes; a second failure is an
    # episode-level error, not a tool status.
    try:
        return policy.generate(prompt)
    except PolicyBackendError:
        time.sleep(0)
        try:
            return policy.generate(prompt)
        except PolicyBackendError as exc:
            raise EpisodeError(f"policy backend failed after retry: {exc}") from exc


def _resolve_summarizer(cfg: OrchestratorConfig, summarizer: ChatBackend | None) -> ChatBackend:
    if summarizer is not None:
        return summarizer
    if cfg.summarizer_endpoint is not None:
        return HttpChatBackend(cfg.summarizer_endpoint.base_url)
    raise ConfigurationError("a summarizer backend or endpoint is required")


def run_episode(
    question: str,
    policy: PolicyBackend,
    registry: ToolRegistry,
    cfg: OrchestratorConfig,
    *,
    summarizer: ChatBackend | None = None,
) -> Trajectory:
    """Run one episode: loop until a final-answer action or the round limit,
    then synthesize the answer. Returns the full trajectory with token and
    cost accounting."""
    if not question:
        raise ValueError("question must be non-empty")
    summarizer_client = _resolve_summarizer(cfg, summarizer)
    traj = Trajectory(question=question)

    for round_index in range(1, cfg.max_rounds + 1):
        state = OrchestratorState(
            question=question,
            history=traj.rounds,
            remaining_budget=Budget(
                rounds_left=cfg.max_rounds - len(traj.rounds),
                tokens_left=max(0, cfg.token_budget - traj.total_tokens),
            ),
        )
        response = _generate_with_retry(policy, render_state(state, registry, cfg))
        traj.total_tokens += response.prompt_tokens + response.completion_tokens
        turn = parse_manager_turn(response.text)
        history_text = render_history(
            question, traj.rounds, cfg.max_tool_response_chars, current_reasoning=turn.reasoning
        )

        if turn.calls:
            observations = execute_round(
                registry,
                turn.calls,
                cfg.max_parallel,
                round_index=round_index,
                question=question,
                history_text=history_text,
            )
        else:
            # Nothing salvageable: reflect the parse failure as round feedback.
            observations = [
                Observation(value=None, status=Status.PARSE_ERR, diagnostic=EMPTY_TURN_DIAGNOSTIC)
            ]

        is_final = any(call.tool_name == FINAL_ANSWER_TOOL for call in turn.calls)
        if is_final:
            _, synthesis_obs = _synthesize(
                traj,
                cfg,
                summarizer_client,
                pending_turn=turn,
                pending_observations=observations,
            )
            replaced = 0
            for j, call in enumerate(turn.calls):
                if call.tool_name == FINAL_ANSWER_TOOL and observations[j].status is not Status.PARSE_ERR:
                    if replaced == 0:
                        observations[j] = synthesis_obs
                    else:
                        # Duplicate terminating calls share the answer; the
                        # synthesis ran once, so usage is charged once.
                        observations[j] = Observation(
                            value=synthesis_obs.value,
                            status=synthesis_obs.status,
                            cost_units=synthesis_obs.cost_units,
                            diagnostic=synthesis_obs.diagnostic,
                        )
                    replaced += 1
            if replaced == 0:
                # Termination was signaled but no slot survived validation;
                # the summarizer still ran, so account its usage.
                traj.tool_tokens += synthesis_obs.token_usage

        traj.total_cost += sum(obs.cost_units for obs in observations)
        traj.tool_tokens += sum(obs.token_usage for obs in observations)
        traj.rounds.append(RoundRecord(turn=turn, observations=observations, round_index=round_index))
        if is_final:
            return traj

    traj.budget_forced = True
    synthesize_final_answer(traj, cfg, summarizer=summarizer_client)
    return traj


def synthesize_final_answer(
    traj: Trajectory,
    cfg: OrchestratorConfig,
    *,
    summarizer: ChatBackend | None = None,
) -> str | None:
    """Produce the final answer from the trajectory via the summarizer model
    and record it on the trajectory. None (episode unanswered) when the
    summarizer fails or returns no boxed expression."""
    answer, obs = _synthesize(traj, cfg, _resolve_summarizer(cfg, summarizer))
    traj.tool_tokens += obs.token_usage
    return answer


def _synthesize(
    traj: Trajectory,
    cfg: OrchestratorConfig,
    summarizer: ChatBackend,
    pending_turn: ManagerTurn | None = None,
    pending_observations: list[Observation] | None = None,
) -> tuple[str | None, Observation]:
    """Query the summarizer over the (possibly still-pending) history. Sets
    ``traj.final_answer`` on success and returns it with the observation to
    attach to the terminating call slot. Token usage is carried on the
    observation only; callers decide where it gets accounted."""
    if not traj.rounds and pending_turn is None:
        raise ValueError("cannot synthesize an answer for a trajectory with zero rounds")
    if cfg.summarizer_endpoint is None:
        raise ConfigurationError("summarizer_endpoint must be configured")

    history = render_history(traj.question, traj.rounds, cfg.max_tool_response_chars)
    if pending_turn is not None:
        extra = [f"Final round manager output:\n{pending_turn.raw_text}"]
        if pending_observations:
            extra.append(
                "Final round observations:\n"
                + render_round_observations(pending_observations, cfg.max_tool_response_chars)
            )
        history = "\n\n".join([history] + extra)

    user = (
        f"<conversation_history>\n{history}\n</conversation_history>\n"
        f"<user_query>\n{traj.question}\n</user_query>\n"
        f"{cfg.termination_instruction}"
    )
    messages = [
        {"role": "system", "content": cfg.prompt_set().final_answer_generator},
        {"role": "user", "content": user},
    ]
    endpoint = cfg.summarizer_endpoint
    final_spec_cost = 1.0  # registered cost of the terminating tool
    try:
        result = summarizer.complete(
            model_id=endpoint.model_id,
            messages=messages,
            temperature=endpoint.temperature,
            max_tokens=endpoint.max_tokens,
            timeout_s=endpoint.timeout_s,
        )
    except ServiceTimeout as exc:
        obs = Observation(
            value=str(exc), status=Status.TIMEOUT, cost_units=final_spec_cost, diagnostic=str(exc)
        )
        return None, obs
    except ServiceError as exc:
        obs = Observation(
            value=str(exc), status=Status.EXEC_ERR, cost_units=final_spec_cost, diagnostic=str(exc)
        )
        return None, obs

    answer = extract_boxed_answer(result.text)
    if answer is None:
        diagnostic = "summarizer returned no boxed expression"
        obs = Observation(
            value=diagnostic,
            status=Status.EXEC_ERR,
            elapsed_ms=result.elapsed_ms,
            cost_units=final_spec_cost,
            token_usage=result.total_tokens,
            diagnostic=diagnostic,
        )
        return None, obs

    traj.final_answer = answer
    obs = Observation(
        value={"answer": answer},
        status=Status.OK,
        elapsed_ms=result.elapsed_ms,
        cost_units=final_spec_cost,
        token_usage=result.total_tokens,
    )
    return answer, obs
