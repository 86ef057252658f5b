"""Registry of the built-in tool set and the adapters that execute it.

Eight tools share one calling convention: a JSON argument record in, an
Observation out, with the registered cost charged per invocation. Agent
tools (reasoner, reviewer, searcher, coder, ensemble) are backed by chat
endpoints from a model pool; ``search`` and ``python`` talk to the retrieval
and sandbox services; ``final_answer`` is the termination signal whose real
work happens in the orchestrator's synthesis step.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Mapping, Sequence

import jsonschema

from .prompts import PromptSet, load_prompts
from .protocol import FINAL_ANSWER_TOOL, Observation, Status
from .rewards import normalize_answer
from .services import (
    ChatBackend,
    ChatResult,
    RetrievalBackend,
    SandboxBackend,
    ServiceError,
    ServiceTimeout,
)

ENSEMBLE_SAMPLES = 4
CODE_REASONER_MAX_ITERATIONS = 3


class ConfigurationError(ValueError):
    """Invalid registry or runtime configuration."""


class ToolKind(str, Enum):
    MODEL_BACKED = "model_backed"
    SANDBOX = "sandbox"
    RETRIEVAL = "retrieval"
    TERMINAL = "terminal"


@dataclass(frozen=True)
class ModelEndpoint:
    """Connection parameters for one chat-completion model."""

    base_url: str
    model_id: str
    max_tokens: int = 24576
    temperature: float = 1.0
    timeout_ms: int = 120_000

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ConfigurationError("temperature must be >= 0")
        if self.max_tokens <= 0 or self.timeout_ms <= 0:
            raise ConfigurationError("max_tokens and timeout_ms must be positive")

    @property
    def timeout_s(self) -> float:
        return self.timeout_ms / 1000.0


@dataclass(frozen=True)
class ServiceTimeouts:
    sandbox_s: float = 30.0
    retrieval_s: float = 15.0


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    parameter_schema: Mapping[str, Any]
    cost_units: float
    kind: ToolKind
    subtool: str | None = None


@dataclass
class CallContext:
    """Execution context the executor hands to adapters: position of the call
    within the episode plus the state pieces some tools consume."""

    round_index: int = 1
    slot: int = 1
    question: str | None = None
    history_text: str | None = None


Adapter = Callable[[dict[str, Any], CallContext], Observation]


@dataclass
class ToolRegistry:
    """Immutable-after-construction mapping of tool specs to adapters."""

    specs: dict[str, ToolSpec]
    adapters: dict[str, Adapter]
    model_pool: tuple[str, ...] = ()
    default_model: str = ""

    def __post_init__(self) -> None:
        if set(self.specs) != set(self.adapters):
            raise ConfigurationError("every spec must have exactly one adapter")

    def spec(self, name: str) -> ToolSpec:
        return self.specs[name]

    def has_tool(self, name: str) -> bool:
        return name in self.specs

    def names(self) -> list[str]:
        return list(self.specs)

    def with_adapters(self, overrides: Mapping[str, Adapter]) -> "ToolRegistry":
        """Copy of the registry with some adapters replaced (used for fault
        injection wrappers); specs are shared."""
        unknown = set(overrides) - set(self.adapters)
        if unknown:
            raise ConfigurationError(f"unknown tools in adapter overrides: {sorted(unknown)}")
        adapters = dict(self.adapters)
        adapters.update(overrides)
        return ToolRegistry(
            specs=self.specs,
            adapters=adapters,
            model_pool=self.model_pool,
            default_model=self.default_model,
        )


_AGENT_TOOL_SCHEMA: dict[str, Any] = {
    "type": "object",
    "properties": {
        "subtask": {"type": "string"},
        "model_id": {"type": "string"},
    },
    "additionalProperties": False,
}

_SEARCH_SCHEMA: dict[str, Any] = {
    "type": "object",
    "properties": {
        "query_list": {"type": "array", "items": {"type": "string"}, "minItems": 1},
    },
    "required": ["query_list"],
    "additionalProperties": False,
}

_PYTHON_SCHEMA: dict[str, Any] = {
    "type": "object",
    "properties": {"code": {"type": "string"}},
    "required": ["code"],
    "additionalProperties": False,
}

_FINAL_ANSWER_SCHEMA: dict[str, Any] = {
    "type": "object",
    "properties": {"answer": {"type": "string"}},
    "additionalProperties": False,
}

BUILTIN_TOOL_TABLE: tuple[tuple[str, str, Mapping[str, Any], float, ToolKind, str | None], ...] = (
    ("standard_reasoner", "General logic reasoning", _AGENT_TOOL_SCHEMA, 1.0, ToolKind.MODEL_BACKED, None),
    ("critical_reviewer", "Consistency & fact checker", _AGENT_TOOL_SCHEMA, 1.0, ToolKind.MODEL_BACKED, None),
    ("knowledge_searcher", "Intelligent fact retrieval with the search tool", _AGENT_TOOL_SCHEMA, 1.0, ToolKind.MODEL_BACKED, "search"),
    ("search", "Wiki search for the subtask", _SEARCH_SCHEMA, 0.0, ToolKind.RETRIEVAL, None),
    ("code_reasoner", "Solve the problem using python code", _AGENT_TOOL_SCHEMA, 1.0, ToolKind.MODEL_BACKED, "python"),
    ("python", "Isolated python code execution in the sandbox", _PYTHON_SCHEMA, 0.0, ToolKind.SANDBOX, None),
    ("ensemble_solver", "Multi-path reasoning aggregator", _AGENT_TOOL_SCHEMA, 4.0, ToolKind.MODEL_BACKED, None),
    (FINAL_ANSWER_TOOL, "End the reasoning and return the final answer", _FINAL_ANSWER_SCHEMA, 1.0, ToolKind.TERMINAL, None),
)

BUILTIN_COSTS: dict[str, float] = {row[0]: row[3] for row in BUILTIN_TOOL_TABLE}

MODEL_BACKED_TOOLS: frozenset[str] = frozenset(
    row[0] for row in BUILTIN_TOOL_TABLE if row[4] is ToolKind.MODEL_BACKED
)


def validate_arguments(schema: Mapping[str, Any], arguments: Mapping[str, Any]) -> str | None:
    """None when arguments satisfy the schema, else a short reason."""
    try:
        jsonschema.validate(instance=arguments, schema=dict(schema))
    except jsonschema.ValidationError as exc:
        return f"schema mismatch: {exc.message}"
    return None


def extract_tag(text: str, tag: str) -> str | None:
    """Content of the last complete ``<tag>...</tag>`` block, stripped."""
    open_tag, close_tag = f"<{tag}>", f"</{tag}>"
    end = text.rfind(close_tag)
    if end < 0:
        return None
    start = text.rfind(open_tag, 0, end)
    if start < 0:
        return None
    return text[start + len(open_tag) : end].strip()


def extract_boxed(text: str) -> str | None:
    """Content of the last brace-balanced ``\\boxed{...}`` in the text."""
    marker = "\\boxed{"
    idx = text.rfind(marker)
    while idx != -1:
        depth = 1
        pos = idx + len(marker)
        while pos < len(text) and depth > 0:
            if text[pos] == "{":
                depth += 1
            elif text[pos] == "}":
                depth -= 1
            pos += 1
        if depth == 0:
            return text[idx + len(marker) : pos - 1]
        idx = text.rfind(marker, 0, idx)
    return None


def extract_boxed_answer(text: str) -> str | None:
    """Boxed answer from the ``<answer>`` block of a tool/summarizer reply."""
    answer_block = extract_tag(text, "answer")
    if answer_block is None:
        return None
    return extract_boxed(answer_block)


class _UsageMeter:
    """Accumulates token usage and elapsed time across nested service calls."""

    def __init__(self) -> None:
        self.tokens = 0
        self.elapsed_ms = 0

    def add_chat(self, result: ChatResult) -> None:
        self.tokens += result.total_tokens
        self.elapsed_ms += result.elapsed_ms

    def add_elapsed(self, elapsed_ms: int) -> None:
        self.elapsed_ms += elapsed_ms


def _ok(spec: ToolSpec, value: Any, meter: _UsageMeter) -> Observation:
    return Observation(
        value=value,
        status=Status.OK,
        elapsed_ms=meter.elapsed_ms,
        cost_units=spec.cost_units,
        token_usage=meter.tokens,
    )


def _failure(spec: ToolSpec, status: Status, diagnostic: str, meter: _UsageMeter) -> Observation:
    return Observation(
        value=diagnostic,
        status=status,
        elapsed_ms=meter.elapsed_ms,
        cost_units=spec.cost_units,
        token_usage=meter.tokens,
        diagnostic=diagnostic,
    )


def _user_message(subtask: str, history_text: str | None = None) -> str:
    parts = []
    if history_text is not None:
        parts.append(f"<conversation_history>\n{history_text}\n</conversation_history>")
    parts.append(f"<user_query>\n{subtask}\n</user_query>")
    return "\n".join(parts)


def _complete(
    chat: ChatBackend,
    endpoint: ModelEndpoint,
    messages: Sequence[dict[str, str]],
    meter: _UsageMeter,
) -> ChatResult:
    result = chat.complete(
        model_id=endpoint.model_id,
        messages=messages,
        temperature=endpoint.temperature,
        max_tokens=endpoint.max_tokens,
        timeout_s=endpoint.timeout_s,
    )
    meter.add_chat(result)
    return result


def invoke_agent_tool(
    spec: ToolSpec,
    subtask: str,
    model_id: str,
    *,
    chat: ChatBackend,
    endpoints: Mapping[str, ModelEndpoint],
    prompts: PromptSet,
    sandbox: SandboxBackend | None = None,
    retrieval: RetrievalBackend | None = None,
    history_text: str | None = None,
    timeouts: ServiceTimeouts = ServiceTimeouts(),
) -> Observation:
    """Run one model-backed tool call end to end, never raising: remote or
    format failures come back as EXEC_ERR, deadline expiry as TIMEOUT."""
    meter = _UsageMeter()
    endpoint = endpoints.get(model_id)
    if endpoint is None:
        return _failure(
            spec, Status.EXEC_ERR, f"unknown model_id {model_id!r} (not in the pool)", meter
        )
    try:
        if spec.name == "code_reasoner":
            if sandbox is None:
                return _failure(spec, Status.EXEC_ERR, "no sandbox service configured", meter)
            return _run_code_reasoner(spec, subtask, chat, endpoint, prompts, sandbox, timeouts, meter)
        if spec.name == "knowledge_searcher":
            if retrieval is None:
                return _failure(spec, Status.EXEC_ERR, "no retrieval service configured", meter)
            return _run_knowledge_searcher(spec, subtask, chat, endpoint, prompts, retrieval, timeouts, meter)
        return _run_answering_tool(spec, subtask, chat, endpoint, prompts, history_text, meter)
    except ServiceTimeout as exc:
        return _failure(spec, Status.TIMEOUT, str(exc), meter)
    except ServiceError as exc:
        return _failure(spec, Status.EXEC_ERR, str(exc), meter)


def _run_answering_tool(
    spec: ToolSpec,
    subtask: str,
    chat: ChatBackend,
    endpoint: ModelEndpoint,
    prompts: PromptSet,
    history_text: str | None,
    meter: _UsageMeter,
) -> Observation:
    if spec.name == "critical_reviewer":
        system = prompts.critical_reviewer
        user = _user_message(subtask, history_text=history_text or "(empty)")
    else:
        system = prompts.standard_reasoner
        user = _user_message(subtask)
    result = _complete(
        chat, endpoint, [{"role": "system", "content": system}, {"role": "user", "content": user}], meter
    )
    answer = extract_tag(result.text, "answer")
    if answer is None:
        return _failure(spec, Status.EXEC_ERR, "tool output missing <answer> block", meter)
    value = {"reasoning": extract_tag(result.text, "reasoning"), "answer": answer}
    return _ok(spec, value, meter)


def _run_code_reasoner(
    spec: ToolSpec,
    subtask: str,
    chat: ChatBackend,
    endpoint: ModelEndpoint,
    prompts: PromptSet,
    sandbox: SandboxBackend,
    timeouts: ServiceTimeouts,
    meter: _UsageMeter,
) -> Observation:
    """Generate-and-execute loop, at most CODE_REASONER_MAX_ITERATIONS rounds,
    feeding execution output back so the model can repair failing scripts."""
    messages: list[dict[str, str]] = [
        {"role": "system", "content": prompts.code_reasoner},
        {"role": "user", "content": _user_message(subtask)},
    ]
    last: dict[str, Any] = {}
    timed_out = False
    for iteration in range(1, CODE_REASONER_MAX_ITERATIONS + 1):
        result = _complete(chat, endpoint, messages, meter)
        code = extract_tag(result.text, "code")
        if code is None:
            return _failure(spec, Status.EXEC_ERR, "tool output missing <code> block", meter)
        timed_out = False
        try:
            run = sandbox.run(code, timeout_s=timeouts.sandbox_s)
        except ServiceTimeout as exc:
            run = None
            execution_text = str(exc)
            timed_out = True
        if run is not None:
            meter.add_elapsed(run.elapsed_ms)
            timed_out = run.timed_out
            execution_text = run.stdout if not run.stderr else f"{run.stdout}\n{run.stderr}"
        last = {
            "reasoning": extract_tag(result.text, "reasoning"),
            "code": code,
            "stdout": run.stdout if run else "",
            "stderr": run.stderr if run else execution_text,
            "exit_status": run.exit_status if run else -1,
            "iterations": iteration,
        }
        succeeded = run is not None and run.exit_status == 0 and not timed_out
        if succeeded or iteration == CODE_REASONER_MAX_ITERATIONS:
            break
        messages.append({"role": "assistant", "content": result.text})
        messages.append(
            {
                "role": "user",
                "content": (
                    f"<execution_result>\n{execution_text}\n</execution_result>\n"
                    "The execution failed. Fix the code and output the corrected "
                    "full script in the <code> tag."
                ),
            }
        )
    if timed_out:
        return _failure(spec, Status.TIMEOUT, "code execution exceeded the wall-clock limit", meter)
    return _ok(spec, last, meter)


def _parse_query_block(block: str) -> list[str]:
    try:
        payload = json.loads(block)
        if isinstance(payload, list) and all(isinstance(q, str) for q in payload):
            return [q for q in payload if q.strip()]
    except (json.JSONDecodeError, ValueError):
        pass
    lines = [line.strip() for line in block.splitlines()]
    return [line for line in lines if line and not line.startswith("#")]


def _run_knowledge_searcher(
    spec: ToolSpec,
    subtask: str,
    chat: ChatBackend,
    endpoint: ModelEndpoint,
    prompts: PromptSet,
    retrieval: RetrievalBackend,
    timeouts: ServiceTimeouts,
    meter: _UsageMeter,
) -> Observation:
    messages = [
        {"role": "system", "content": prompts.knowledge_searcher},
        {"role": "user", "content": _user_message(subtask)},
    ]
    result = _complete(chat, endpoint, messages, meter)
    query_block = extract_tag(result.text, "query")
    if query_block is None:
        return _failure(spec, Status.EXEC_ERR, "tool output missing <query> block", meter)
    queries = _parse_query_block(query_block)
    if not queries:
        return _failure(spec, Status.EXEC_ERR, "no usable queries in <query> block", meter)
    search_obs = invoke_search(queries, retrieval=retrieval, timeout_s=timeouts.retrieval_s)
    meter.add_elapsed(search_obs.elapsed_ms)
    if search_obs.status is not Status.OK:
        return _failure(spec, search_obs.status, search_obs.diagnostic or "search failed", meter)
    value = {
        "reasoning": extract_tag(result.text, "reasoning"),
        "queries": queries,
        "passages": search_obs.value["passages"],
    }
    return _ok(spec, value, meter)


def invoke_search(
    query_list: Sequence[str],
    *,
    retrieval: RetrievalBackend,
    timeout_s: float = 15.0,
    max_parallel: int = 8,
    spec: ToolSpec | None = None,
) -> Observation:
    """Fan the queries out concurrently (one request each) and return the
    per-query passage lists. Zero cost."""
    spec = spec or _builtin_spec("search")
    meter = _UsageMeter()
    if not query_list:
        return Observation(
            value=None,
            status=Status.PARSE_ERR,
            cost_units=spec.cost_units,
            diagnostic="query_list must be non-empty",
        )
    try:
        if len(query_list) == 1:
            results = [retrieval.search([query_list[0]], timeout_s=timeout_s)]
        else:
            with ThreadPoolExecutor(max_workers=min(len(query_list), max_parallel)) as pool:
                futures = [
                    pool.submit(retrieval.search, [query], timeout_s=timeout_s)
                    for query in query_list
                ]
                results = [f.result() for f in futures]
    except ServiceTimeout as exc:
        return _failure(spec, Status.TIMEOUT, str(exc), meter)
    except ServiceError as exc:
        return _failure(spec, Status.EXEC_ERR, str(exc), meter)
    passages: list[list[str]] = []
    for result in results:
        meter.add_elapsed(result.elapsed_ms)
        passages.extend(result.passages)
    return _ok(spec, {"queries": list(query_list), "passages": passages}, meter)


def invoke_python(
    code: str,
    *,
    sandbox: SandboxBackend,
    timeout_s: float = 30.0,
    spec: ToolSpec | None = None,
) -> Observation:
    """Run code in the sandbox. Program errors are data (status stays OK with
    stderr in the value); only service failure or the wall-clock limit turn
    into non-OK statuses. Zero cost."""
    spec = spec or _builtin_spec("python")
    meter = _UsageMeter()
    try:
        result = sandbox.run(code, timeout_s=timeout_s)
    except ServiceTimeout as exc:
        return _failure(spec, Status.TIMEOUT, str(exc), meter)
    except ServiceError as exc:
        return _failure(spec, Status.EXEC_ERR, str(exc), meter)
    meter.add_elapsed(result.elapsed_ms)
    if result.timed_out:
        return _failure(spec, Status.TIMEOUT, "execution exceeded the wall-clock limit", meter)
    value = {
        "stdout": result.stdout,
        "stderr": result.stderr,
        "exit_status": result.exit_status,
    }
    return _ok(spec, value, meter)


def invoke_ensemble(
    question: str,
    *,
    chat: ChatBackend,
    endpoints: Mapping[str, ModelEndpoint],
    model_id: str,
    prompts: PromptSet,
    samples: int = ENSEMBLE_SAMPLES,
    spec: ToolSpec | None = None,
) -> Observation:
    """Sample several independent reasoner solutions for the question and
    return the modal boxed answer with vote counts. Ties break to the
    lexicographically smallest normalized answer."""
    spec = spec or _builtin_spec("ensemble_solver")
    meter = _UsageMeter()
    endpoint = endpoints.get(model_id)
    if endpoint is None:
        return _failure(spec, Status.EXEC_ERR, f"unknown model_id {model_id!r} (not in the pool)", meter)
    messages = [
        {"role": "system", "content": prompts.standard_reasoner},
        {"role": "user", "content": _user_message(question)},
    ]

    def one_sample() -> tuple[str | None, ChatResult | None, str | None]:
        try:
            result = chat.complete(
                model_id=endpoint.model_id,
                messages=messages,
                temperature=endpoint.temperature,
                max_tokens=endpoint.max_tokens,
                timeout_s=endpoint.timeout_s,
            )
        except ServiceError as exc:
            return None, None, str(exc)
        boxed = extract_boxed_answer(result.text)
        if boxed is None:
            return None, result, "sample missing a boxed answer"
        return boxed, result, None

    with ThreadPoolExecutor(max_workers=samples) as pool:
        outcomes = [f.result() for f in [pool.submit(one_sample) for _ in range(samples)]]

    votes: dict[str, int] = {}
    errors: list[str] = []
    for boxed, result, error in outcomes:
        if result is not None:
            meter.add_chat(result)
        if boxed is None:
            errors.append(error or "sample failed")
        else:
            key = normalize_answer(boxed)
            votes[key] = votes.get(key, 0) + 1
    if not votes:
        return _failure(spec, Status.EXEC_ERR, "; ".join(errors) or "all samples failed", meter)
    best = min(votes.items(), key=lambda kv: (-kv[1], kv[0]))[0]
    ordered = dict(sorted(votes.items(), key=lambda kv: (-kv[1], kv[0])))
    value = {"answer": best, "votes": ordered, "samples_succeeded": sum(votes.values())}
    return _ok(spec, value, meter)


def _builtin_spec(name: str) -> ToolSpec:
    for row in BUILTIN_TOOL_TABLE:
        if row[0] == name:
            return ToolSpec(
                name=row[0],
                description=row[1],
                parameter_schema=row[2],
                cost_units=row[3],
                kind=row[4],
                subtool=row[5],
            )
    raise KeyError(name)


def register_builtin_tools(
    pool_config: Mapping[str, ModelEndpoint],
    default_model: str,
    *,
    chat: ChatBackend,
    retrieval: RetrievalBackend,
    sandbox: SandboxBackend,
    prompts: PromptSet | None = None,
    timeouts: ServiceTimeouts = ServiceTimeouts(),
) -> ToolRegistry:
    """Build the registry of all eight built-in tools over a model pool.

    Agent tools default a missing ``subtask`` to the original question and a
    missing ``model_id`` to ``default_model``.
    """
    if not pool_config:
        raise ConfigurationError("pool_config must contain at least one endpoint")
    if default_model not in pool_config:
        raise ConfigurationError(
            f"default model {default_model!r} is not in the pool "
            f"({sorted(pool_config)})"
        )
    prompts = prompts or load_prompts()
    endpoints = dict(pool_config)

    def agent_adapter(name: str) -> Adapter:
        spec = _builtin_spec(name)

        def run(arguments: dict[str, Any], ctx: CallContext) -> Observation:
            subtask = arguments.get("subtask") or ctx.question or ""
            model_id = arguments.get("model_id") or default_model
            return invoke_agent_tool(
                spec,
                subtask,
                model_id,
                chat=chat,
                endpoints=endpoints,
                prompts=prompts,
                sandbox=sandbox,
                retrieval=retrieval,
                history_text=ctx.history_text,
                timeouts=timeouts,
            )

        return run

    def search_adapter(arguments: dict[str, Any], ctx: CallContext) -> Observation:
        return invoke_search(
            arguments.get("query_list", []),
            retrieval=retrieval,
            timeout_s=timeouts.retrieval_s,
        )

    def python_adapter(arguments: dict[str, Any], ctx: CallContext) -> Observation:
        return invoke_python(
            arguments.get("code", ""), sandbox=sandbox, timeout_s=timeouts.sandbox_s
        )

    def ensemble_adapter(arguments: dict[str, Any], ctx: CallContext) -> Observation:
        question = arguments.get("subtask") or ctx.question or ""
        model_id = arguments.get("model_id") or default_model
        return invoke_ensemble(
            question,
            chat=chat,
            endpoints=endpoints,
            model_id=model_id,
            prompts=prompts,
        )

    def final_answer_adapter(arguments: dict[str, Any], ctx: CallContext) -> Observation:
        # Termination marker; the orchestrator swaps in the synthesis result.
        spec = _builtin_spec(FINAL_ANSWER_TOOL)
        return Observation(
            value={"signal": FINAL_ANSWER_TOOL},
            status=Status.OK,
            cost_units=spec.cost_units,
        )

    specs = {row[0]: _builtin_spec(row[0]) for row in BUILTIN_TOOL_TABLE}
    adapters: dict[str, Adapter] = {
        "standard_reasoner": agent_adapter("standard_reasoner"),
        "critical_reviewer": agent_adapter("critical_reviewer"),
        "knowledge_searcher": agent_adapter("knowledge_searcher"),
        "search": search_adapter,
        "code_reasoner": agent_adapter("code_reasoner"),
        "python": python_adapter,
        "ensemble_solver": ensemble_adapter,
        FINAL_ANSWER_TOOL: final_answer_adapter,
    }
    return ToolRegistry(
        specs=specs,
        adapters=adapters,
        model_pool=tuple(endpoints),
        default_model=default_model,
    )
