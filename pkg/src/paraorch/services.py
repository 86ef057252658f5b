"""Clients for the three external services: chat completions, retrieval, sandbox.

Each service has an HTTP client speaking the documented wire schema and an
in-process mock that is deterministic under a fixed seed. Mocks are
first-class adapters so the whole runtime can execute with no network; they
report scripted latencies so persisted output stays byte-stable.
"""

from __future__ import annotations

import hashlib
import threading
import time
from dataclasses import dataclass
from typing import Any, Protocol, Sequence

import requests


class ServiceError(RuntimeError):
    """Remote service failed (network error, bad payload, non-2xx)."""


class ServiceTimeout(ServiceError):
    """Remote service did not answer within the deadline."""


@dataclass
class ChatResult:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    elapsed_ms: int = 0

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


@dataclass
class RetrievalResult:
    passages: list[list[str]]  # one passage list per query
    elapsed_ms: int = 0


@dataclass
class SandboxResult:
    stdout: str
    stderr: str
    exit_status: int
    elapsed_ms: int = 0
    timed_out: bool = False


class ChatBackend(Protocol):
    def complete(
        self,
        *,
        model_id: str,
        messages: Sequence[dict[str, str]],
        temperature: float,
        max_tokens: int,
        timeout_s: float,
    ) -> ChatResult: ...


class RetrievalBackend(Protocol):
    def search(self, query_list: Sequence[str], *, timeout_s: float) -> RetrievalResult: ...


class SandboxBackend(Protocol):
    def run(self, code: str, *, timeout_s: float) -> SandboxResult: ...


def _stable_digest(*parts: Any) -> str:
    blob = "\x1f".join(str(p) for p in parts)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class HttpChatBackend:
    """Chat-completions client compatible with the open de-facto schema.

    Request: POST ``{base_url}/chat/completions`` with model, messages,
    temperature, max_tokens. Response: choices[0].message.content plus usage
    token counts.
    """

    def __init__(self, base_url: str, api_key: str | None = None):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key

    def complete(
        self,
        *,
        model_id: str,
        messages: Sequence[dict[str, str]],
        temperature: float,
        max_tokens: int,
        timeout_s: float,
    ) -> ChatResult:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {
            "model": model_id,
            "messages": list(messages),
            "temperature": temperature,
            "max_tokens": max_tokens,
        }
        started = time.monotonic()
        try:
            response = requests.post(
                f"{self.base_url}/chat/completions",
                json=payload,
                headers=headers,
                timeout=timeout_s,
            )
            response.raise_for_status()
            data = response.json()
        except requests.Timeout as exc:
            raise ServiceTimeout(f"chat completion timed out after {timeout_s}s") from exc
        except requests.RequestException as exc:
            raise ServiceError(f"chat completion failed: {exc}") from exc
        elapsed_ms = int((time.monotonic() - started) * 1000)
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ServiceError(f"malformed chat response: {data!r}") from exc
        usage = data.get("usage") or {}
        return ChatResult(
            text=text,
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
            elapsed_ms=elapsed_ms,
        )


class MockChatBackend:
    """Deterministic chat backend for tests and offline runs.

    ``script`` entries are served first, in order; an entry may be a response
    string or an exception instance to raise. Once the script is exhausted
    (or absent) the mock synthesizes a response matching the output format
    the system prompt asks for (answer / code / query tags), seeded by the
    request content. ``answer_book`` maps a question substring to the boxed
    answer the mock should produce.
    """

    def __init__(
        self,
        seed: int = 0,
        script: Sequence[str | Exception] | None = None,
        answer_book: dict[str, str] | None = None,
        latency_s: float = 0.0,
        simulate_latency: bool = False,
    ):
        self.seed = seed
        self.script: list[str | Exception] = list(script or [])
        self.answer_book = dict(answer_book or {})
        self.latency_s = latency_s
        self.simulate_latency = simulate_latency
        self.requests: list[dict[str, Any]] = []
        self._lock = threading.Lock()

    def complete(
        self,
        *,
        model_id: str,
        messages: Sequence[dict[str, str]],
        temperature: float,
        max_tokens: int,
        timeout_s: float,
    ) -> ChatResult:
        with self._lock:
            self.requests.append({"model_id": model_id, "messages": list(messages)})
            entry = self.script.pop(0) if self.script else None
        if self.simulate_latency and self.latency_s:
            time.sleep(self.latency_s)
        if isinstance(entry, Exception):
            raise entry
        text = entry if entry is not None else self._synthesize(messages)
        prompt_text = " ".join(m.get("content", "") for m in messages)
        return ChatResult(
            text=text,
            prompt_tokens=len(prompt_text.split()),
            completion_tokens=len(text.split()),
            elapsed_ms=int(self.latency_s * 1000),
        )

    def _synthesize(self, messages: Sequence[dict[str, str]]) -> str:
        system = next((m["content"] for m in messages if m.get("role") == "system"), "")
        user = next(
            (m["content"] for m in reversed(list(messages)) if m.get("role") == "user"), ""
        )
        digest = _stable_digest(self.seed, system, user)[:8]
        if "<code>" in system:
            return (
                f"<reasoning>mock plan {digest}</reasoning>\n"
                f"<code>print('mock {digest}')</code>"
            )
        if "<query>" in system:
            return (
                f"<reasoning>mock search plan {digest}</reasoning>\n"
                f'<query>["mock query {digest}"]</query>'
            )
        answer = self._lookup_answer(user, digest)
        return (
            f"<reasoning>mock reasoning {digest}</reasoning>\n"
            f"<answer>\\boxed{{{answer}}}</answer>"
        )

    def _lookup_answer(self, user_text: str, digest: str) -> str:
        for needle, answer in self.answer_book.items():
            if needle in user_text:
                return answer
        return str(int(digest, 16) % 1000)


class PooledChatBackend:
    """Routes chat requests to per-model backends (pools whose endpoints live
    on different hosts)."""

    def __init__(self, backends: dict[str, ChatBackend]):
        if not backends:
            raise ValueError("PooledChatBackend needs at least one backend")
        self.backends = dict(backends)

    def complete(self, *, model_id: str, **kwargs: Any) -> ChatResult:
        backend = self.backends.get(model_id)
        if backend is None:
            raise ServiceError(f"no chat backend registered for model {model_id!r}")
        return backend.complete(model_id=model_id, **kwargs)


class HttpRetrievalBackend:
    """Retrieval client. Request: ``{"query_list": [...]}``; response:
    ``{"passages": [[...], ...]}`` with one passage list per query."""

    def __init__(self, url: str):
        self.url = url

    def search(self, query_list: Sequence[str], *, timeout_s: float) -> RetrievalResult:
        started = time.monotonic()
        try:
            response = requests.post(
                self.url, json={"query_list": list(query_list)}, timeout=timeout_s
            )
            response.raise_for_status()
            data = response.json()
        except requests.Timeout as exc:
            raise ServiceTimeout(f"retrieval timed out after {timeout_s}s") from exc
        except requests.RequestException as exc:
            raise ServiceError(f"retrieval failed: {exc}") from exc
        passages = data.get("passages")
        if not isinstance(passages, list):
            raise ServiceError(f"malformed retrieval response: {data!r}")
        return RetrievalResult(
            passages=[list(p) for p in passages],
            elapsed_ms=int((time.monotonic() - started) * 1000),
        )


class MockRetrievalBackend:
    """Seeded retrieval mock: exact corpus hits, synthetic passages otherwise."""

    def __init__(
        self,
        corpus: dict[str, list[str]] | None = None,
        seed: int = 0,
        failures: Sequence[Exception] | None = None,
        latency_s: float = 0.0,
        simulate_latency: bool = False,
    ):
        self.corpus = dict(corpus or {})
        self.seed = seed
        self.failures: list[Exception] = list(failures or [])
        self.latency_s = latency_s
        self.simulate_latency = simulate_latency
        self.requests: list[list[str]] = []
        self._lock = threading.Lock()

    def search(self, query_list: Sequence[str], *, timeout_s: float) -> RetrievalResult:
        with self._lock:
            self.requests.append(list(query_list))
            failure = self.failures.pop(0) if self.failures else None
        if self.simulate_latency and self.latency_s:
            time.sleep(self.latency_s)
        if failure is not None:
            raise failure
        passages = []
        for query in query_list:
            if query in self.corpus:
                passages.append(list(self.corpus[query]))
            else:
                digest = _stable_digest(self.seed, query)[:8]
                passages.append([f"synthetic passage {digest} for: {query}"])
        return RetrievalResult(passages=passages, elapsed_ms=int(self.latency_s * 1000))


class HttpSandboxBackend:
    """Sandbox client. Request: ``{"code": ..., "timeout": ...}``; response:
    ``{"stdout": ..., "stderr": ..., "exit_status": ...}``."""

    def __init__(self, url: str):
        self.url = url

    def run(self, code: str, *, timeout_s: float) -> SandboxResult:
        started = time.monotonic()
        try:
            response = requests.post(
                self.url,
                json={"code": code, "timeout": timeout_s},
                timeout=timeout_s + 5.0,
            )
            response.raise_for_status()
            data = response.json()
        except requests.Timeout as exc:
            raise ServiceTimeout(f"sandbox timed out after {timeout_s}s") from exc
        except requests.RequestException as exc:
            raise ServiceError(f"sandbox failed: {exc}") from exc
        return SandboxResult(
            stdout=str(data.get("stdout", "")),
            stderr=str(data.get("stderr", "")),
            exit_status=int(data.get("exit_status", 0)),
            elapsed_ms=int((time.monotonic() - started) * 1000),
            timed_out=bool(data.get("timed_out", False)),
        )


@dataclass
class MockProgram:
    """Scripted behavior of one code string inside the sandbox mock."""

    stdout: str = ""
    stderr: str = ""
    exit_status: int = 0
    duration_s: float = 0.0  # simulated; exceeding the limit yields a timeout


class MockSandboxBackend:
    """Scripted sandbox: known code strings map to fixed results, everything
    else echoes a seeded digest. Simulated durations beyond the wall-clock
    limit surface as timeouts without real sleeping."""

    def __init__(
        self,
        programs: dict[str, MockProgram] | None = None,
        seed: int = 0,
        failures: Sequence[Exception] | None = None,
    ):
        self.programs = dict(programs or {})
        self.seed = seed
        self.failures: list[Exception] = list(failures or [])
        self.requests: list[str] = []
        self._lock = threading.Lock()

    def run(self, code: str, *, timeout_s: float) -> SandboxResult:
        with self._lock:
            self.requests.append(code)
            failure = self.failures.pop(0) if self.failures else None
        if failure is not None:
            raise failure
        program = self.programs.get(code)
        if program is None:
            digest = _stable_digest(self.seed, code)[:8]
            return SandboxResult(stdout=f"mock-stdout {digest}", stderr="", exit_status=0)
        if program.duration_s > timeout_s:
            raise ServiceTimeout(
                f"sandbox execution exceeded the {timeout_s}s wall-clock limit"
            )
        return SandboxResult(
            stdout=program.stdout,
            stderr=program.stderr,
            exit_status=program.exit_status,
            elapsed_ms=int(program.duration_s * 1000),
        )
