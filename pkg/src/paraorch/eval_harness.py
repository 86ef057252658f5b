"""Batch evaluation: k independent episodes per question, mean@k scoring,
and trajectory persistence.

Episodes run concurrently up to ``episode_parallelism`` but results are
assembled in (question, sample) order, so mock-mode output is byte-identical
across runs with the same seed. A failed episode counts as incorrect and is
persisted with its error; it never aborts the batch.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .config import RuntimeConfig
from .orchestrator import (
    EpisodeError,
    PolicyBackend,
    RemoteChatPolicy,
    ScriptedPolicy,
    run_episode,
)
from .protocol import (
    ToolCallRequest,
    Trajectory,
    render_manager_turn,
    write_trajectories_jsonl,
)
from .rewards import reward_task
from .services import (
    ChatBackend,
    HttpChatBackend,
    HttpRetrievalBackend,
    HttpSandboxBackend,
    MockChatBackend,
    MockRetrievalBackend,
    MockSandboxBackend,
    PooledChatBackend,
)
from .tool_pool import ConfigurationError, ToolRegistry, register_builtin_tools

TRAJECTORIES_FILENAME = "trajectories.jsonl"
SUMMARY_FILENAME = "summary.json"


def load_questions(path: str) -> list[dict[str, str]]:
    """Questions file: JSONL with a required ``question`` field and an
    optional ``id`` (defaults to the line index)."""
    rows = _read_jsonl(path)
    questions = []
    for idx, row in enumerate(rows):
        if "question" not in row:
            raise ConfigurationError(f"{path}:{idx + 1}: missing 'question' field")
        questions.append({"id": str(row.get("id", idx)), "question": str(row["question"])})
    return questions


def load_ground_truth(path: str, questions: list[dict[str, str]]) -> list[str]:
    """Ground-truth file: JSONL with ``answer`` and optional ``id``; matched
    by id when present on every row, by position otherwise."""
    rows = _read_jsonl(path)
    for idx, row in enumerate(rows):
        if "answer" not in row:
            raise ConfigurationError(f"{path}:{idx + 1}: missing 'answer' field")
    if rows and all("id" in row for row in rows):
        by_id = {str(row["id"]): str(row["answer"]) for row in rows}
        try:
            return [by_id[q["id"]] for q in questions]
        except KeyError as exc:
            raise ConfigurationError(f"no ground truth for question id {exc}") from exc
    if len(rows) != len(questions):
        raise ConfigurationError(
            f"{len(questions)} questions but {len(rows)} ground-truth rows"
        )
    return [str(row["answer"]) for row in rows]


def _read_jsonl(path: str) -> list[dict]:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return [json.loads(line) for line in handle if line.strip()]
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from exc


def _episode_digest(seed: int, q_idx: int, s_idx: int, salt: str = "") -> str:
    blob = f"{seed}:{q_idx}:{s_idx}:{salt}"
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _mock_is_correct(cfg: RuntimeConfig, q_idx: int, s_idx: int) -> bool:
    schedule = cfg.eval.mock_schedule
    if schedule is not None:
        try:
            return bool(schedule[q_idx][s_idx])
        except (IndexError, TypeError) as exc:
            raise ConfigurationError(
                f"mock_schedule has no entry for question {q_idx}, sample {s_idx}"
            ) from exc
    coin = int(_episode_digest(cfg.eval.seed or 0, q_idx, s_idx, "coin")[:8], 16)
    return (coin / 0xFFFFFFFF) < cfg.eval.mock_correct_rate


def build_mock_episode(
    cfg: RuntimeConfig, q_idx: int, s_idx: int, question: str, ground_truth: str
) -> tuple[PolicyBackend, ToolRegistry, ChatBackend]:
    """Deterministic per-episode world: a two-round scripted policy (probe
    with python, then terminate) over mock services, with the summarizer
    scripted to answer correctly or not per the configured schedule."""
    seed = cfg.eval.seed or 0
    digest = _episode_digest(seed, q_idx, s_idx)[:8]
    turns = [
        render_manager_turn(
            f"Probe case {q_idx} with an isolated computation before answering.",
            [ToolCallRequest("python", {"code": f"print('probe {digest}')"})],
        ),
        render_manager_turn(
            "Evidence collected; submitting the final answer.",
            [ToolCallRequest("final_answer", {})],
        ),
    ]
    policy = ScriptedPolicy(turns)
    registry = register_builtin_tools(
        cfg.pool.endpoints,
        cfg.pool.default_model,
        chat=MockChatBackend(seed=seed),
        retrieval=MockRetrievalBackend(seed=seed),
        sandbox=MockSandboxBackend(seed=seed),
        prompts=cfg.orchestrator.prompt_set(),
        timeouts=cfg.services.timeouts(),
    )
    answer = ground_truth if _mock_is_correct(cfg, q_idx, s_idx) else f"{ground_truth}-wrong-{digest}"
    summarizer = MockChatBackend(
        seed=seed,
        script=[
            "<reasoning>Consolidated the probe evidence.</reasoning>\n"
            f"<answer>\\boxed{{{answer}}}</answer>"
        ],
    )
    return policy, registry, summarizer


def build_remote_episode(cfg: RuntimeConfig) -> tuple[PolicyBackend, ToolRegistry, ChatBackend]:
    """Shared remote wiring: pooled chat clients per endpoint plus the
    retrieval and sandbox services from the config."""
    chat = PooledChatBackend(
        {
            endpoint.model_id: HttpChatBackend(endpoint.base_url, cfg.services.api_key)
            for endpoint in cfg.pool.endpoints.values()
        }
    )
    registry = register_builtin_tools(
        cfg.pool.endpoints,
        cfg.pool.default_model,
        chat=chat,
        retrieval=HttpRetrievalBackend(cfg.services.retrieval_url),
        sandbox=HttpSandboxBackend(cfg.services.sandbox_url),
        prompts=cfg.orchestrator.prompt_set(),
        timeouts=cfg.services.timeouts(),
    )
    manager_endpoint = cfg.pool.endpoints[cfg.pool.default_model]
    policy = RemoteChatPolicy(manager_endpoint, chat)
    summarizer_endpoint = cfg.orchestrator.summarizer_endpoint
    if summarizer_endpoint is None:
        raise ConfigurationError("remote mode requires a summarizer endpoint")
    summarizer = HttpChatBackend(summarizer_endpoint.base_url, cfg.services.api_key)
    return policy, registry, summarizer


def _run_one_episode(
    cfg: RuntimeConfig, q_idx: int, s_idx: int, question: str, ground_truth: str
) -> tuple[Trajectory, int]:
    if cfg.eval.backend_mode == "mock":
        policy, registry, summarizer = build_mock_episode(cfg, q_idx, s_idx, question, ground_truth)
    else:
        policy, registry, summarizer = build_remote_episode(cfg)
    try:
        traj = run_episode(question, policy, registry, cfg.orchestrator, summarizer=summarizer)
    except EpisodeError as exc:
        traj = Trajectory(question=question, error=str(exc))
        return traj, 0
    return traj, reward_task(traj, ground_truth)


def run_fault_scenario(cfg: RuntimeConfig, schedule) -> list[Trajectory]:
    """Run one mock episode per question under a fault schedule.

    The scripted policy probes with python, retries the computation once
    (python plus an independent reasoner check), then terminates, so an
    injected round-1 fault followed by a clean round 2 manufactures exactly
    the recovery shape the curation rules look for.
    """
    from .fault_lab import wrap_registry

    if not cfg.eval.questions_file or not cfg.eval.ground_truth_file:
        raise ConfigurationError("fault-run requires questions_file and ground_truth_file")
    questions = load_questions(cfg.eval.questions_file)
    answers = load_ground_truth(cfg.eval.ground_truth_file, questions)
    seed = cfg.eval.seed or 0

    trajectories = []
    for q_idx, row in enumerate(questions):
        digest = _episode_digest(seed, q_idx, 0)[:8]
        turns = [
            render_manager_turn(
                f"Probe case {q_idx} with an isolated computation.",
                [ToolCallRequest("python", {"code": f"print('probe {digest}')"})],
            ),
            render_manager_turn(
                "Previous round reported a failure; rerun the computation and "
                "cross-check with a reasoner.",
                [
                    ToolCallRequest("python", {"code": f"print('retry {digest}')"}),
                    ToolCallRequest("standard_reasoner", {"subtask": row["question"]}),
                ],
            ),
            render_manager_turn(
                "Evidence collected; submitting the final answer.",
                [ToolCallRequest("final_answer", {})],
            ),
        ]
        policy = ScriptedPolicy(turns)
        registry = register_builtin_tools(
            cfg.pool.endpoints,
            cfg.pool.default_model,
            chat=MockChatBackend(seed=seed),
            retrieval=MockRetrievalBackend(seed=seed),
            sandbox=MockSandboxBackend(seed=seed),
            prompts=cfg.orchestrator.prompt_set(),
            timeouts=cfg.services.timeouts(),
        )
        registry = wrap_registry(registry, schedule)
        summarizer = MockChatBackend(
            seed=seed,
            script=[
                "<reasoning>Consolidated the collected evidence.</reasoning>\n"
                f"<answer>\\boxed{{{answers[q_idx]}}}</answer>"
            ],
        )
        trajectories.append(
            run_episode(row["question"], policy, registry, cfg.orchestrator, summarizer=summarizer)
        )

    out_dir = Path(cfg.eval.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_trajectories_jsonl(str(out_dir / TRAJECTORIES_FILENAME), trajectories)
    return trajectories


def run_eval(cfg: RuntimeConfig) -> dict:
    """Run k independent episodes per question, persist every trajectory and
    a summary, and report per-question means plus the corpus mean@k."""
    if not cfg.eval.questions_file or not cfg.eval.ground_truth_file:
        raise ConfigurationError("eval requires questions_file and ground_truth_file")
    questions = load_questions(cfg.eval.questions_file)
    answers = load_ground_truth(cfg.eval.ground_truth_file, questions)
    k = cfg.eval.k

    jobs = [
        (q_idx, s_idx, row["question"], answers[q_idx])
        for q_idx, row in enumerate(questions)
        for s_idx in range(k)
    ]
    results: dict[tuple[int, int], tuple[Trajectory, int]] = {}
    with ThreadPoolExecutor(max_workers=cfg.eval.episode_parallelism) as pool:
        futures = {
            (q_idx, s_idx): pool.submit(_run_one_episode, cfg, q_idx, s_idx, question, answer)
            for q_idx, s_idx, question, answer in jobs
        }
        for key, future in futures.items():
            results[key] = future.result()

    per_question = []
    trajectories = []
    for q_idx, row in enumerate(questions):
        correctness = []
        for s_idx in range(k):
            traj, correct = results[(q_idx, s_idx)]
            trajectories.append(traj)
            correctness.append(correct)
        per_question.append(
            {
                "id": row["id"],
                "question": row["question"],
                "correct": correctness,
                "mean": sum(correctness) / k,
            }
        )
    mean_at_k = sum(q["mean"] for q in per_question) / len(per_question)

    out_dir = Path(cfg.eval.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_trajectories_jsonl(str(out_dir / TRAJECTORIES_FILENAME), trajectories)
    summary = {
        "k": k,
        "num_questions": len(questions),
        "backend_mode": cfg.eval.backend_mode,
        "seed": cfg.eval.seed,
        "questions": per_question,
        "mean_at_k": mean_at_k,
    }
    with open(out_dir / SUMMARY_FILENAME, "w", encoding="utf-8") as handle:
        json.dump(summary, handle, ensure_ascii=False, indent=2)
        handle.write("\n")
    return summary
