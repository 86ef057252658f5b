"""paraorch: multi-round parallel agent/tool orchestration runtime.

Public surface: the wire protocol and trajectory types, the built-in tool
registry, the round executor, the episode orchestrator, reward scoring,
group-relative policy-optimization math, data-curation pipelines, fault
injection, and the evaluation harness.
"""

from .config import EvalSettings, PoolSettings, RuntimeConfig, ServiceSettings, load_config
from .data_curation import (
    CurationConfig,
    SampledInstance,
    dedup_against,
    dominant_tool,
    enforce_tool_balance,
    filter_rl_instances,
    has_recovery,
    select_sft_trajectory,
)
from .eval_harness import run_eval, run_fault_scenario
from .executor import ValidationReport, execute_round, validate
from .fault_lab import FaultEntry, FaultSchedule, load_schedule, usage_report, wrap_registry
from .orchestrator import (
    Budget,
    EpisodeError,
    OrchestratorConfig,
    OrchestratorState,
    PolicyBackend,
    PolicyBackendError,
    PolicyResponse,
    RemoteChatPolicy,
    ScriptedPolicy,
    render_history,
    render_state,
    run_episode,
    synthesize_final_answer,
)
from .prompts import PromptSet, load_prompts
from .protocol import (
    FINAL_ANSWER_TOOL,
    LinearizedSequence,
    ManagerTurn,
    Observation,
    RoundRecord,
    Status,
    ToolCallRequest,
    Trajectory,
    check_format,
    linearize,
    parse_manager_turn,
    read_trajectories_jsonl,
    render_manager_turn,
    whitespace_tokenizer,
    write_trajectories_jsonl,
)
from .rewards import (
    RewardBreakdown,
    RewardConfig,
    cost_reward,
    length_reward,
    normalize_answer,
    reward_diversity,
    reward_efficiency,
    reward_format,
    reward_task,
    reward_total,
)
from .rl_math import (
    Group,
    GrpoConfig,
    clipped_surrogate,
    group_advantages,
    masked_ratio,
    masked_sft_nll,
)
from .services import (
    ChatResult,
    HttpChatBackend,
    HttpRetrievalBackend,
    HttpSandboxBackend,
    MockChatBackend,
    MockProgram,
    MockRetrievalBackend,
    MockSandboxBackend,
    PooledChatBackend,
    RetrievalResult,
    SandboxResult,
    ServiceError,
    ServiceTimeout,
)
from .tool_pool import (
    BUILTIN_COSTS,
    CallContext,
    ConfigurationError,
    ModelEndpoint,
    ServiceTimeouts,
    ToolKind,
    ToolRegistry,
    ToolSpec,
    extract_boxed,
    extract_boxed_answer,
    invoke_agent_tool,
    invoke_ensemble,
    invoke_python,
    invoke_search,
    register_builtin_tools,
)

__version__ = "0.1.0"
