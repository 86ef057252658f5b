"""Command-line entry point.

Subcommands: ``run`` (episode batches), ``score`` (reward breakdowns),
``grpo-score`` (group advantages/ratios/surrogate), ``curate`` (data
pipelines), ``validate-config``, and ``fault-run`` (fault-injection
scenarios with a usage report). Every config field can be overridden with
repeated ``--set section.field=value`` flags.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import RuntimeConfig, load_config
from .data_curation import (
    SampledInstance,
    dedup_against,
    dominant_tool,
    enforce_tool_balance,
    filter_rl_instances,
    normalize_question,
    select_sft_trajectory,
)
from .eval_harness import run_eval, run_fault_scenario
from .fault_lab import load_schedule, plot_usage, usage_report
from .protocol import LinearizedSequence, Trajectory, read_trajectories_jsonl
from .rewards import reward_task, reward_total
from .rl_math import Group, clipped_surrogate, group_advantages, masked_ratio, masked_sft_nll
from .tool_pool import ConfigurationError


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.FIELD=VALUE",
        help="override any config field (repeatable)",
    )


def _load(args: argparse.Namespace, extra: dict | None = None) -> RuntimeConfig:
    overrides: dict = {}
    for item in args.overrides:
        if "=" not in item:
            raise ConfigurationError(f"--set expects SECTION.FIELD=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value
    if extra:
        overrides.update({k: v for k, v in extra.items() if v is not None})
    return load_config(args.config, overrides)


def cmd_run(args: argparse.Namespace) -> int:
    extra = {
        "eval.questions_file": args.questions,
        "eval.ground_truth_file": args.ground_truth,
        "eval.output_dir": args.output_dir,
        "eval.k": args.k,
        "eval.seed": args.seed,
        "eval.backend_mode": args.backend_mode,
        "eval.episode_parallelism": args.episode_parallelism,
    }
    cfg = _load(args, extra)
    summary = run_eval(cfg)
    print(json.dumps({"mean_at_k": summary["mean_at_k"], "k": summary["k"]}, indent=2))
    print(f"wrote {cfg.eval.output_dir}/trajectories.jsonl and summary.json")
    return 0


def _ground_truth_for_trajectories(path: str, trajectories: list[Trajectory]) -> list[str]:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            rows = [json.loads(line) for line in handle if line.strip()]
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from exc
    for idx, row in enumerate(rows):
        if "answer" not in row:
            raise ConfigurationError(f"{path}:{idx + 1}: missing 'answer' field")
    if rows and all("question" in row for row in rows):
        by_question = {normalize_question(str(r["question"])): str(r["answer"]) for r in rows}
        answers = []
        for traj in trajectories:
            key = normalize_question(traj.question)
            if key not in by_question:
                raise ConfigurationError(f"no ground truth for question {traj.question!r}")
            answers.append(by_question[key])
        return answers
    if len(rows) != len(trajectories):
        raise ConfigurationError(
            f"{len(trajectories)} trajectories but {len(rows)} ground-truth rows"
        )
    return [str(r["answer"]) for r in rows]


def cmd_score(args: argparse.Namespace) -> int:
    cfg = _load(args)
    trajectories = read_trajectories_jsonl(args.trajectories)
    if not trajectories:
        raise ConfigurationError("no trajectories to score")
    answers = _ground_truth_for_trajectories(args.ground_truth, trajectories)
    breakdowns = [
        reward_total(traj, answer, cfg.rewards)
        for traj, answer in zip(trajectories, answers)
    ]
    out = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    try:
        for breakdown in breakdowns:
            out.write(json.dumps(breakdown.to_dict(), ensure_ascii=False))
            out.write("\n")
    finally:
        if args.output:
            out.close()
    n = len(breakdowns)
    aggregate = {
        "trajectories": n,
        "mean_total": sum(b.total for b in breakdowns) / n,
        "mean_task": sum(b.task for b in breakdowns) / n,
        "mean_format": sum(b.format for b in breakdowns) / n,
        "mean_diversity": sum(b.diversity for b in breakdowns) / n,
        "mean_efficiency": sum(b.efficiency for b in breakdowns) / n,
    }
    print(json.dumps(aggregate, indent=2))
    return 0


def cmd_grpo_score(args: argparse.Namespace) -> int:
    cfg = _load(args)
    with open(args.group, "r", encoding="utf-8") as handle:
        data = json.load(handle)
    rewards = [float(r) for r in data["rewards"]]
    sequences = [
        LinearizedSequence(
            tokens=seq["tokens"],
            mask=[int(m) for m in seq["mask"]],
            logp_new=seq.get("logp_new"),
            logp_old=seq.get("logp_old"),
        )
        for seq in data["sequences"]
    ]
    group = Group(rewards=rewards, sequences=sequences)
    advantages = group_advantages(rewards, cfg.grpo.delta)
    result = {
        "advantages": advantages,
        "ratios": [masked_ratio(seq) for seq in sequences],
        "surrogate": clipped_surrogate(group, advantages, cfg.grpo),
        "sft_nll": [
            masked_sft_nll(seq) if seq.logp_new is not None else None for seq in sequences
        ],
    }
    payload = json.dumps(result, ensure_ascii=False, indent=2)
    if args.output:
        Path(args.output).write_text(payload + "\n", encoding="utf-8")
    print(payload)
    return 0


def _load_instances(path: str, cfg: RuntimeConfig) -> list[SampledInstance]:
    instances = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, 1):
            if not line.strip():
                continue
            row = json.loads(line)
            try:
                trajectories = [Trajectory.from_dict(t) for t in row["trajectories"]]
                correctness = row.get("correctness")
                if correctness is None:
                    correctness = [
                        reward_task(t, row["ground_truth"]) for t in trajectories
                    ]
                instances.append(
                    SampledInstance(
                        question=row["question"],
                        ground_truth=row["ground_truth"],
                        trajectories=trajectories,
                        correctness=[int(c) for c in correctness],
                    )
                )
            except (KeyError, ValueError) as exc:
                raise ConfigurationError(f"{path}:{line_no}: {exc}") from exc
    return instances


def cmd_curate(args: argparse.Namespace) -> int:
    cfg = _load(args)
    instances = _load_instances(args.instances, cfg)

    rl_instances = filter_rl_instances(instances)
    rl_questions = [inst.question for inst in rl_instances]

    selected: list[tuple[SampledInstance, Trajectory]] = []
    for instance in instances:
        chosen = select_sft_trajectory(instance)
        if chosen is not None:
            selected.append((instance, chosen))

    kept_questions = set(
        dedup_against([inst.question for inst, _ in selected], rl_questions)
    )
    deduped = [(inst, traj) for inst, traj in selected if inst.question in kept_questions]

    balanced_trajs = enforce_tool_balance([traj for _, traj in deduped], cfg.curation)
    balanced_ids = {id(t) for t in balanced_trajs}
    final = [(inst, traj) for inst, traj in deduped if id(traj) in balanced_ids]

    with open(args.rl_out, "w", encoding="utf-8") as handle:
        for inst in rl_instances:
            handle.write(
                json.dumps(
                    {
                        "question": inst.question,
                        "ground_truth": inst.ground_truth,
                        "correctness": inst.correctness,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    with open(args.sft_out, "w", encoding="utf-8") as handle:
        for inst, traj in final:
            handle.write(
                json.dumps(
                    {
                        "question": inst.question,
                        "ground_truth": inst.ground_truth,
                        "trajectory": traj.to_dict(),
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )

    share: dict[str, int] = {}
    for _, traj in final:
        label = dominant_tool(traj) or "(none)"
        share[label] = share.get(label, 0) + 1
    report = {
        "instances": len(instances),
        "rl_kept": len(rl_instances),
        "rl_dropped_unanimous": len(instances) - len(rl_instances),
        "sft_candidates": len(selected),
        "sft_dropped_no_correct": len(instances) - len(selected),
        "sft_dropped_rl_overlap": len(selected) - len(deduped),
        "sft_dropped_balance": len(deduped) - len(final),
        "sft_kept": len(final),
        "balance_cap": cfg.curation.balance_cap,
        "dominant_tool_counts": dict(sorted(share.items())),
    }
    if args.report:
        Path(args.report).write_text(
            json.dumps(report, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )
    print(json.dumps(report, indent=2))
    return 0


def cmd_validate_config(args: argparse.Namespace) -> int:
    cfg = _load(args)
    print("configuration OK")
    if args.print:
        print(json.dumps(cfg.to_dict(), indent=2, default=str))
    return 0


def cmd_fault_run(args: argparse.Namespace) -> int:
    extra = {
        "eval.questions_file": args.questions,
        "eval.ground_truth_file": args.ground_truth,
        "eval.output_dir": args.output_dir,
        "eval.seed": args.seed,
    }
    cfg = _load(args, extra)
    schedule = load_schedule(args.schedule)
    trajectories = run_fault_scenario(cfg, schedule)
    report = usage_report(trajectories)
    out_dir = Path(cfg.eval.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "fault_report.json"
    report_path.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(report, indent=2))
    if args.plot:
        plot_usage(report, args.plot)
        print(f"wrote plot to {args.plot}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="paraorch",
        description="Parallel agent/tool orchestration runtime and scoring harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run k episodes per question and report mean@k")
    _add_common(run)
    run.add_argument("--questions", help="questions JSONL")
    run.add_argument("--ground-truth", help="ground-truth JSONL")
    run.add_argument("--output-dir", help="output directory")
    run.add_argument("--k", type=int, help="episodes per question")
    run.add_argument("--seed", type=int, help="mock-mode seed")
    run.add_argument("--backend-mode", choices=["remote", "mock"])
    run.add_argument("--episode-parallelism", type=int)
    run.set_defaults(func=cmd_run)

    score = sub.add_parser("score", help="score trajectories against ground truth")
    _add_common(score)
    score.add_argument("--trajectories", required=True, help="trajectory JSONL")
    score.add_argument("--ground-truth", required=True, help="ground-truth JSONL")
    score.add_argument("--output", help="write per-trajectory breakdown JSONL here")
    score.set_defaults(func=cmd_score)

    grpo = sub.add_parser("grpo-score", help="advantages, ratios, and surrogate for a group")
    _add_common(grpo)
    grpo.add_argument("--group", required=True, help="group JSON file")
    grpo.add_argument("--output", help="write the result JSON here")
    grpo.set_defaults(func=cmd_grpo_score)

    curate = sub.add_parser("curate", help="build SFT and RL sets from sampled instances")
    _add_common(curate)
    curate.add_argument("--instances", required=True, help="sampled-instance JSONL")
    curate.add_argument("--sft-out", required=True)
    curate.add_argument("--rl-out", required=True)
    curate.add_argument("--report", help="write the metadata report here")
    curate.set_defaults(func=cmd_curate)

    validate = sub.add_parser("validate-config", help="validate (and print) the configuration")
    _add_common(validate)
    validate.add_argument("--print", action="store_true", help="print the effective config")
    validate.set_defaults(func=cmd_validate_config)

    fault = sub.add_parser("fault-run", help="run scripted fault-injection scenarios")
    _add_common(fault)
    fault.add_argument("--schedule", required=True, help="fault schedule file (YAML/JSON)")
    fault.add_argument("--questions", help="questions JSONL")
    fault.add_argument("--ground-truth", help="ground-truth JSONL")
    fault.add_argument("--output-dir", help="output directory")
    fault.add_argument("--seed", type=int)
    fault.add_argument("--plot", help="write a distribution plot PNG here")
    fault.set_defaults(func=cmd_fault_run)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
