"""Dispersion filtering, recovery-first selection, tool balance, and dedup."""

from __future__ import annotations

import itertools
import random

import pytest

from paraorch import (
    CurationConfig,
    SampledInstance,
    Status,
    dedup_against,
    dominant_tool,
    enforce_tool_balance,
    filter_rl_instances,
    has_recovery,
    select_sft_trajectory,
)

from conftest import make_trajectory


def make_instance(correctness: list[int], trajectories=None) -> SampledInstance:
    trajectories = trajectories or [
        make_trajectory([["python"]], final_answer="1") for _ in correctness
    ]
    return SampledInstance(
        question="q", ground_truth="1", trajectories=trajectories, correctness=correctness
    )


class TestFilterRlInstances:
    def test_all_correct_dropped(self):
        assert filter_rl_instances([make_instance([1] * 8)]) == []

    def test_all_incorrect_dropped(self):
        assert filter_rl_instances([make_instance([0] * 8)]) == []

    def test_mixed_kept(self):
        instance = make_instance([1, 0, 1, 1, 0, 0, 1, 0])
        assert filter_rl_instances([instance]) == [instance]

    def test_exhaustive_eight_sample_patterns(self):
        kept = 0
        for bits in itertools.product((0, 1), repeat=8):
            if filter_rl_instances([make_instance(list(bits))]):
                kept += 1
        assert kept == 254  # 256 minus the two unanimous patterns

    def test_never_returns_unanimous(self):
        rng = random.Random(43)
        for _ in range(300):
            correctness = [rng.randrange(2) for _ in range(8)]
            for instance in filter_rl_instances([make_instance(correctness)]):
                assert 0 < sum(instance.correctness) < len(instance.correctness)


class TestHasRecovery:
    def test_error_then_ok_round(self):
        traj = make_trajectory(
            [["python"], ["python"]],
            statuses=[[Status.EXEC_ERR], [Status.OK]],
        )
        assert has_recovery(traj)

    def test_error_in_last_round_is_not_recovery(self):
        traj = make_trajectory(
            [["python"], ["python"]],
            statuses=[[Status.OK], [Status.TIMEOUT]],
        )
        assert not has_recovery(traj)

    def test_clean_run_is_not_recovery(self):
        traj = make_trajectory([["python"], ["python"]])
        assert not has_recovery(traj)

    def test_mixed_round_counts_as_fault(self):
        traj = make_trajectory(
            [["python", "search"], ["python"]],
            statuses=[[Status.OK, Status.PARSE_ERR], [Status.OK]],
        )
        assert has_recovery(traj)

    def test_later_round_must_be_fully_ok(self):
        traj = make_trajectory(
            [["python"], ["python", "search"]],
            statuses=[[Status.EXEC_ERR], [Status.OK, Status.EXEC_ERR]],
        )
        assert not has_recovery(traj)


class TestSelectSftTrajectory:
    def test_recovering_trajectory_preferred(self):
        clean = make_trajectory([["python"], ["python"]], final_answer="1")
        recovering = make_trajectory(
            [["python"], ["python"], ["python"]],
            statuses=[[Status.EXEC_ERR], [Status.OK], [Status.OK]],
            final_answer="1",
        )
        instance = make_instance([1, 1], trajectories=[clean, recovering])
        assert select_sft_trajectory(instance) is recovering

    def test_no_correct_trajectory_gives_none(self):
        instance = make_instance([0, 0])
        assert select_sft_trajectory(instance) is None

    def test_fewer_rounds_break_ties(self):
        three = make_trajectory([["python"]] * 3, final_answer="1")
        five = make_trajectory([["python"]] * 5, final_answer="1")
        instance = make_instance([1, 1], trajectories=[five, three])
        assert select_sft_trajectory(instance) is three

    def test_lower_cost_breaks_remaining_ties(self):
        cheap = make_trajectory([["python"]], final_answer="1", total_cost=1.0)
        pricey = make_trajectory([["python"]], final_answer="1", total_cost=5.0)
        instance = make_instance([1, 1], trajectories=[pricey, cheap])
        assert select_sft_trajectory(instance) is cheap

    def test_first_index_wins_full_tie(self):
        first = make_trajectory([["python"]], final_answer="1")
        second = make_trajectory([["python"]], final_answer="1")
        instance = make_instance([1, 1], trajectories=[first, second])
        assert select_sft_trajectory(instance) is first

    def test_never_selects_incorrect(self):
        rng = random.Random(47)
        for _ in range(100):
            correctness = [rng.randrange(2) for _ in range(4)]
            instance = make_instance(correctness)
            chosen = select_sft_trajectory(instance)
            if chosen is not None:
                idx = next(
                    i for i, t in enumerate(instance.trajectories) if t is chosen
                )
                assert instance.correctness[idx] == 1
            else:
                assert sum(correctness) == 0


class TestDominantTool:
    def test_most_used_non_final_tool(self):
        traj = make_trajectory([["python", "python", "search"], ["final_answer"]])
        assert dominant_tool(traj) == "python"

    def test_lexicographic_tie_break(self):
        traj = make_trajectory([["search", "python"]])
        assert dominant_tool(traj) == "python"

    def test_no_non_final_calls(self):
        traj = make_trajectory([["final_answer"]])
        assert dominant_tool(traj) == ""


class TestEnforceToolBalance:
    def setup_method(self):
        self.cfg = CurationConfig()

    def _labeled(self, label: str):
        return make_trajectory([[label]], final_answer="1")

    def test_miniature_greedy_run(self):
        # 6 code_reasoner-dominated + 4 search-dominated, cap 0.35: the greedy
        # drop sequence (hand-run) ends with one member of each class.
        selected = [self._labeled("code_reasoner") for _ in range(6)]
        selected += [self._labeled("search") for _ in range(4)]
        retained = enforce_tool_balance(selected, self.cfg)
        labels = [dominant_tool(t) for t in retained]
        assert labels == ["code_reasoner", "search"]
        # highest-priority members (earliest) survive
        assert retained[0] is selected[0]
        assert retained[1] is selected[6]

    def test_spread_corpus_respects_cap(self):
        selected = [self._labeled("code_reasoner") for _ in range(60)]
        for label in ("search", "python", "standard_reasoner", "critical_reviewer"):
            selected += [self._labeled(label) for _ in range(10)]
        retained = enforce_tool_balance(selected, self.cfg)
        share = sum(dominant_tool(t) == "code_reasoner" for t in retained) / len(retained)
        assert share <= 0.35

    def test_already_balanced_unchanged(self):
        selected = [self._labeled(l) for l in ("a", "b", "c", "d")]
        assert enforce_tool_balance(selected, self.cfg) == selected

    def test_single_class_reduced_to_one(self):
        selected = [self._labeled("python") for _ in range(5)]
        retained = enforce_tool_balance(selected, self.cfg)
        assert len(retained) == 1
        assert retained[0] is selected[0]

    def test_multi_member_classes_satisfy_cap(self):
        rng = random.Random(53)
        labels = ["code_reasoner", "search", "python", "standard_reasoner", "ensemble_solver"]
        for _ in range(20):
            selected = [self._labeled(rng.choice(labels)) for _ in range(rng.randrange(10, 60))]
            retained = enforce_tool_balance(selected, self.cfg)
            counts: dict[str, int] = {}
            for traj in retained:
                counts[dominant_tool(traj)] = counts.get(dominant_tool(traj), 0) + 1
            for label, count in counts.items():
                if count > 1:
                    assert count / len(retained) <= self.cfg.balance_cap

    def test_config_feasibility(self):
        with pytest.raises(ValueError):
            CurationConfig(balance_cap=0.05)
        with pytest.raises(ValueError):
            CurationConfig(balance_cap=1.5)


class TestDedup:
    def test_identical_question_removed(self):
        assert dedup_against(["What is 2+2?"], ["What is 2+2?"]) == []

    def test_trailing_whitespace_still_removed(self):
        assert dedup_against(["What is 2+2?  "], ["What is 2+2?"]) == []

    def test_case_fold(self):
        assert dedup_against(["WHAT is 2+2?"], ["what IS 2+2?"]) == []

    def test_disjoint_sets_unchanged(self):
        sft = ["alpha question", "beta question"]
        assert dedup_against(sft, ["gamma question"]) == sft

    def test_no_normalized_overlap_remains(self):
        rng = random.Random(59)
        vocab = ["one", "two", "three", "four"]
        for _ in range(100):
            sft = [" ".join(rng.choices(vocab, k=3)) for _ in range(10)]
            rl = [" ".join(rng.choices(vocab, k=3)) for _ in range(10)]
            kept = dedup_against(sft, rl)
            normalized_rl = {" ".join(q.casefold().split()) for q in rl}
            assert all(" ".join(q.casefold().split()) not in normalized_rl for q in kept)
