"""Group advantages, masked ratios, the clipped surrogate, and masked NLL."""

from __future__ import annotations

import math
import random

import pytest

from paraorch import (
    Group,
    GrpoConfig,
    LinearizedSequence,
    clipped_surrogate,
    group_advantages,
    masked_ratio,
    masked_sft_nll,
)


def seq_with_ratio(log_ratio: float, masked_tokens: int = 1, padding: int = 2) -> LinearizedSequence:
    """Sequence whose masked log-ratio sums to ``log_ratio`` exactly, padded
    with mask-0 tokens carrying arbitrary differences."""
    tokens = list(range(masked_tokens + padding))
    mask = [1] * masked_tokens + [0] * padding
    per_token = log_ratio / masked_tokens if masked_tokens else 0.0
    logp_old = [-1.0] * len(tokens)
    logp_new = [
        -1.0 + per_token if m else -1.0 + 5.0  # mask-0 differences must not matter
        for m in mask
    ]
    return LinearizedSequence(tokens=tokens, mask=mask, logp_new=logp_new, logp_old=logp_old)


class TestGroupAdvantages:
    def test_hand_computed_group(self):
        # mean 1.0, population std sqrt(0.5)
        rewards = [2, 2, 1, 1, 1, 1, 0, 0]
        advantages = group_advantages(rewards, delta=0.0)
        expected_hi = 1.0 / math.sqrt(0.5)
        assert advantages[0] == pytest.approx(expected_hi, abs=1e-12)
        assert advantages[-1] == pytest.approx(-expected_hi, abs=1e-12)
        assert advantages[2] == pytest.approx(0.0, abs=1e-12)

    def test_degenerate_group_is_all_zero(self):
        assert group_advantages([3.0] * 8, delta=1e-4) == [0.0] * 8

    def test_pair(self):
        assert group_advantages([1.0, 0.0], delta=0.0) == [1.0, -1.0]

    def test_centering(self):
        rng = random.Random(23)
        for _ in range(500):
            rewards = [rng.uniform(0, 4) for _ in range(8)]
            advantages = group_advantages(rewards)
            assert abs(sum(advantages)) < 1e-9

    def test_shift_invariance_exact_on_dyadic_rewards(self):
        rng = random.Random(29)
        for _ in range(200):
            rewards = [rng.randrange(0, 17) * 0.25 for _ in range(8)]
            shifted = [r + 1.5 for r in rewards]
            assert group_advantages(rewards) == group_advantages(shifted)

    def test_singleton_rejected(self):
        with pytest.raises(ValueError):
            group_advantages([1.0])


class TestMaskedRatio:
    def test_identical_policies_give_exactly_one(self):
        seq = seq_with_ratio(0.0, masked_tokens=4)
        seq = LinearizedSequence(
            tokens=seq.tokens, mask=seq.mask, logp_new=list(seq.logp_old), logp_old=seq.logp_old
        )
        assert masked_ratio(seq) == 1.0

    def test_single_token_ln2_gives_two(self):
        seq = seq_with_ratio(math.log(2.0), masked_tokens=1)
        assert masked_ratio(seq) == pytest.approx(2.0, abs=1e-12)

    def test_mask_zero_perturbations_are_invisible(self):
        base = seq_with_ratio(0.3, masked_tokens=2, padding=3)
        perturbed_new = list(base.logp_new)
        rng = random.Random(31)
        for i, m in enumerate(base.mask):
            if m == 0:
                perturbed_new[i] += rng.uniform(-10, 10)
        perturbed = LinearizedSequence(
            tokens=base.tokens, mask=base.mask, logp_new=perturbed_new, logp_old=base.logp_old
        )
        assert masked_ratio(perturbed) == masked_ratio(base)

    def test_missing_logps_rejected(self):
        seq = LinearizedSequence(tokens=[1], mask=[1], logp_new=[-1.0])
        with pytest.raises(ValueError):
            masked_ratio(seq)

    def test_non_finite_rejected(self):
        seq = LinearizedSequence(
            tokens=[1], mask=[1], logp_new=[float("nan")], logp_old=[-1.0]
        )
        with pytest.raises(ValueError):
            masked_ratio(seq)


class TestClippedSurrogate:
    def setup_method(self):
        self.cfg = GrpoConfig()

    def _group(self, log_ratios: list[float]) -> Group:
        sequences = [seq_with_ratio(lr) for lr in log_ratios]
        return Group(rewards=[0.0] * len(sequences), sequences=sequences)

    def test_ratio_one_contributes_plain_advantage(self):
        group = self._group([0.0, 0.0])
        assert clipped_surrogate(group, [2.5, -1.5], self.cfg) == pytest.approx(0.5)

    def test_high_ratio_positive_advantage_clips(self):
        group = self._group([math.log(2.0), math.log(2.0)])
        value = clipped_surrogate(group, [1.0, 1.0], self.cfg)
        assert value == 1.28

    def test_low_ratio_negative_advantage_clips(self):
        group = self._group([math.log(0.5), math.log(0.5)])
        value = clipped_surrogate(group, [-1.0, -1.0], self.cfg)
        assert value == -0.8

    def test_matches_unclipped_inside_the_band(self):
        rng = random.Random(37)
        lo, hi = 1 - self.cfg.clip_low, 1 + self.cfg.clip_high
        for _ in range(100):
            ratios = [rng.uniform(lo + 1e-6, hi - 1e-6) for _ in range(4)]
            advantages = [rng.uniform(-2, 2) for _ in range(4)]
            group = self._group([math.log(r) for r in ratios])
            value = clipped_surrogate(group, advantages, self.cfg)
            unclipped = sum(
                math.exp(math.log(r)) * a for r, a in zip(ratios, advantages)
            ) / len(ratios)
            assert value == pytest.approx(unclipped, abs=1e-9)

    def test_misaligned_advantages_rejected(self):
        group = self._group([0.0, 0.0])
        with pytest.raises(ValueError):
            clipped_surrogate(group, [1.0], self.cfg)


class TestMaskedSftNll:
    def test_all_zero_mask_gives_zero(self):
        seq = LinearizedSequence(tokens=[1, 2], mask=[0, 0], logp_new=[-3.0, -4.0])
        assert masked_sft_nll(seq) == 0.0

    def test_three_supervised_tokens(self):
        seq = LinearizedSequence(
            tokens=[1, 2, 3, 4],
            mask=[1, 1, 1, 0],
            logp_new=[-1.0, -1.0, -1.0, -9.0],
        )
        assert masked_sft_nll(seq) == 3.0

    def test_environment_extension_leaves_loss_unchanged(self):
        base = LinearizedSequence(tokens=[1, 2], mask=[1, 1], logp_new=[-0.5, -0.25])
        extended = LinearizedSequence(
            tokens=[1, 2, 3, 4],
            mask=[1, 1, 0, 0],
            logp_new=[-0.5, -0.25, -7.0, -2.0],
        )
        assert masked_sft_nll(extended) == masked_sft_nll(base)


class TestGrpoConfig:
    def test_defaults(self):
        cfg = GrpoConfig()
        assert (cfg.clip_low, cfg.clip_high, cfg.group_size) == (0.2, 0.28, 8)
        assert cfg.delta == 1e-4

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"clip_low": 0.0},
            {"clip_low": 0.5, "clip_high": 0.3},
            {"clip_high": 1.0},
            {"group_size": 1},
            {"delta": -1.0},
        ],
    )
    def test_invalid_configs_rejected(self, kwargs):
        with pytest.raises(ValueError):
            GrpoConfig(**kwargs)


class TestGroupType:
    def test_alignment_enforced(self):
        with pytest.raises(ValueError):
            Group(rewards=[1.0], sequences=[])
        with pytest.raises(ValueError):
            Group(rewards=[1.0], sequences=[seq_with_ratio(0.0)])
