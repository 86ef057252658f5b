"""Configuration defaults, precedence, and invariant validation."""

from __future__ import annotations

import pytest
import yaml

from paraorch import ConfigurationError, load_config


class TestDefaults:
    def test_operational_constants(self):
        cfg = load_config(env={})
        assert cfg.orchestrator.max_rounds == 12
        assert cfg.orchestrator.max_parallel == 4
        assert cfg.orchestrator.max_response_tokens == 24576
        assert cfg.rewards.theta_par == 1.25
        assert cfg.rewards.theta_tool == 3
        assert cfg.rewards.length_target == 12288
        assert cfg.rewards.cost_target == 8
        assert cfg.rewards.length_max == 24576
        assert cfg.rewards.cost_max == 16
        assert cfg.grpo.group_size == 8
        assert (cfg.grpo.clip_low, cfg.grpo.clip_high) == (0.2, 0.28)
        assert cfg.eval.k == 8
        assert cfg.curation.samples_per_instance == 8

    def test_default_endpoints_use_unit_temperature(self):
        cfg = load_config(env={})
        for endpoint in cfg.pool.endpoints.values():
            assert endpoint.temperature == 1.0
            assert endpoint.max_tokens == 24576
        assert cfg.pool.default_model in cfg.pool.endpoints


class TestPrecedence:
    def test_file_overrides_defaults(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text(yaml.safe_dump({"rewards": {"theta_tool": 5}}), encoding="utf-8")
        cfg = load_config(str(path), env={})
        assert cfg.rewards.theta_tool == 5

    def test_env_overrides_file(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text(yaml.safe_dump({"rewards": {"theta_tool": 5}}), encoding="utf-8")
        cfg = load_config(str(path), env={"PARAORCH_REWARDS__THETA_TOOL": "6"})
        assert cfg.rewards.theta_tool == 6

    def test_flags_override_env(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text(yaml.safe_dump({"rewards": {"theta_tool": 5}}), encoding="utf-8")
        cfg = load_config(
            str(path),
            overrides={"rewards.theta_tool": "2"},
            env={"PARAORCH_REWARDS__THETA_TOOL": "6"},
        )
        assert cfg.rewards.theta_tool == 2

    def test_api_key_env_alias(self):
        cfg = load_config(env={"PARAORCH_API_KEY": "secret"})
        assert cfg.services.api_key == "secret"

    def test_nested_env_values_parse_as_yaml(self):
        cfg = load_config(env={"PARAORCH_EVAL__MOCK_SCHEDULE": "[[1,1],[1,0]]"})
        assert cfg.eval.mock_schedule == [[1, 1], [1, 0]]


class TestValidation:
    def test_mismatched_length_max_rejected(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text(
            yaml.safe_dump({"rewards": {"length_target": 1000, "length_max": 1500}}),
            encoding="utf-8",
        )
        with pytest.raises(ConfigurationError, match="length_max"):
            load_config(str(path), env={})

    def test_unknown_field_rejected(self):
        with pytest.raises(ConfigurationError, match="unknown fields"):
            load_config(overrides={"rewards.no_such_knob": "1"}, env={})

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigurationError, match="unknown config sections"):
            load_config(overrides={"rewords.theta_tool": "1"}, env={})

    def test_mock_mode_requires_seed(self):
        with pytest.raises(ConfigurationError, match="seed"):
            load_config(overrides={"eval.seed": "null"}, env={})

    def test_bad_clip_range_rejected(self):
        with pytest.raises(ConfigurationError, match="clip"):
            load_config(overrides={"grpo.clip_low": "0.9"}, env={})

    def test_default_model_must_be_pooled(self):
        with pytest.raises(ConfigurationError, match="default_model"):
            load_config(overrides={"pool.default_model": "ghost"}, env={})

    def test_backend_mode_vocabulary(self):
        with pytest.raises(ConfigurationError, match="backend_mode"):
            load_config(overrides={"eval.backend_mode": "imaginary"}, env={})


class TestEndpoints:
    def test_endpoint_model_id_defaults_to_key(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text(
            yaml.safe_dump(
                {
                    "pool": {
                        "endpoints": {"my-model": {"base_url": "http://here"}},
                        "default_model": "my-model",
                    }
                }
            ),
            encoding="utf-8",
        )
        cfg = load_config(str(path), env={})
        assert cfg.pool.endpoints["my-model"].model_id == "my-model"

    def test_summarizer_endpoint_built(self):
        cfg = load_config(env={})
        assert cfg.orchestrator.summarizer_endpoint is not None
        assert cfg.orchestrator.summarizer_endpoint.model_id == "gpt-oss-20b"

    def test_prompts_dir_override(self, tmp_path):
        (tmp_path / "manager.txt").write_text("CUSTOM MANAGER PROMPT", encoding="utf-8")
        cfg = load_config(overrides={"orchestrator.prompts_dir": str(tmp_path)}, env={})
        assert cfg.orchestrator.prompt_set().manager == "CUSTOM MANAGER PROMPT"
        # untouched roles still come from the shipped assets
        assert "Code_Reasoner" in cfg.orchestrator.prompt_set().code_reasoner
