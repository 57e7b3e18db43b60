#!/usr/bin/env python3
"""Unit tests for run configuration loading and process settings"""

import os
import sys

import pytest
from pydantic import ValidationError

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import (  # noqa: E402
    Config,
    EpisodeConfig,
    RunConfig,
    ShapeName,
    TrainConfig,
    config_fingerprint,
    dump_run_config,
    flatten,
    load_run_config,
    parse_override,
    unflatten,
)

TABLE3 = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs", "table3.yaml")


class TestDefaults:
    """Test built-in defaults"""

    def test_controller_and_episode_defaults(self):
        cfg = RunConfig()
        assert cfg.model.h == 0.05
        assert cfg.episode.angle_weight == 0.3
        assert cfg.model.mu_c == 0.6
        assert cfg.mpc.N == 10
        assert cfg.mpc.u_max == (0.01, 0.01)
        assert cfg.episode.r_min == 0.03
        assert cfg.episode.k == pytest.approx(1 / 3)
        assert cfg.episode.max_rounds == 70
        assert cfg.episode.ang_tol == 0.0436
        assert cfg.episode.shape is ShapeName.T

    def test_training_defaults(self):
        cfg = TrainConfig()
        assert (cfg.lr, cfg.momentum, cfg.weight_decay, cfg.gamma) == (1e-4, 0.9, 1e-5, 0.9)
        assert (cfg.eps_start, cfg.eps_end) == (0.5, 0.1)
        assert (cfg.batch_size, cfg.buffer_capacity, cfg.target_sync_every) == (64, 20_000, 200)

    def test_canonical_file_matches_defaults(self):
        assert load_run_config(TABLE3) == RunConfig()


class TestValidation:
    """Test model invariants"""

    def test_eps_order(self):
        with pytest.raises(ValidationError, match="eps_end"):
            TrainConfig(eps_start=0.1, eps_end=0.5)

    def test_gamma_range(self):
        with pytest.raises(ValidationError):
            TrainConfig(gamma=1.0)

    def test_k_range(self):
        with pytest.raises(ValidationError):
            EpisodeConfig(k=1.0)

    def test_margin_must_fit(self):
        with pytest.raises(ValidationError, match="init_margin"):
            EpisodeConfig(init_margin=0.3)

    def test_frozen(self):
        with pytest.raises(ValidationError):
            RunConfig().seed = 3

    def test_unknown_field(self):
        with pytest.raises(ValidationError):
            EpisodeConfig(colour="red")


class TestLoading:
    """Test defaults, file and flag layering"""

    def test_precedence(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("mpc.N: 5\nepisode.max_rounds: 30\n")
        cfg = load_run_config(path, {"mpc.N": 7})
        assert cfg.mpc.N == 7
        assert cfg.episode.max_rounds == 30
        assert cfg.train.episodes == 200

    def test_nested_file(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("episode:\n  shape: triangle\n")
        assert load_run_config(path).episode.shape is ShapeName.TRIANGLE

    def test_unknown_key_in_file(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("mpc.horizon: 5\n")
        with pytest.raises(ValueError, match="mpc.horizon"):
            load_run_config(path)

    def test_unknown_override(self):
        with pytest.raises(ValueError, match="unknown config keys"):
            load_run_config(overrides={"train.learning_rate": 0.1})

    def test_non_mapping_file(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ValueError, match="mapping"):
            load_run_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_run_config(tmp_path / "absent.yaml")

    def test_invalid_value(self):
        with pytest.raises(ValueError):
            load_run_config(overrides={"mpc.N": 0})

    def test_dump_is_flat_and_reloads(self, tmp_path):
        cfg = load_run_config(overrides={"noise.sigma_pos": 0.001, "train.episodes": 3})
        text = dump_run_config(cfg)
        assert "mpc.N: 10" in text
        path = tmp_path / "snapshot.yaml"
        path.write_text(text)
        assert load_run_config(path) == cfg


class TestOverrides:
    """Test key=value parsing"""

    def test_number(self):
        assert parse_override("mpc.N=12") == ("mpc.N", 12)

    def test_list(self):
        assert parse_override("episode.goal=[0.05, 0.0, 0.1]") == ("episode.goal", [0.05, 0.0, 0.1])

    def test_string(self):
        assert parse_override("episode.shape=L") == ("episode.shape", "L")

    def test_missing_equals(self):
        with pytest.raises(ValueError, match="key=value"):
            parse_override("mpc.N")

    def test_flatten_round_trip(self):
        nested = {"a": {"b": 1, "c": {"d": 2}}, "e": 3}
        assert flatten(nested) == {"a.b": 1, "a.c.d": 2, "e": 3}
        assert unflatten(flatten(nested)) == nested


class TestFingerprint:
    """Test the seed-independent config hash"""

    def test_ignores_seeds_and_output(self):
        a = load_run_config(overrides={"seed": 1, "train.seed": 2, "episode.seed": 3, "noise.seed": 4})
        b = load_run_config(overrides={"out_dir": "elsewhere"})
        assert config_fingerprint(a) == config_fingerprint(b) == config_fingerprint(RunConfig())

    def test_tracks_settings(self):
        assert config_fingerprint(load_run_config(overrides={"mpc.N": 11})) != config_fingerprint(RunConfig())


class TestProcessConfig:
    """Test environment-driven process settings"""

    def test_defaults_valid(self):
        Config.validate()

    def test_bad_log_level(self, monkeypatch):
        monkeypatch.setattr(Config, "LOG_LEVEL", "LOUD")
        with pytest.raises(ValueError, match="PUSHING_LOG_LEVEL"):
            Config.validate()

    def test_bad_worker_count(self, monkeypatch):
        monkeypatch.setattr(Config, "WORKERS", 0)
        with pytest.raises(ValueError, match="PUSHING_WORKERS"):
            Config.validate()

    def test_bad_environment(self, monkeypatch):
        monkeypatch.setattr(Config, "ENVIRONMENT", "staging")
        with pytest.raises(ValueError, match="PUSHING_ENV"):
            Config.validate()


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
