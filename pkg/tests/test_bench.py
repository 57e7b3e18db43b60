#!/usr/bin/env python3
"""Unit tests for episode metrics, suite evaluation and report comparison"""

import math
import os
import sys
from types import SimpleNamespace

import numpy as np
import pytest

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from bench import (  # noqa: E402
    METRIC_NAMES,
    GreedyLookaheadPolicy,
    QNetPolicy,
    compare,
    episode_metrics,
    evaluate,
    metrics_from_trace_frame,
    run_episode,
    run_suite,
    summarize,
    trace_metrics,
)
from config import EpisodeConfig, RunConfig  # noqa: E402
from geometry import Pose2D  # noqa: E402
from push_env import Mode, PushingEnv  # noqa: E402
from storage import TRACE_COLUMNS, read_trace_csv, write_trace_csv  # noqa: E402

ORIGIN = Pose2D(0.0, 0.0, 0.0)


class TeleportPolicy:
    """Moves the object onto the goal before every decision"""

    def __call__(self, env):
        env.plant.reset(env.goal)
        return 0


class FirstPointPolicy:
    def __call__(self, env):
        return 0


def short_config(**episode):
    return RunConfig(episode=EpisodeConfig(max_rounds=4, **episode))


def without_wall_time(report):
    data = report.model_dump()
    for episode in data["episodes"]:
        episode.pop("wall_time")
    data["aggregates"].pop("wall_time", None)
    return data


class StubEnv:
    """Actions 1..5 move the object one unit in x; action 0 leaves it in place"""

    def __init__(self, rewards):
        self.rewards = rewards
        self.pose = Pose2D(0.0, 0.0, 0.0)

    @property
    def state(self):
        return self.pose.as_state()

    def act(self, action):
        if action != 0:
            self.pose = Pose2D(self.pose.x + 1.0, 0.0, 0.0)
        return SimpleNamespace(reward=self.rewards[action], success=False)


class StubNet:
    def forward(self, s):
        return np.array([0.1, 0.9, 0.5, 0.0, -1.0, 0.2])


class TestPolicies:
    """Test the evaluation policies"""

    def test_lookahead_prefers_moving_rounds(self):
        env = StubEnv([0.0, -0.5, -1.0, -1.0, -1.0, -1.0])
        assert GreedyLookaheadPolicy()(env) == 1
        assert env.pose == ORIGIN

    def test_lookahead_takes_best_reward_among_moving_rounds(self):
        env = StubEnv([5.0, -0.5, 2.0, -1.0, 3.0, -1.0])
        assert GreedyLookaheadPolicy()(env) == 4

    def test_network_policy_masks_repeated_no_op(self):
        policy = QNetPolicy(StubNet())
        env = StubEnv([0.0] * 6)
        assert policy(env) == 1
        assert policy(env) == 2
        env.pose = Pose2D(1.0, 0.0, 0.0)
        assert policy(env) == 1


class TestEpisodeMetrics:
    """Test per-episode metrics"""

    def test_straight_push(self):
        m = episode_metrics([Pose2D(0.0, 0.0, 0.0), Pose2D(0.1, 0.0, 0.0)], ORIGIN)
        assert m.trajectory_length == pytest.approx(0.1)
        assert m.angle_trajectory_length == 0.0

    def test_there_and_back_rotation(self):
        poses = [Pose2D(0.0, 0.0, 0.0), Pose2D(0.0, 0.0, math.pi / 2), Pose2D(0.0, 0.0, 0.0)]
        m = episode_metrics(poses, ORIGIN)
        assert m.angle_trajectory_length == pytest.approx(math.pi)
        assert m.success

    def test_seam_crossing(self):
        poses = [Pose2D(0.0, 0.0, math.pi - 0.05), Pose2D(0.0, 0.0, -math.pi + 0.05)]
        assert episode_metrics(poses, ORIGIN).angle_trajectory_length == pytest.approx(0.1)

    def test_full_turn_offset_invariance(self):
        raw = np.array([[0.0, 0.0, 0.3], [0.01, 0.0, 1.2], [0.02, 0.01, -2.9]])
        shifted = raw.copy()
        shifted[1, 2] += 2 * math.pi
        a = episode_metrics(raw, ORIGIN).angle_trajectory_length
        b = episode_metrics(shifted, ORIGIN).angle_trajectory_length
        assert b == pytest.approx(a, abs=1e-12)

    def test_single_pose(self):
        m = episode_metrics([Pose2D(0.1, 0.0, 0.0)], ORIGIN)
        assert m.trajectory_length == 0.0
        assert not m.success

    def test_path_at_least_chord(self):
        states = np.random.default_rng(0).uniform(-0.2, 0.2, size=(30, 3))
        m = episode_metrics(states, ORIGIN)
        assert m.trajectory_length >= np.hypot(*(states[-1, :2] - states[0, :2])) - 1e-9

    def test_empty_trace_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            episode_metrics([], ORIGIN)
        with pytest.raises(ValueError, match="non-empty"):
            episode_metrics(np.zeros((0, 3)), ORIGIN)


class TestSummarize:
    """Test aggregate statistics"""

    def test_sample_std(self):
        s = summarize([1.0, 2.0, 3.0, 4.0])
        assert s.mean == 2.5
        assert s.std == pytest.approx(np.std([1, 2, 3, 4], ddof=1))
        assert (s.min, s.max) == (1.0, 4.0)

    def test_single_value_has_no_std(self):
        assert summarize([3.0]).std is None


class TestEpisodeTrace:
    """Test traces and their CSV export"""

    def test_rows_cover_every_plant_step(self):
        cfg = short_config()
        env = PushingEnv(cfg, seed=2, mode=Mode.SPP)
        trace = run_episode(env, FirstPointPolicy(), start=Pose2D(0.1, -0.05, 0.4))
        rows = trace.rows()
        assert rows[0]["step"] == 0 and rows[0]["round"] == 0
        assert [r["step"] for r in rows] == list(range(len(rows)))
        zero_step_rounds = sum(result.outcome.steps == 0 for result in trace.results)
        assert len(rows) == 1 + trace.plant_steps + zero_step_rounds
        assert sum(r["r_env"] for r in rows) == pytest.approx(sum(res.reward_parts[0] for res in trace.results))
        assert set(rows[0]) == set(TRACE_COLUMNS)

    def test_metrics_survive_csv_round_trip(self, tmp_path):
        cfg = short_config()
        env = PushingEnv(cfg, seed=5, mode=Mode.SPP)
        trace = run_episode(env, GreedyLookaheadPolicy(), start=Pose2D(0.12, 0.08, -0.7))
        rows = trace.rows()
        path = tmp_path / "trace.csv"
        write_trace_csv(rows, path)
        frame = read_trace_csv(path)

        rounded = np.array([[float(f"{r[k]:.9g}") for k in ("x", "y", "theta")] for r in rows])
        ep = cfg.episode
        expected = episode_metrics(rounded, ORIGIN, ep.pos_tol, ep.ang_tol, trace.rounds, trace.plant_steps, 1.5)
        recomputed = metrics_from_trace_frame(frame, ORIGIN, ep.pos_tol, ep.ang_tol, trace.plant_steps, 1.5)
        assert recomputed.model_dump() == expected.model_dump()
        assert frame["mcr_kind"].tolist() == [r["mcr_kind"] for r in rows]

    def test_in_memory_metrics(self):
        cfg = short_config()
        env = PushingEnv(cfg, seed=1, mode=Mode.SPP)
        trace = run_episode(env, FirstPointPolicy(), start=Pose2D(-0.1, 0.1, 0.0))
        m = trace_metrics(trace, ORIGIN, cfg.episode.pos_tol, cfg.episode.ang_tol)
        assert m.rounds == trace.rounds <= 4
        assert m.plant_steps == trace.plant_steps


class TestEvaluate:
    """Test suite evaluation"""

    def test_zero_episodes(self):
        report = evaluate(FirstPointPolicy(), short_config(), n_episodes=0, mode=Mode.SPP)
        assert report.success_rate is None
        assert report.episodes == []
        assert report.aggregates == {}

    def test_perfect_policy(self):
        report = evaluate(TeleportPolicy(), RunConfig(), n_episodes=5)
        assert report.success_rate == 1.0
        assert all(m.rounds == 1 and m.plant_steps == 0 for m in report.episodes)
        assert report.seeds == [0, 1, 2, 3, 4]

    def test_success_rate_is_exact_fraction(self):
        report = evaluate(FirstPointPolicy(), short_config(), n_episodes=3, mode=Mode.SPP)
        assert report.success_rate == sum(m.success for m in report.episodes) / 3
        assert list(report.aggregates) == list(METRIC_NAMES)

    def test_reproducible_with_seed_list(self):
        cfg = short_config()
        a = evaluate(GreedyLookaheadPolicy(), cfg, seeds=[4, 9], mode=Mode.SPP)
        b = evaluate(GreedyLookaheadPolicy(), cfg, seeds=[4, 9], mode=Mode.SPP)
        assert without_wall_time(a) == without_wall_time(b)

    def test_traces_follow_seed_order(self):
        report, traces = run_suite(FirstPointPolicy(), short_config(), seeds=[7, 3], mode=Mode.SPP)
        assert report.seeds == [7, 3]
        assert traces[0].start == Pose2D.from_state(PushingEnv(short_config(), seed=7).reset())

    def test_negative_count_rejected(self):
        with pytest.raises(ValueError):
            evaluate(FirstPointPolicy(), short_config(), n_episodes=-1)

    @pytest.mark.slow
    def test_worker_count_does_not_change_results(self):
        cfg = short_config()
        serial = evaluate(GreedyLookaheadPolicy(), cfg, n_episodes=6, mode=Mode.SPP, workers=1)
        parallel = evaluate(GreedyLookaheadPolicy(), cfg, n_episodes=6, mode=Mode.SPP, workers=3)
        assert without_wall_time(serial) == without_wall_time(parallel)

    @pytest.mark.slow
    def test_switching_controller_suite(self):
        report = evaluate(GreedyLookaheadPolicy(), RunConfig(episode=EpisodeConfig(max_rounds=10)), n_episodes=3)
        assert len(report.episodes) == 3
        assert all(m.rounds <= 10 for m in report.episodes)


class TestCompare:
    """Test report comparison"""

    def reports(self):
        cfg = short_config()
        a = evaluate(FirstPointPolicy(), cfg, seeds=[1, 2], mode=Mode.SPP, label="a")
        return cfg, a

    def test_identical_reports(self):
        _, a = self.reports()
        table = compare([a, a.model_copy(update={"label": "b"})])
        assert table["label"].tolist() == ["a", "b"]
        for name in METRIC_NAMES:
            if name != "wall_time":
                assert table[f"{name}_delta"].tolist() == [0.0, 0.0]
        assert table["warning"].tolist() == ["", ""]

    def test_stable_columns(self):
        _, a = self.reports()
        columns = compare([a, a]).columns.tolist()
        assert columns[:5] == ["label", "shape", "mode", "episodes", "success_rate"]
        assert columns[5:7] == ["trajectory_length_mean", "trajectory_length_std"]
        assert columns[-1] == "warning"
        assert columns[-2] == "wall_time_delta"

    def test_seed_mismatch_warned(self):
        cfg, a = self.reports()
        b = evaluate(FirstPointPolicy(), cfg, seeds=[3, 4], mode=Mode.SPP, label="b")
        table = compare([a, b])
        assert "seed list differs" in table["warning"].iloc[1]

    def test_config_mismatch_warned(self):
        _, a = self.reports()
        other = evaluate(FirstPointPolicy(), short_config(pos_tol=0.02), seeds=[1, 2], mode=Mode.SPP, label="c")
        assert "fingerprint" in compare([a, other])["warning"].iloc[1]

    def test_needs_two_reports(self):
        _, a = self.reports()
        with pytest.raises(ValueError, match="two"):
            compare([a])


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
