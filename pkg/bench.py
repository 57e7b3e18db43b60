"""
Evaluation harness: episode traces, per-episode metrics, suite aggregation
and side-by-side comparison of evaluation reports.
"""

import copy
import logging
import time
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import pandas as pd
from pydantic import BaseModel

from config import RunConfig, config_fingerprint
from geometry import Pose2D, ShapeModel, goal_reached, wrap_angles
from push_env import Mode, PushingEnv, RoundResult, make_env
from qlearn import N_ACTIONS, QNet

logger = logging.getLogger(__name__)

METRIC_NAMES = ("trajectory_length", "angle_trajectory_length", "rounds", "plant_steps", "wall_time")


class Policy(Protocol):
    def __call__(self, env: PushingEnv) -> int: ...


class QNetPolicy:
    """
    Greedy (epsilon = 0) pushing-point choice from a trained network.

    An action that just left the state unchanged is masked until the state
    moves, so a deterministic plant cannot lock the policy into a no-op.
    """

    def __init__(self, net: QNet):
        self.net = net
        self._last: tuple[np.ndarray, int] | None = None

    def __call__(self, env: PushingEnv) -> int:
        state = env.state
        q = np.asarray(self.net.forward(state), dtype=float).copy()
        if self._last is not None and np.array_equal(self._last[0], state):
            q[self._last[1]] = -np.inf
        action = int(np.argmax(q))
        self._last = (state.copy(), action)
        return action


class GreedyLookaheadPolicy:
    """
    One-round lookahead without a network: tries every action on a copy of the
    environment and keeps the one with the highest round reward. A round that
    leaves the object where it was loses to any round that moves it.
    """

    def __call__(self, env: PushingEnv) -> int:
        best, best_key = 0, (False, -np.inf)
        for action in range(N_ACTIONS):
            trial = copy.deepcopy(env)
            result = trial.act(action)
            moved = result.success or not np.array_equal(trial.pose.as_state(), env.pose.as_state())
            key = (moved, result.reward)
            if key > best_key:
                best, best_key = action, key
        return best


@dataclass
class EpisodeTrace:
    start: Pose2D
    results: list[RoundResult] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def poses(self) -> list[Pose2D]:
        """Start pose, then one pose per plant step; a round without steps repeats its pose."""
        poses = [self.start]
        for result in self.results:
            trajectory = result.outcome.trajectory
            poses.extend(trajectory[1:] if result.outcome.steps else trajectory[:1])
        return poses

    @property
    def rounds(self) -> int:
        return len(self.results)

    @property
    def plant_steps(self) -> int:
        return sum(result.outcome.steps for result in self.results)

    def rows(self) -> list[dict]:
        """
        Trace CSV rows: row 0 is the start pose, then one row per plant step.

        The round rewards sit on the last row of their round; a round without
        plant steps contributes a single row repeating the pose with zero input.
        """
        rows = [_row(0, 0, 0, self.start, np.zeros(2), 0.0, 0.0, "none")]
        for number, result in enumerate(self.results, start=1):
            kind = result.mcr.kind if result.mcr is not None else "none"
            outcome = result.outcome
            r_env, r_shaping = result.reward_parts
            if outcome.steps == 0:
                rows.append(_row(len(rows), number, result.point_id, outcome.trajectory[0], np.zeros(2), r_env, r_shaping, kind))
                continue
            for i, (pose, u) in enumerate(zip(outcome.trajectory[1:], outcome.inputs, strict=True)):
                last = i == outcome.steps - 1
                rows.append(
                    _row(
                        len(rows), number, result.point_id, pose, u,
                        r_env if last else 0.0, r_shaping if last else 0.0, kind,
                    )
                )
        return rows


def _row(step: int, number: int, point_id: int, pose: Pose2D, u, r_env: float, r_shaping: float, kind: str) -> dict:
    return {
        "step": step,
        "round": number,
        "point_id": point_id,
        "x": pose.x,
        "y": pose.y,
        "theta": pose.theta,
        "u_x": float(u[0]),
        "u_y": float(u[1]),
        "r_env": r_env,
        "r_shaping": r_shaping,
        "mcr_kind": kind,
    }


def run_episode(env: PushingEnv, policy: Policy, start: Pose2D | None = None) -> EpisodeTrace:
    """Run one episode to termination or the round limit."""
    t0 = time.perf_counter()
    env.reset(start)
    trace = EpisodeTrace(start=env.pose)
    while not env.done:
        trace.results.append(env.act(policy(env)))
    trace.wall_time = time.perf_counter() - t0
    return trace


class EpisodeMetrics(BaseModel):
    success: bool
    trajectory_length: float
    angle_trajectory_length: float
    rounds: int
    plant_steps: int
    wall_time: float


class MetricSummary(BaseModel):
    mean: float
    std: float | None  # sample standard deviation, absent below two episodes
    min: float
    max: float


class SuiteReport(BaseModel):
    label: str
    shape: str
    mode: str
    fingerprint: str
    seeds: list[int]
    success_rate: float | None
    aggregates: dict[str, MetricSummary]
    episodes: list[EpisodeMetrics]


def episode_metrics(
    poses,
    goal: Pose2D,
    pos_tol: float = 0.015,
    ang_tol: float = 0.0436,
    rounds: int = 0,
    plant_steps: int = 0,
    wall_time: float = 0.0,
) -> EpisodeMetrics:
    """
    Metrics of one episode from its pose sequence.

    Args:
        poses: Pose2D list or an (n, 3) array of x, y, theta
        goal: goal pose for the final success test

    Raises:
        ValueError: empty trace
    """
    if isinstance(poses, np.ndarray):
        states = np.asarray(poses, dtype=float)
    else:
        states = np.array([p.as_state() if isinstance(p, Pose2D) else p for p in poses], dtype=float)
    if states.size == 0:
        raise ValueError("episode metrics need a non-empty trace")
    states = states.reshape(-1, 3)

    steps = np.diff(states, axis=0)
    final = Pose2D.from_state(states[-1])
    return EpisodeMetrics(
        success=goal_reached(final, goal, pos_tol, ang_tol),
        trajectory_length=float(np.sum(np.hypot(steps[:, 0], steps[:, 1]))),
        angle_trajectory_length=float(np.sum(np.abs(wrap_angles(steps[:, 2])))),
        rounds=rounds,
        plant_steps=plant_steps,
        wall_time=wall_time,
    )


def trace_metrics(trace: EpisodeTrace, goal: Pose2D, pos_tol: float, ang_tol: float) -> EpisodeMetrics:
    return episode_metrics(trace.poses, goal, pos_tol, ang_tol, trace.rounds, trace.plant_steps, trace.wall_time)


def metrics_from_trace_frame(
    frame: pd.DataFrame, goal: Pose2D, pos_tol: float = 0.015, ang_tol: float = 0.0436, plant_steps: int = 0, wall_time: float = 0.0
) -> EpisodeMetrics:
    """Recompute episode metrics from an exported trace table."""
    return episode_metrics(
        frame[["x", "y", "theta"]].to_numpy(dtype=float),
        goal,
        pos_tol,
        ang_tol,
        rounds=int(frame["round"].max()) if len(frame) else 0,
        plant_steps=plant_steps,
        wall_time=wall_time,
    )


def summarize(values: Sequence[float]) -> MetricSummary:
    data = np.asarray(values, dtype=float)
    return MetricSummary(
        mean=float(np.mean(data)),
        std=float(np.std(data, ddof=1)) if len(data) > 1 else None,
        min=float(np.min(data)),
        max=float(np.max(data)),
    )


def build_report(
    metrics: list[EpisodeMetrics], cfg: RunConfig, seeds: list[int], label: str, shape: str, mode: str
) -> SuiteReport:
    aggregates = {}
    if metrics:
        aggregates = {name: summarize([getattr(m, name) for m in metrics]) for name in METRIC_NAMES}
    successes = sum(m.success for m in metrics)
    return SuiteReport(
        label=label,
        shape=shape,
        mode=mode,
        fingerprint=config_fingerprint(cfg),
        seeds=list(seeds),
        success_rate=successes / len(metrics) if metrics else None,
        aggregates=aggregates,
        episodes=metrics,
    )


def _run_seeded(args: tuple[Policy, RunConfig, int, ShapeModel | None, str]) -> EpisodeTrace:
    policy, cfg, seed, shape, mode = args
    return run_episode(make_env(cfg, seed=seed, shape=shape, mode=mode), policy)


def run_suite(
    policy: Policy,
    cfg: RunConfig,
    n_episodes: int = 120,
    seeds: list[int] | None = None,
    workers: int = 1,
    shape: ShapeModel | None = None,
    mode: Mode | str = Mode.MPC,
    label: str = "",
) -> tuple[SuiteReport, list[EpisodeTrace]]:
    """
    Evaluate a policy over a list of episode seeds.

    Each episode owns an environment seeded from its entry of the seed list;
    results are assembled in seed-list order whatever the worker count.

    Args:
        policy: callable choosing the next action from the environment
        cfg: resolved run configuration
        n_episodes: episodes when no explicit seed list is given
        seeds: per-episode environment seeds; defaults to cfg.seed + 0..n_episodes-1
        workers: process fan-out; 1 runs in-process

    Returns:
        (report, traces in seed-list order)
    """
    if n_episodes < 0:
        raise ValueError(f"episode count must be non-negative, got {n_episodes}")
    seeds = list(seeds) if seeds is not None else [cfg.seed + i for i in range(n_episodes)]
    mode = Mode(mode).value
    shape_name = shape.name if shape is not None else cfg.episode.shape.value
    jobs = [(policy, cfg, seed, shape, mode) for seed in seeds]

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(_run_seeded, jobs))
    else:
        traces = [_run_seeded(job) for job in jobs]

    ep = cfg.episode
    goal = Pose2D(*ep.goal)
    metrics = [trace_metrics(t, goal, ep.pos_tol, ep.ang_tol) for t in traces]
    report = build_report(metrics, cfg, seeds, label or mode, shape_name, mode)
    logger.info(
        f"[EVAL] {report.label} on {shape_name}: {len(metrics)} episodes, success rate {report.success_rate}"
    )
    return report, traces


def evaluate(
    policy: Policy,
    cfg: RunConfig,
    n_episodes: int = 120,
    seeds: list[int] | None = None,
    workers: int = 1,
    shape: ShapeModel | None = None,
    mode: Mode | str = Mode.MPC,
    label: str = "",
) -> SuiteReport:
    report, _ = run_suite(policy, cfg, n_episodes, seeds, workers, shape, mode, label)
    return report


def _relative_delta(value: float | None, base: float | None) -> float:
    if value is None or base is None:
        return float("nan")
    if base == 0.0:
        return 0.0 if value == 0.0 else float("nan")
    return (value - base) / abs(base)


def compare(reports: list[SuiteReport], labels: list[str] | None = None) -> pd.DataFrame:
    """
    Side-by-side table of report aggregates with deltas relative to the first report.

    Columns are stable: label, shape, mode, episodes, success_rate, then
    ``<metric>_mean``/``<metric>_std`` per metric, then ``<metric>_delta``
    per metric and a ``warning`` column flagging config, shape or seed-list
    mismatches against the first report.

    Raises:
        ValueError: fewer than two reports
    """
    if len(reports) < 2:
        raise ValueError("compare needs at least two reports")
    labels = labels or [r.label or f"report_{i}" for i, r in enumerate(reports)]
    base = reports[0]

    rows = []
    for label, report in zip(labels, reports, strict=True):
        row: dict = {
            "label": label,
            "shape": report.shape,
            "mode": report.mode,
            "episodes": len(report.episodes),
            "success_rate": report.success_rate,
        }
        for name in METRIC_NAMES:
            summary = report.aggregates.get(name)
            row[f"{name}_mean"] = summary.mean if summary else None
            row[f"{name}_std"] = summary.std if summary else None
        for name in METRIC_NAMES:
            value = report.aggregates.get(name)
            reference = base.aggregates.get(name)
            row[f"{name}_delta"] = _relative_delta(
                value.mean if value else None, reference.mean if reference else None
            )

        warnings = []
        if report.fingerprint != base.fingerprint:
            warnings.append(f"config fingerprint differs from {labels[0]}")
        if report.shape != base.shape:
            warnings.append(f"shape differs from {labels[0]}")
        if report.seeds != base.seeds:
            warnings.append(f"seed list differs from {labels[0]}")
        row["warning"] = "; ".join(warnings)
        if warnings:
            logger.warning(f"[EVAL] {label}: {row['warning']}")
        rows.append(row)

    return pd.DataFrame(rows)
