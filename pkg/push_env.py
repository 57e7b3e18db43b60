"""
Switching-push decision process: one step is one pushing round at a chosen
point, rewarded by goal progress plus potential-based shaping.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from config import EpisodeConfig, RunConfig
from geometry import (
    Mcr,
    Pose2D,
    ShapeModel,
    Workspace,
    build_mcr,
    get_shape,
    goal_reached,
    in_workspace,
    wrap_angle,
)
from kinematics import PushPlant, push_delta
from mpc import RoundOutcome, RoundReason, run_open_loop, run_round
from qlearn import N_ACTIONS, Transition

logger = logging.getLogger(__name__)

GOAL_REWARD = 100.0
OUT_OF_WORKSPACE_REWARD = -100.0
SPP_ROTATION_DISTANCE = 0.025
TRANSLATION_PRIMITIVES = (1, 2, 3, 4)
DENOMINATOR_FLOOR = 1e-6


class Mode(str, Enum):
    MPC = "mpc"
    SPP = "spp"


def goal_state(cfg: EpisodeConfig) -> np.ndarray:
    return np.asarray(cfg.goal, dtype=float)


def workspace_of(cfg: EpisodeConfig) -> Workspace:
    return Workspace(cfg.workspace_half_width, cfg.workspace_half_height)


def weighted_error(s, cfg: EpisodeConfig) -> np.ndarray:
    """W (s - s_g) with the angle difference wrapped and weighted by angle_weight."""
    err = np.asarray(s, dtype=float) - goal_state(cfg)
    err[2] = cfg.angle_weight * wrap_angle(err[2])
    return err


def potential(s, cfg: EpisodeConfig) -> float:
    """
    Phi(s) = -||W (s - s_g)|| / D.

    D is ||W s_g||, or the workspace diagonal when the goal sits at the origin.
    """
    g = goal_state(cfg).copy()
    g[2] *= cfg.angle_weight
    scale = float(np.linalg.norm(g))
    if scale <= DENOMINATOR_FLOOR:
        scale = workspace_of(cfg).diagonal
    return -float(np.linalg.norm(weighted_error(s, cfg))) / scale


def shaping(s, s_next, cfg: EpisodeConfig) -> float:
    return cfg.alpha * potential(s_next, cfg) - potential(s, cfg)


def is_goal(s, cfg: EpisodeConfig) -> bool:
    return goal_reached(Pose2D.from_state(s), Pose2D.from_state(goal_state(cfg)), cfg.pos_tol, cfg.ang_tol)


def env_reward(s, s_next, cfg: EpisodeConfig, oob: bool) -> float:
    """+100 at the goal, -100 out of the workspace, otherwise +1 for progress and -1 for none."""
    if is_goal(s_next, cfg):
        return GOAL_REWARD
    if oob:
        return OUT_OF_WORKSPACE_REWARD
    closer = np.linalg.norm(weighted_error(s_next, cfg)) < np.linalg.norm(weighted_error(s, cfg))
    return 1.0 if closer else -1.0


def sample_start_pose(cfg: EpisodeConfig, rng: np.random.Generator) -> Pose2D:
    """Uniform over the workspace shrunk by init_margin, rejecting poses already at the goal."""
    hx = cfg.workspace_half_width - cfg.init_margin
    hy = cfg.workspace_half_height - cfg.init_margin
    goal = Pose2D.from_state(goal_state(cfg))
    while True:
        pose = Pose2D(rng.uniform(-hx, hx), rng.uniform(-hy, hy), rng.uniform(-math.pi, math.pi))
        if not goal_reached(pose, goal, cfg.pos_tol, cfg.ang_tol):
            return pose


def reset(cfg: EpisodeConfig, rng: np.random.Generator) -> np.ndarray:
    return sample_start_pose(cfg, rng).as_state()


@dataclass(eq=False)
class RoundResult:
    transition: Transition
    outcome: RoundOutcome
    reward_parts: tuple[float, float]  # (r_env, r_shaping)
    point_id: int
    mcr: Mcr | None
    success: bool
    out_of_workspace: bool
    done: bool  # episode over, including the round limit

    @property
    def reward(self) -> float:
        return self.transition.r


class PushingEnv:
    """
    One switching-push episode at a time over a simulated plant.

    The environment owns its random generator and plant; separate instances
    with separate seeds are independent.
    """

    def __init__(self, cfg: RunConfig, seed: int | None = None, shape: ShapeModel | None = None, mode: Mode | str = Mode.MPC):
        self.cfg = cfg
        self.episode_cfg = cfg.episode
        self.mode = Mode(mode)
        self.seed = cfg.episode.seed if seed is None else seed
        self.rng = np.random.default_rng(self.seed)
        self.shape = shape or get_shape(cfg.episode.shape)
        self.goal = Pose2D.from_state(goal_state(cfg.episode))
        self.workspace = workspace_of(cfg.episode)
        noise = cfg.noise.model_copy(update={"seed": cfg.noise.seed + self.seed})
        self.plant = PushPlant(self.shape, cfg.model, noise)
        self.rounds = 0
        self.done = True

    @property
    def pose(self) -> Pose2D:
        return self.plant.pose

    @property
    def state(self) -> np.ndarray:
        return self.plant.pose.as_state()

    def reset(self, pose: Pose2D | None = None) -> np.ndarray:
        start = pose if pose is not None else sample_start_pose(self.episode_cfg, self.rng)
        self.plant.reset(start)
        self.rounds = 0
        self.done = False
        logger.debug(f"[ENV] reset to ({start.x:.4f}, {start.y:.4f}, {start.theta:.4f})")
        return self.state

    def act(self, action: int) -> RoundResult:
        if self.mode is Mode.SPP:
            return self.spp_execute(action)
        return self.step_round(action)

    def _check_action(self, idx: int) -> int:
        if self.done:
            raise ValueError("episode already terminated; call reset()")
        if not 0 <= idx < N_ACTIONS:
            raise ValueError(f"pushing point index must be in [0, {N_ACTIONS}), got {idx}")
        point_id = idx + 1
        self.shape.point(point_id)
        return point_id

    def step_round(self, point_idx: int, inputs: np.ndarray | None = None) -> RoundResult:
        """
        Run one pushing round at a point.

        Args:
            point_idx: action index 0..5 (pushing point id - 1)
            inputs: fixed object-frame input sequence replacing the controller;
                the motion constraint region is not used in that case

        Returns:
            RoundResult with the transition and its reward decomposition
        """
        point_id = self._check_action(point_idx)
        cfg = self.episode_cfg
        s = self.state
        mcr: Mcr | None = None

        if goal_reached(self.pose, self.goal, cfg.pos_tol, cfg.ang_tol):
            outcome = RoundOutcome(RoundReason.REACHED_GOAL, 0, [self.pose])
        elif inputs is not None:
            outcome = run_open_loop(self.plant, point_id, inputs, self.goal, cfg.pos_tol, cfg.ang_tol)
        else:
            mcr = build_mcr(self.pose.position, self.goal.position, cfg.r_min, cfg.k)
            outcome = run_round(
                self.plant, self.shape, point_id, self.goal, self.cfg.model, self.cfg.mpc,
                mcr=mcr, pos_tol=cfg.pos_tol, ang_tol=cfg.ang_tol,
            )
        return self._finish(point_idx, s, outcome, mcr)

    def primitive_inputs(self, primitive_idx: int) -> np.ndarray:
        """
        Open-loop input sequence of a pushing primitive, object frame.

        Points #1-#4 push from the point through the CoM over the infinity-norm
        of the remaining position error; #5 and #6 push perpendicular to that
        line for a fixed distance, turned toward the goal orientation.
        """
        point_id = primitive_idx + 1
        p = self.shape.point(point_id).p
        to_com = self.shape.com - p
        direction = to_com / np.linalg.norm(to_com)
        if point_id in TRANSLATION_PRIMITIVES:
            distance = float(np.max(np.abs(self.goal.position - self.pose.position)))
        else:
            direction = np.array([-direction[1], direction[0]])
            turn = push_delta(self.shape.lever(point_id), direction, self.cfg.model.h).d_omega
            if turn * wrap_angle(self.goal.theta - self.pose.theta) < 0.0:
                direction = -direction
            distance = SPP_ROTATION_DISTANCE

        if distance <= 0.0:
            return np.zeros((0, 2))
        n_steps = max(1, math.ceil(distance / max(self.cfg.mpc.u_max) - 1e-12))
        return np.tile(direction * distance / n_steps, (n_steps, 1))

    def spp_execute(self, primitive_idx: int) -> RoundResult:
        """Execute a pushing primitive open loop."""
        self._check_action(primitive_idx)
        return self.step_round(primitive_idx, inputs=self.primitive_inputs(primitive_idx))

    def _finish(self, idx: int, s: np.ndarray, outcome: RoundOutcome, mcr: Mcr | None) -> RoundResult:
        cfg = self.episode_cfg
        s_next = self.state
        oob = not in_workspace(self.workspace, self.pose)
        success = is_goal(s_next, cfg)
        r_env = env_reward(s, s_next, cfg, oob)
        r_shaping = shaping(s, s_next, cfg)
        self.rounds += 1
        terminal = success or oob
        self.done = terminal or self.rounds >= cfg.max_rounds
        transition = Transition(s=s, c_idx=idx, r=r_env + r_shaping, s_next=s_next, done=terminal)
        logger.debug(
            f"[ENV] round {self.rounds} point #{idx + 1}: {outcome.reason.value}, {outcome.steps} steps, "
            f"reward {r_env:+.0f} {r_shaping:+.4f}"
        )
        return RoundResult(
            transition=transition,
            outcome=outcome,
            reward_parts=(r_env, r_shaping),
            point_id=idx + 1,
            mcr=mcr,
            success=success,
            out_of_workspace=oob,
            done=self.done,
        )


def make_env(cfg: RunConfig, seed: int | None = None, shape: ShapeModel | None = None, mode: Mode | str = Mode.MPC) -> PushingEnv:
    return PushingEnv(cfg, seed=seed, shape=shape, mode=mode)
