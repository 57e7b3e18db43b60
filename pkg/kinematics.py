"""
Quasi-static one-finger pushing model and the plant that applies it.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from config import MotionModel, NoiseModel
from geometry import Pose2D, ShapeModel, rotation, wrap_angle

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PushDelta:
    d_com: np.ndarray  # object-frame CoM displacement, meters
    d_omega: float

    def __post_init__(self) -> None:
        if not (np.all(np.isfinite(self.d_com)) and math.isfinite(self.d_omega)):
            raise ValueError("push delta must be finite")


def push_jacobian(c, h: float) -> np.ndarray:
    """
    Input matrix B of the pushing model, delta x = B u with x = [CoM_x, CoM_y, omega].

    Args:
        c: pushing point relative to the CoM, object frame
        h: ratio of maximum frictional moment to maximum sliding friction (meters)

    Returns:
        3x2 matrix
    """
    if not h > 0:
        raise ValueError(f"h must be positive, got {h}")
    cx, cy = float(c[0]), float(c[1])
    h2 = h * h
    den = h2 + cx * cx + cy * cy
    return np.array(
        [
            [h2 + cx * cx, cx * cy],
            [cx * cy, h2 + cy * cy],
            [-cy, cx],
        ]
    ) / den


def push_delta(c, u, h: float) -> PushDelta:
    """Object-frame CoM and rotation increments for a pusher displacement u at lever c."""
    delta = push_jacobian(c, h) @ np.asarray(u, dtype=float)
    return PushDelta(d_com=delta[:2], d_omega=float(delta[2]))


def com_position(pose: Pose2D, shape: ShapeModel) -> np.ndarray:
    return pose.position + pose.rotation @ shape.com


def pose_from_com(com_world, theta: float, shape: ShapeModel) -> Pose2D:
    theta = wrap_angle(theta)
    origin = np.asarray(com_world) - rotation(theta) @ shape.com
    return Pose2D(float(origin[0]), float(origin[1]), theta)


def apply_push(
    pose: Pose2D,
    shape: ShapeModel,
    point_id: int,
    u,
    model: MotionModel,
    noise: NoiseModel | None = None,
    rng: np.random.Generator | None = None,
) -> Pose2D:
    """
    Advance the object by one pusher displacement.

    The object-frame increments are lifted to the world frame with the
    current orientation; the returned pose is that of the {B} origin.

    Args:
        pose: current {B} pose
        shape: pushed object
        point_id: pushing point id (1..6)
        u: pusher displacement in the object frame, meters
        model: h and mu_c
        noise: optional additive object-frame noise
        rng: noise stream; required when noise is non-zero

    Raises:
        ValueError: unknown point id, non-finite input or missing noise stream
    """
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError(f"push input must be finite, got {u.tolist()}")
    delta = push_jacobian(shape.lever(point_id), model.h) @ u

    if noise is not None and not noise.is_zero:
        if rng is None:
            raise ValueError("a random generator is required for non-zero noise")
        delta = delta + np.array(
            [
                rng.normal(0.0, noise.sigma_pos),
                rng.normal(0.0, noise.sigma_pos),
                rng.normal(0.0, noise.sigma_rot),
            ]
        )

    com_next = com_position(pose, shape) + pose.rotation @ delta[:2]
    return pose_from_com(com_next, pose.theta + delta[2], shape)


def contact_point_world(pose: Pose2D, shape: ShapeModel, point_id: int) -> np.ndarray:
    return pose.position + pose.rotation @ shape.point(point_id).p


class PushPlant:
    """
    Simulated pushing plant: owns the object pose and the noise stream.

    One instance belongs to one environment; distinct instances with distinct
    seeds are independent.
    """

    def __init__(self, shape: ShapeModel, model: MotionModel, noise: NoiseModel | None = None, pose: Pose2D | None = None):
        self.shape = shape
        self.model = model
        self.noise = noise or NoiseModel()
        self.rng = np.random.default_rng(self.noise.seed)
        self.pose = pose or Pose2D(0.0, 0.0, 0.0)
        self.steps = 0

    def reset(self, pose: Pose2D) -> None:
        self.pose = pose
        self.steps = 0

    def step(self, point_id: int, u) -> Pose2D:
        self.pose = apply_push(self.pose, self.shape, point_id, u, self.model, self.noise, self.rng)
        self.steps += 1
        return self.pose
