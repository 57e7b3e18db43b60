"""
Receding-horizon pushing controller.

Each control step solves a condensed finite-horizon quadratic program for a
fixed pushing point: inputs live in the friction cone intersected with the
input box (enforced by exact projection) and predicted {B}-origin positions
must stay inside the motion constraint region (squared-distance penalty
built from supporting halfplanes, then an exact feasibility repair).
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from config import MotionModel, MpcConfig
from geometry import (
    CircleMcr,
    Mcr,
    Pose2D,
    ShapeModel,
    goal_reached,
    mcr_entry_fraction,
    mcr_halfspace,
    mcr_signed_distance,
    rotation,
    wrap_angle,
)
from kinematics import PushPlant, com_position, push_jacobian

logger = logging.getLogger(__name__)

INFEASIBLE_TOL = 1e-6
DEFAULT_POS_TOL = 0.015
DEFAULT_ANG_TOL = 0.0436


class SolverStatus(str, Enum):
    CONVERGED = "converged"
    ITER_CAP = "iter_cap"
    INFEASIBLE = "infeasible"


class RoundReason(str, Enum):
    REACHED_GOAL = "reached_goal"
    HIT_MCR_BOUNDARY = "hit_mcr_boundary"
    STALLED = "stalled"
    INFEASIBLE = "infeasible"
    STEP_CAP = "step_cap"
    COMPLETED = "completed"  # open-loop primitive ran to the end


def friction_cone_rows(e_n, e_t, mu_c: float) -> np.ndarray:
    """
    Sticking-contact halfplanes: u is admissible iff rows @ u <= 0.

    Equivalent to |e_t . u| <= mu_c (e_n . u).
    """
    e_n = np.asarray(e_n, dtype=float)
    e_t = np.asarray(e_t, dtype=float)
    return np.vstack([-mu_c * e_n + e_t, -mu_c * e_n - e_t])


def _clip_halfplane(poly: list[np.ndarray], a: np.ndarray) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    for i, cur in enumerate(poly):
        nxt = poly[(i + 1) % len(poly)]
        fc, fn = float(a @ cur), float(a @ nxt)
        if fc <= 0.0:
            out.append(cur)
        if (fc < 0.0 < fn) or (fn < 0.0 < fc):
            out.append(cur + fc / (fc - fn) * (nxt - cur))
    return out


class FeasibleInputSet:
    """Convex polygon cone ∩ [-u_max, u_max]^2 with exact Euclidean projection."""

    def __init__(self, rows: np.ndarray, u_max):
        self.rows = np.asarray(rows, dtype=float)
        self.u_max = np.asarray(u_max, dtype=float)
        ux, uy = self.u_max
        poly = [np.array(v, dtype=float) for v in ((-ux, -uy), (ux, -uy), (ux, uy), (-ux, uy))]
        for row in self.rows:
            poly = _clip_halfplane(poly, row)
        self.vertices = np.array(poly)
        self._starts = self.vertices
        self._dirs = np.roll(self.vertices, -1, axis=0) - self.vertices
        self._len2 = np.maximum(np.sum(self._dirs**2, axis=1), 1e-300)

    def contains(self, u, tol: float = 0.0) -> np.ndarray:
        u = np.atleast_2d(u)
        in_cone = np.all(u @ self.rows.T <= tol, axis=1)
        in_box = np.all(np.abs(u) <= self.u_max + tol, axis=1)
        return in_cone & in_box

    def project(self, u) -> np.ndarray:
        """Nearest feasible point for each row of u (shape (M, 2) or (2,))."""
        single = np.ndim(u) == 1
        pts = np.atleast_2d(np.asarray(u, dtype=float))
        rel = pts[:, None, :] - self._starts[None, :, :]
        t = np.clip(np.sum(rel * self._dirs[None], axis=2) / self._len2[None], 0.0, 1.0)
        candidates = self._starts[None] + t[..., None] * self._dirs[None]
        dist = np.sum((pts[:, None, :] - candidates) ** 2, axis=2)
        nearest = candidates[np.arange(len(pts)), np.argmin(dist, axis=1)]
        projected = np.where(self.contains(pts)[:, None], pts, nearest)
        return projected[0] if single else projected


def project_input(u, rows: np.ndarray, u_max) -> np.ndarray:
    return FeasibleInputSet(rows, u_max).project(np.asarray(u, dtype=float))


@dataclass(eq=False)
class MpcProblem:
    B: np.ndarray  # 3x2, translational rows already in the world frame
    x0: np.ndarray  # [CoM_x, CoM_y, omega]
    x_star: np.ndarray
    cone: np.ndarray  # friction cone rows, object frame
    mcr: Mcr | None  # constrains predicted CoM positions
    config: MpcConfig

    def __post_init__(self) -> None:
        self.B = np.asarray(self.B, dtype=float)
        if self.B.shape != (3, 2) or not np.all(np.isfinite(self.B)):
            raise ValueError("B must be a finite 3x2 matrix")


@dataclass(eq=False)
class MpcSolution:
    u_seq: np.ndarray  # (N, 2)
    x_pred: np.ndarray  # (N, 3)
    cost: float
    iterations: int
    status: SolverStatus
    penalized_history: list[float] = field(default_factory=list)


def prediction_matrix(B: np.ndarray, N: int) -> np.ndarray:
    """Condensed map from stacked inputs to stacked state increments, (3N, 2N)."""
    return np.kron(np.tril(np.ones((N, N))), B)


def _support_violation(mcr: Mcr, P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Outward normals and violations of the supporting halfplanes taken where
    the ray from the region centre through each position meets the boundary.

    Positions inside the region have zero violation.
    """
    if isinstance(mcr, CircleMcr):
        rot = np.eye(2)
        scale = np.array([mcr.radius, mcr.radius])
    else:
        rot = rotation(mcr.orientation)
        scale = np.array([mcr.semi_major, mcr.semi_minor])
    local = (P - np.asarray(mcr.center)) @ rot
    f = np.sum((local / scale) ** 2, axis=1)
    q_local = local / np.sqrt(np.maximum(f, 1.0))[:, None]
    n_local = q_local / scale**2
    n_local /= np.maximum(np.linalg.norm(n_local, axis=1, keepdims=True), 1e-300)
    violation = np.where(f > 1.0, np.sum(n_local * (local - q_local), axis=1), 0.0)
    return n_local @ rot.T, violation


def _repair(mcr: Mcr, start: np.ndarray, B_pos: np.ndarray, U: np.ndarray, feasible: FeasibleInputSet) -> np.ndarray:
    """
    Scale inputs step by step so every predicted position stays in the region.

    A first step leaving from the boundary itself cannot be scaled; it is
    projected onto the inputs that do not move outward across the tangent.
    """
    U = U.copy()
    prev = start.copy()
    for i in range(len(U)):
        nxt = prev + B_pos @ U[i]
        if mcr.quadratic_form(nxt) > 1.0:
            lam = mcr_entry_fraction(mcr, prev, nxt)
            if i == 0 and lam < 1e-9:
                normal, _ = mcr_halfspace(mcr, prev)
                sliding = FeasibleInputSet(np.vstack([feasible.rows, B_pos.T @ normal]), feasible.u_max)
                U[i] = sliding.project(U[i])
            else:
                U[i] *= lam * (1.0 - 1e-12)
            nxt = prev + B_pos @ U[i]
        prev = nxt
    return U


def solve(problem: MpcProblem, warm_start: np.ndarray | None = None) -> MpcSolution:
    """
    Minimize the horizon cost over the input sequence.

    Monotone accelerated projected gradient with backtracking on the cost
    plus the region penalty; the momentum is restarted whenever an
    extrapolated step would raise the penalized cost, so accepted iterates
    never increase it.
    """
    cfg = problem.config
    N = cfg.N
    q = np.asarray(cfg.q_weights, dtype=float)
    r = np.asarray(cfg.r_weights, dtype=float)
    feasible = FeasibleInputSet(problem.cone, cfg.u_max)

    x0 = np.asarray(problem.x0, dtype=float)
    x_star = np.asarray(problem.x_star, dtype=float)
    if problem.mcr is not None and mcr_signed_distance(problem.mcr, x0[:2]) > max(INFEASIBLE_TOL, cfg.boundary_tol):
        logger.debug("[MPC] start position outside the motion constraint region")
        return MpcSolution(
            u_seq=np.zeros((N, 2)), x_pred=np.tile(x0, (N, 1)), cost=math.inf, iterations=0, status=SolverStatus.INFEASIBLE
        )

    S = prediction_matrix(problem.B, N)
    e0 = x0 - x_star
    e0[2] = wrap_angle(e0[2])
    E0 = np.tile(e0, N)
    X0 = np.tile(x0, N)
    qbar = np.tile(q, N)
    rbar = np.tile(r, N)
    pos_rows = np.array([3 * i + j for i in range(N) for j in (0, 1)])
    S_pos = S[pos_rows]
    rho = cfg.mcr_penalty
    mcr = problem.mcr

    def evaluate(u: np.ndarray) -> tuple[float, float, np.ndarray]:
        su = S @ u
        e = E0 + su
        cost = float(e @ (qbar * e) + u @ (rbar * u))
        grad = 2.0 * (S.T @ (qbar * e) + rbar * u)
        penalized = cost
        if mcr is not None:
            P = (X0 + su)[pos_rows].reshape(N, 2)
            normals, violation = _support_violation(mcr, P)
            if violation.any():
                penalized += rho * float(violation @ violation)
                grad = grad + S_pos.T @ (2.0 * rho * violation[:, None] * normals).ravel()
        return cost, penalized, grad

    H = S.T @ (qbar[:, None] * S) + np.diag(rbar)
    lipschitz = 2.0 * float(np.linalg.eigvalsh(H)[-1])

    if warm_start is not None:
        u = feasible.project(np.asarray(warm_start, dtype=float).reshape(N, 2)).ravel()
    else:
        u = np.zeros(2 * N)
    _, f, g = evaluate(u)
    history = [f]

    y, fy, gy, t = u.copy(), f, g, 1.0
    status = SolverStatus.ITER_CAP
    small_steps = 0
    iterations = 0
    for iterations in range(1, cfg.max_solver_iters + 1):
        while True:
            z = feasible.project((y - gy / lipschitz).reshape(N, 2)).ravel()
            _, fz, gz = evaluate(z)
            if not math.isfinite(fz):
                raise FloatingPointError("non-finite MPC objective")
            d = z - y
            if fz <= fy + gy @ d + 0.5 * lipschitz * (d @ d) + 1e-15 * max(1.0, abs(fy)):
                break
            lipschitz *= 2.0

        if fz <= f:
            decrease = f - fz
            u_prev, u, f, g = u, z, fz, gz
            history.append(f)
            t_next = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
            y = u + ((t - 1.0) / t_next) * (u - u_prev)
            t = t_next
            _, fy, gy = evaluate(y)
            small_steps = small_steps + 1 if decrease <= cfg.solver_tol * max(history[-2], 1e-12) else 0
            if small_steps >= 2:
                status = SolverStatus.CONVERGED
                break
        else:
            # restart momentum from the last accepted iterate
            y, fy, gy, t = u.copy(), f, g, 1.0

    U = u.reshape(N, 2)
    if mcr is not None:
        U = _repair(mcr, x0[:2], problem.B[:2], U, feasible)
    u_flat = U.ravel()
    e = E0 + S @ u_flat
    cost = float(e @ (qbar * e) + u_flat @ (rbar * u_flat))
    x_pred = (X0 + S @ u_flat).reshape(N, 3)

    if status is SolverStatus.ITER_CAP:
        logger.warning(f"[MPC] iteration cap {cfg.max_solver_iters} reached, cost {cost:.6g}")
    return MpcSolution(u_seq=U, x_pred=x_pred, cost=cost, iterations=iterations, status=status, penalized_history=history)


@dataclass(eq=False)
class RoundOutcome:
    reason: RoundReason
    steps: int
    trajectory: list[Pose2D]
    inputs: list[np.ndarray] = field(default_factory=list)
    solver_iterations: int = 0

    def __post_init__(self) -> None:
        if not self.trajectory:
            raise ValueError("a round trajectory must contain the start pose")
        if self.steps != len(self.trajectory) - 1:
            raise ValueError("steps must equal trajectory length - 1")


def _stalled(costs: list[float], window: int, eps: float) -> bool:
    if len(costs) <= window:
        return False
    return min(costs[:-window]) - min(costs[-window:]) < eps


def run_round(
    plant: PushPlant,
    shape: ShapeModel,
    point_id: int,
    target_pose: Pose2D,
    model: MotionModel,
    config: MpcConfig,
    *,
    mcr: Mcr | None = None,
    pos_tol: float = DEFAULT_POS_TOL,
    ang_tol: float = DEFAULT_ANG_TOL,
) -> RoundOutcome:
    """
    Push at one point until the goal, the region boundary, a stall, an
    infeasible solve or the step cap ends the round.

    Args:
        plant: simulated object; advanced in place
        shape: pushed object
        point_id: pushing point id (1..6)
        target_pose: goal {B} pose
        model: pushing model parameters
        config: controller settings
        mcr: region for the {B} origin built at round start; None disables it
        pos_tol: goal position threshold, meters
        ang_tol: goal angle threshold, radians

    Returns:
        RoundOutcome with the visited poses and applied inputs
    """
    point = shape.point(point_id)
    cone = friction_cone_rows(point.e_n, point.e_t, model.mu_c)
    B_obj = push_jacobian(shape.lever(point_id), model.h)
    x_star = np.r_[com_position(target_pose, shape), target_pose.theta]

    trajectory = [plant.pose]
    inputs: list[np.ndarray] = []
    costs: list[float] = []
    iterations = 0

    def outcome(reason: RoundReason) -> RoundOutcome:
        logger.debug(f"[ROUND] point #{point_id} ended with {reason.value} after {len(inputs)} steps")
        return RoundOutcome(reason, len(inputs), trajectory, inputs, iterations)

    if goal_reached(plant.pose, target_pose, pos_tol, ang_tol):
        return outcome(RoundReason.REACHED_GOAL)
    if mcr is not None and mcr_signed_distance(mcr, plant.pose.position) > config.boundary_tol:
        return outcome(RoundReason.HIT_MCR_BOUNDARY)

    # a fresh region passes through the start position; the boundary only
    # counts once the object has been inside it
    entered = False
    warm: np.ndarray | None = None
    for _ in range(config.round_step_cap):
        pose = plant.pose
        rot = pose.rotation
        B = B_obj.copy()
        B[:2] = rot @ B_obj[:2]
        x0 = np.r_[com_position(pose, shape), pose.theta]
        region = mcr.translated(rot @ shape.com) if mcr is not None else None

        solution = solve(MpcProblem(B, x0, x_star, cone, region, config), warm)
        iterations += solution.iterations
        if solution.status is SolverStatus.INFEASIBLE:
            return outcome(RoundReason.INFEASIBLE)
        costs.append(solution.cost)

        u0 = solution.u_seq[0].copy()
        trajectory.append(plant.step(point_id, u0))
        inputs.append(u0)
        warm = np.vstack([solution.u_seq[1:], solution.u_seq[-1:]])

        if goal_reached(plant.pose, target_pose, pos_tol, ang_tol):
            return outcome(RoundReason.REACHED_GOAL)
        if mcr is not None:
            depth = mcr_signed_distance(mcr, plant.pose.position)
            entered = entered or depth < -config.boundary_tol
            if depth > config.boundary_tol or (entered and depth >= -config.boundary_tol):
                return outcome(RoundReason.HIT_MCR_BOUNDARY)
        if _stalled(costs, config.stall_window, config.stall_eps):
            return outcome(RoundReason.STALLED)

    return outcome(RoundReason.STEP_CAP)


def run_open_loop(plant: PushPlant, point_id: int, inputs, target_pose: Pose2D, pos_tol: float, ang_tol: float) -> RoundOutcome:
    """Apply a fixed input sequence at one pushing point (no feedback, no region)."""
    trajectory = [plant.pose]
    applied = []
    for u in np.asarray(inputs, dtype=float).reshape(-1, 2):
        trajectory.append(plant.step(point_id, u))
        applied.append(np.array(u))
    reason = RoundReason.REACHED_GOAL if goal_reached(plant.pose, target_pose, pos_tol, ang_tol) else RoundReason.COMPLETED
    return RoundOutcome(reason, len(applied), trajectory, applied)
