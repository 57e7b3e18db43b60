"""
Planar geometry for pushing: poses, angle wrapping, object shapes with
pushing points and contact frames, motion constraint regions and the
workspace rectangle.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from scipy.optimize import brentq
from shapely.geometry import LinearRing, Point, Polygon

from config import ShapeName

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
BOUNDARY_TOL = 1e-6
MCR_CONTAINS_TOL = 1e-9
ON_AXIS_TOL = 1e-12


def wrap_angle(a: float) -> float:
    """
    Wrap an angle into the half-open interval (-pi, pi].

    Raises:
        ValueError: If the angle is not finite
    """
    if not math.isfinite(a):
        raise ValueError(f"angle must be finite, got {a}")
    wrapped = a - TWO_PI * math.floor((a + math.pi) / TWO_PI)
    if wrapped <= -math.pi:
        wrapped += TWO_PI
    elif wrapped > math.pi:
        wrapped -= TWO_PI
    return wrapped


def wrap_angles(a: np.ndarray) -> np.ndarray:
    """Vectorized wrap_angle."""
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError("angles must be finite")
    wrapped = a - TWO_PI * np.floor((a + math.pi) / TWO_PI)
    wrapped = np.where(wrapped <= -math.pi, wrapped + TWO_PI, wrapped)
    return np.where(wrapped > math.pi, wrapped - TWO_PI, wrapped)


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Pose2D:
    """Pose of the object frame {B} in the world frame {W}."""

    x: float
    y: float
    theta: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"pose position must be finite, got ({self.x}, {self.y})")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def rotation(self) -> np.ndarray:
        return rotation(self.theta)

    def as_state(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @classmethod
    def from_state(cls, s) -> "Pose2D":
        return cls(float(s[0]), float(s[1]), float(s[2]))


@dataclass(frozen=True, eq=False)
class PushingPoint:
    id: int
    p: np.ndarray
    e_n: np.ndarray  # inward contact normal, {B}
    e_t: np.ndarray  # contact tangent, {B}


@dataclass(frozen=True, eq=False)
class ShapeModel:
    name: str
    contour: np.ndarray  # (V, 2) counter-clockwise, {B}
    com: np.ndarray
    points: tuple[PushingPoint, ...]

    def __deepcopy__(self, memo: dict) -> "ShapeModel":
        # immutable; environment copies share it
        return self

    def point(self, point_id: int) -> PushingPoint:
        for pt in self.points:
            if pt.id == point_id:
                return pt
        raise ValueError(f"shape {self.name} has no pushing point #{point_id}")

    def lever(self, point_id: int) -> np.ndarray:
        """Pushing point position relative to the CoM (object frame)."""
        return self.point(point_id).p - self.com


def _edges(contour: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(contour[i], contour[(i + 1) % len(contour)]) for i in range(len(contour))]


def _distance_to_segment(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    t = float(np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))


def contact_frame(contour: np.ndarray, com: np.ndarray, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Contact frame at a boundary point of a counter-clockwise contour.

    At a vertex the adjacent edge whose inward normal points most toward
    the CoM is used.

    Returns:
        (e_n, e_t): inward unit normal and the unit tangent e_t = R(-pi/2) e_n
    """
    best: tuple[float, np.ndarray] | None = None
    to_com = com - p
    to_com = to_com / max(np.linalg.norm(to_com), 1e-300)
    for a, b in _edges(contour):
        if _distance_to_segment(p, a, b) > BOUNDARY_TOL:
            continue
        d = (b - a) / np.linalg.norm(b - a)
        n = np.array([-d[1], d[0]])
        score = float(np.dot(n, to_com))
        if best is None or score > best[0]:
            best = (score, n)
    if best is None:
        raise ValueError(f"point {p.tolist()} is not on the contour")
    e_n = best[1]
    e_t = np.array([e_n[1], -e_n[0]])
    return e_n, e_t


def make_shape(name: str, contour, com, points: dict[int, tuple[float, float]]) -> ShapeModel:
    """
    Build a ShapeModel and check its invariants.

    Args:
        name: shape name
        contour: polygon vertices in {B}; reoriented counter-clockwise if needed
        com: centre of mass in {B}
        points: pushing point id -> position in {B}

    Raises:
        ValueError: non-simple contour, CoM outside, or a point off the boundary
    """
    contour = np.asarray(contour, dtype=float)
    com = np.asarray(com, dtype=float)
    ring = LinearRing(contour)
    if not ring.is_simple or len(contour) < 3:
        raise ValueError(f"contour of shape {name} is not a simple polygon")
    if not ring.is_ccw:
        contour = contour[::-1].copy()

    polygon = Polygon(contour)
    if not polygon.contains(Point(com)):
        raise ValueError(f"CoM {com.tolist()} of shape {name} is not strictly inside the contour")

    built = []
    for point_id in sorted(points):
        p = np.asarray(points[point_id], dtype=float)
        if polygon.exterior.distance(Point(p)) > BOUNDARY_TOL:
            raise ValueError(f"pushing point #{point_id} of shape {name} is off the contour")
        e_n, e_t = contact_frame(contour, com, p)
        built.append(PushingPoint(id=point_id, p=p, e_n=e_n, e_t=e_t))

    return ShapeModel(name=name, contour=contour, com=com, points=tuple(built))


def _line_intersection(p1, p2, q1, q2) -> tuple[float, float]:
    """Intersection of the line through p1, p2 with the line through q1, q2."""
    p1, p2, q1, q2 = (np.asarray(v, dtype=float) for v in (p1, p2, q1, q2))
    d1, d2 = p2 - p1, q2 - q1
    denom = d1[0] * d2[1] - d1[1] * d2[0]
    t = ((q1[0] - p1[0]) * d2[1] - (q1[1] - p1[1]) * d2[0]) / denom
    x = p1 + t * d1
    return float(x[0]), float(x[1])


# Pushing points and CoM per shape, {B} coordinates in meters.
TABLE_POINTS: dict[ShapeName, dict] = {
    ShapeName.T: {
        "com": (0.0, -0.029),
        "points": {1: (0.002, 0.053), 2: (-0.066, -0.039), 3: (0.0, -0.078),
                   4: (0.064, -0.037), 5: (-0.035, -0.078), 6: (0.031, -0.078)},
    },
    ShapeName.L: {
        "com": (0.025, -0.025),
        "points": {1: (0.027, -0.002), 2: (-0.027, -0.020), 3: (0.027, -0.064),
                   4: (0.104, -0.025), 5: (0.092, -0.010), 6: (0.088, -0.064)},
    },
    ShapeName.TRIANGLE: {
        "com": (0.0, 0.006),
        "points": {1: (-0.020, 0.082), 2: (-0.039, 0.006), 3: (0.0, -0.039),
                   4: (0.051, 0.002), 5: (0.052, -0.002), 6: (0.006, 0.064)},
    },
    ShapeName.TRAPEZOID: {
        "com": (0.011, -0.004),
        "points": {1: (0.010, 0.053), 2: (-0.032, 0.0), 3: (0.012, -0.051),
                   4: (0.063, -0.004), 5: (-0.012, -0.051), 6: (0.063, 0.018)},
    },
}


def _contour(name: ShapeName) -> list[tuple[float, float]]:
    pts = TABLE_POINTS[name]["points"]
    if name is ShapeName.T:
        # inverted T: bar along the bottom, stem up to point #1
        return [(-0.066, -0.078), (0.064, -0.078), (0.064, -0.020), (0.020, -0.020),
                (0.020, 0.053), (-0.020, 0.053), (-0.020, -0.020), (-0.066, -0.020)]
    if name is ShapeName.L:
        return [(-0.027, -0.064), (0.104, -0.064), (0.104, -0.010), (0.027, -0.010),
                (0.027, 0.035), (-0.027, 0.035)]
    if name is ShapeName.TRIANGLE:
        # each side passes through two of the pushing points
        left = (pts[1], pts[2])
        upper_right = (pts[6], pts[4])
        lower_right = (pts[3], pts[5])
        return [_line_intersection(*left, *lower_right),
                _line_intersection(*upper_right, *lower_right),
                _line_intersection(*left, *upper_right)]
    # right-angle trapezoid; the slanted side passes through point #2
    bottom_left = (-0.045, -0.051)
    top_left_x = pts[2][0] + (pts[2][0] - bottom_left[0]) / (pts[2][1] - bottom_left[1]) * (0.053 - pts[2][1])
    return [bottom_left, (0.063, -0.051), (0.063, 0.053), (top_left_x, 0.053)]


def builtin_shapes() -> list[ShapeModel]:
    """The four benchmark shapes with their tabulated CoM and pushing points."""
    return [
        make_shape(name.value, _contour(name), TABLE_POINTS[name]["com"], TABLE_POINTS[name]["points"])
        for name in ShapeName
    ]


def get_shape(name: str | ShapeName) -> ShapeModel:
    key = ShapeName(name)
    for shape in builtin_shapes():
        if shape.name == key.value:
            return shape
    raise ValueError(f"unknown shape {name!r}")


def load_shape(path: str | Path) -> ShapeModel:
    """
    Load a shape definition from YAML.

    Expected keys: ``name``, ``contour`` (list of [x, y]), ``com`` ([x, y]) and
    ``points`` (list of mappings with ``id`` and ``p``). Contact frames are
    computed, never read.
    """
    with open(path) as f:
        data = yaml.safe_load(f)
    try:
        points = {int(item["id"]): tuple(item["p"]) for item in data["points"]}
        shape = make_shape(str(data["name"]), data["contour"], data["com"], points)
    except (KeyError, TypeError) as e:
        raise ValueError(f"malformed shape file {path}: {e}")
    logger.info(f"Loaded shape {shape.name} with {len(shape.points)} pushing points from {path}")
    return shape


@dataclass(frozen=True)
class EllipseMcr:
    center: tuple[float, float]
    semi_major: float
    semi_minor: float
    orientation: float

    kind: str = field(default="ellipse", init=False)

    def __post_init__(self) -> None:
        if not (self.semi_major >= self.semi_minor > 0):
            raise ValueError(f"ellipse needs semi_major >= semi_minor > 0, got {self.semi_major}, {self.semi_minor}")

    def to_local(self, p) -> np.ndarray:
        return rotation(self.orientation).T @ (np.asarray(p, dtype=float) - np.asarray(self.center))

    def quadratic_form(self, p) -> float:
        q = self.to_local(p)
        return float((q[0] / self.semi_major) ** 2 + (q[1] / self.semi_minor) ** 2)

    def translated(self, offset) -> "EllipseMcr":
        c = np.asarray(self.center) + np.asarray(offset, dtype=float)
        return EllipseMcr((float(c[0]), float(c[1])), self.semi_major, self.semi_minor, self.orientation)


@dataclass(frozen=True)
class CircleMcr:
    center: tuple[float, float]
    radius: float

    kind: str = field(default="circle", init=False)

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise ValueError(f"circle radius must be positive, got {self.radius}")

    def quadratic_form(self, p) -> float:
        d = np.asarray(p, dtype=float) - np.asarray(self.center)
        return float(np.dot(d, d) / self.radius**2)

    def translated(self, offset) -> "CircleMcr":
        c = np.asarray(self.center) + np.asarray(offset, dtype=float)
        return CircleMcr((float(c[0]), float(c[1])), self.radius)


Mcr = EllipseMcr | CircleMcr


def build_mcr(current, target, r_min: float, k: float) -> Mcr:
    """
    Motion constraint region for one pushing round.

    Far from the target (dist >= r_min) the region is an ellipse whose major
    axis is the current->target segment and whose minor axis is k times the
    major axis; closer in it is a circle of radius r_min around the target.
    """
    if not r_min > 0:
        raise ValueError(f"r_min must be positive, got {r_min}")
    if not 0 < k < 1:
        raise ValueError(f"k must lie in (0, 1), got {k}")
    current = np.asarray(current, dtype=float)
    target = np.asarray(target, dtype=float)
    delta = target - current
    dist = float(np.linalg.norm(delta))
    if dist < r_min:
        return CircleMcr((float(target[0]), float(target[1])), r_min)
    mid = (current + target) / 2.0
    return EllipseMcr(
        center=(float(mid[0]), float(mid[1])),
        semi_major=dist / 2.0,
        semi_minor=k * dist / 2.0,
        orientation=math.atan2(delta[1], delta[0]),
    )


def mcr_contains(m: Mcr, p) -> bool:
    return m.quadratic_form(p) <= 1.0 + MCR_CONTAINS_TOL


def _nearest_on_ellipse(a: float, b: float, y0: float, y1: float) -> tuple[float, float]:
    """
    Nearest point on x^2/a^2 + y^2/b^2 = 1 to (y0, y1), first quadrant, a >= b.

    The root is searched in w = (t + b^2) / b^2, the shifted secular variable,
    so the lower bracket end w = y1 / b carries no cancellation near the major
    axis; points within ON_AXIS_TOL of the axis use the closed form.
    """
    if y1 > ON_AXIS_TOL * a:
        if y0 > ON_AXIS_TOL * a:
            r = (a / b) ** 2
            z0, z1 = y0 / a, y1 / b

            def secular(w: float) -> float:
                return (r * z0 / (w + r - 1.0)) ** 2 + (z1 / w) ** 2 - 1.0

            lo = z1
            hi = math.hypot(r * z0, z1)
            if secular(lo) <= 0.0:
                w = lo
            elif secular(hi) >= 0.0:
                w = hi
            else:
                w = brentq(secular, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps)
            return r * y0 / (w + r - 1.0), y1 / w
        return 0.0, b
    denom = a * a - b * b
    if denom > 0 and y0 < denom / a:
        x0 = a * a * y0 / denom
        return x0, b * math.sqrt(max(0.0, 1.0 - (x0 / a) ** 2))
    return a, 0.0


def mcr_halfspace(m: Mcr, p) -> tuple[np.ndarray, float]:
    """
    Supporting halfplane {q : normal.q <= offset} of the region at the
    boundary point nearest to p. The whole region lies inside it.

    At the exact centre of a circle the normal is (1, 0).
    """
    p = np.asarray(p, dtype=float)
    if isinstance(m, CircleMcr):
        center = np.asarray(m.center)
        d = p - center
        norm = float(np.linalg.norm(d))
        normal = d / norm if norm > 1e-15 else np.array([1.0, 0.0])
        return normal, float(np.dot(normal, center) + m.radius)

    a, b = m.semi_major, m.semi_minor
    local = m.to_local(p)
    x0, x1 = _nearest_on_ellipse(a, b, abs(local[0]), abs(local[1]))
    sx = -1.0 if local[0] < 0 else 1.0
    sy = -1.0 if local[1] < 0 else 1.0
    q_local = np.array([sx * x0, sy * x1])
    n_local = np.array([q_local[0] / (a * a), q_local[1] / (b * b)])
    n_local /= np.linalg.norm(n_local)
    rot = rotation(m.orientation)
    normal = rot @ n_local
    q = rot @ q_local + np.asarray(m.center)
    return normal, float(np.dot(normal, q))


def mcr_signed_distance(m: Mcr, p) -> float:
    """Distance outside the region (positive) or depth inside it (negative)."""
    normal, offset = mcr_halfspace(m, p)
    return float(np.dot(normal, np.asarray(p, dtype=float)) - offset)


def mcr_entry_fraction(m: Mcr, start, end) -> float:
    """
    Largest lam in [0, 1] with start + lam * (end - start) inside the region.

    ``start`` must be inside or on the boundary (within MCR_CONTAINS_TOL);
    the crossing is the larger root of the region's quadratic form along the
    segment, so a start on the boundary moving inward keeps its chord.
    """
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    if m.quadratic_form(end) <= 1.0:
        return 1.0
    if isinstance(m, EllipseMcr):
        s = m.to_local(start) / np.array([m.semi_major, m.semi_minor])
        e = m.to_local(end) / np.array([m.semi_major, m.semi_minor])
    else:
        s = (start - np.asarray(m.center)) / m.radius
        e = (end - np.asarray(m.center)) / m.radius
    d = e - s
    qa = float(np.dot(d, d))
    qb = 2.0 * float(np.dot(s, d))
    qc = float(np.dot(s, s)) - 1.0
    disc = qb * qb - 4.0 * qa * qc
    if qc > MCR_CONTAINS_TOL or disc < 0.0:
        return 0.0
    lam = (-qb + math.sqrt(disc)) / (2.0 * qa)
    return float(np.clip(lam, 0.0, 1.0))


@dataclass(frozen=True)
class Workspace:
    """Axis-aligned rectangle centred at the world origin."""

    half_width: float = 0.25
    half_height: float = 0.25

    def __post_init__(self) -> None:
        if not (self.half_width > 0 and self.half_height > 0):
            raise ValueError("workspace half extents must be positive")

    @property
    def diagonal(self) -> float:
        return math.hypot(2.0 * self.half_width, 2.0 * self.half_height)


def in_workspace(w: Workspace, p: Pose2D) -> bool:
    """Whether the {B} origin lies inside the workspace (boundary inclusive)."""
    return abs(p.x) <= w.half_width and abs(p.y) <= w.half_height


def pose_errors(pose: Pose2D, target: Pose2D) -> tuple[float, float]:
    """Position error of the {B} origin and absolute wrapped angle error."""
    return math.hypot(pose.x - target.x, pose.y - target.y), abs(wrap_angle(pose.theta - target.theta))


def goal_reached(pose: Pose2D, target: Pose2D, pos_tol: float, ang_tol: float) -> bool:
    """Both thresholds are checked independently, strict inequality."""
    pos_err, ang_err = pose_errors(pose, target)
    return pos_err < pos_tol and ang_err < ang_tol
