"""
SVG output: world-frame episode plots and labeled shape contours.
"""

import logging
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Circle, Ellipse, Polygon  # noqa: E402

from geometry import CircleMcr, Mcr, Pose2D, ShapeModel  # noqa: E402

logger = logging.getLogger(__name__)


def _mcr_patch(m: Mcr) -> Ellipse | Circle:
    style = {"fill": False, "linestyle": "--", "linewidth": 0.8, "edgecolor": "tab:orange"}
    if isinstance(m, CircleMcr):
        return Circle(m.center, m.radius, **style)
    return Ellipse(m.center, 2 * m.semi_major, 2 * m.semi_minor, angle=math.degrees(m.orientation), **style)


def _outline(shape: ShapeModel, pose: Pose2D) -> np.ndarray:
    return shape.contour @ pose.rotation.T + pose.position


def save_episode_svg(
    path: str | Path,
    shape: ShapeModel,
    poses: list[Pose2D],
    goal: Pose2D,
    mcrs: list[Mcr] | None = None,
    half_width: float = 0.25,
    half_height: float = 0.25,
) -> Path:
    """
    Plot the {B}-origin trajectory with the start and goal outlines and the
    region of every controller round.
    """
    fig, ax = plt.subplots(figsize=(6, 6))
    xy = np.array([p.position for p in poses])
    ax.plot(xy[:, 0], xy[:, 1], color="tab:blue", linewidth=1.2, label="trajectory")
    ax.add_patch(Polygon(_outline(shape, poses[0]), closed=True, fill=False, edgecolor="tab:gray", label="start"))
    ax.add_patch(Polygon(_outline(shape, poses[-1]), closed=True, fill=False, edgecolor="tab:blue", label="final"))
    ax.add_patch(Polygon(_outline(shape, goal), closed=True, fill=False, edgecolor="tab:green", linestyle=":", label="goal"))
    ax.plot([goal.x], [goal.y], marker="x", color="tab:green", markersize=8)
    for m in mcrs or []:
        ax.add_patch(_mcr_patch(m))

    ax.set_xlim(-half_width, half_width)
    ax.set_ylim(-half_height, half_height)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(f"{shape.name}: {len(poses) - 1} steps")
    ax.legend(loc="upper right", fontsize="small")

    out = Path(path)
    fig.savefig(out, format="svg")
    plt.close(fig)
    logger.info(f"Saved episode plot to {out}")
    return out


def save_shapes_svg(path: str | Path, shapes: list[ShapeModel]) -> Path:
    """Contours of the given shapes with CoM and numbered pushing points."""
    fig, axes = plt.subplots(1, len(shapes), figsize=(4 * len(shapes), 4), squeeze=False)
    for ax, shape in zip(axes[0], shapes, strict=True):
        ax.add_patch(Polygon(shape.contour, closed=True, fill=False, edgecolor="black"))
        ax.plot([shape.com[0]], [shape.com[1]], marker="+", color="tab:red", markersize=10)
        for pt in shape.points:
            ax.plot([pt.p[0]], [pt.p[1]], marker="o", color="tab:blue", markersize=4)
            ax.annotate(f"#{pt.id}", pt.p, textcoords="offset points", xytext=(4, 4), fontsize=8)
            ax.arrow(pt.p[0], pt.p[1], 0.01 * pt.e_n[0], 0.01 * pt.e_n[1], width=0.0005, color="tab:blue")
        lo = shape.contour.min(axis=0) - 0.02
        hi = shape.contour.max(axis=0) + 0.02
        ax.set_xlim(lo[0], hi[0])
        ax.set_ylim(lo[1], hi[1])
        ax.set_aspect("equal")
        ax.set_title(shape.name)

    out = Path(path)
    fig.savefig(out, format="svg")
    plt.close(fig)
    logger.info(f"Saved shape plot to {out}")
    return out
