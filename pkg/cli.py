"""
Command-line entry point: train, eval, run, shapes and compare.

Exit codes: 0 ok, 2 usage, 3 I/O or checkpoint, 4 domain validation.
"""

import argparse
import logging
import math
import sys
from pathlib import Path

from bench import GreedyLookaheadPolicy, Policy, QNetPolicy, SuiteReport, compare, run_episode, run_suite, trace_metrics
from config import RunConfig, ShapeName, config, load_run_config, parse_override
from geometry import Pose2D, ShapeModel, builtin_shapes, get_shape, in_workspace, load_shape
from plotting import save_episode_svg, save_shapes_svg
from push_env import Mode, make_env, workspace_of
from qlearn import train
from storage import CheckpointError, RunStorage, load_checkpoint, read_report

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DOMAIN = 4

SCENARIOS = {
    "position": (0.1, 0.1, 0.0),
    "angle": (0.0, 0.0, -math.pi / 2),
    "general": (-0.1, 0.1, -3 * math.pi / 4),
}


def non_negative_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {value}")
    return value


def pose_triple(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    try:
        values = tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y,theta, got {text!r}")
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f"expected x,y,theta, got {text!r}")
    return values[0], values[1], values[2]


def seed_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML config with dotted keys")
    common.add_argument("--seed", type=int, help="seed for training, start poses and noise")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--shape", choices=[s.value for s in ShapeName], help="builtin shape")
    common.add_argument("--shape-file", type=Path, help="YAML shape definition replacing --shape")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="logging level")

    parser = argparse.ArgumentParser(prog="switching-push", description="Switching-point planar pushing toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", parents=[common], help="train the pushing-point selector")
    p_train.add_argument("--episodes", type=non_negative_int)
    p_train.add_argument("--baseline", choices=["spp"], help="train over pushing primitives instead of the controller")
    p_train.add_argument("--seeds", type=seed_list, help="train one model per seed into seed_<n>/")
    p_train.set_defaults(handler=cmd_train)

    p_eval = sub.add_parser("eval", parents=[common], help="evaluate a policy over many episodes")
    p_eval.add_argument("--checkpoint", type=Path)
    p_eval.add_argument("--baseline", choices=["spp"])
    p_eval.add_argument("--episodes", type=non_negative_int, default=120)
    p_eval.add_argument("--workers", type=int, default=config.WORKERS)
    p_eval.add_argument("--label", default="")
    p_eval.set_defaults(handler=cmd_eval)

    p_run = sub.add_parser("run", parents=[common], help="run one episode with a full trace")
    p_run.add_argument("--start", type=pose_triple, help="x,y,theta")
    p_run.add_argument("--goal", type=pose_triple, help="x,y,theta")
    p_run.add_argument("--scenario", choices=sorted(SCENARIOS), help="named start pose with goal at the origin")
    p_run.add_argument("--checkpoint", type=Path)
    p_run.add_argument("--baseline", choices=["spp"])
    p_run.add_argument("--svg", type=Path, help="write a trajectory plot")
    p_run.set_defaults(handler=cmd_run)

    p_shapes = sub.add_parser("shapes", parents=[common], help="list builtin shapes and pushing points")
    p_shapes.add_argument("--svg", type=Path, help="write labeled contours")
    p_shapes.set_defaults(handler=cmd_shapes)

    p_compare = sub.add_parser("compare", parents=[common], help="compare evaluation reports")
    p_compare.add_argument("reports", nargs="+", type=Path)
    p_compare.add_argument("--labels", help="comma-separated row labels")
    p_compare.set_defaults(handler=cmd_compare)

    return parser


def seed_overrides(seed: int) -> dict:
    return {"seed": seed, "train.seed": seed, "episode.seed": seed}


def config_overrides(args: argparse.Namespace, extra: dict | None = None) -> dict:
    """--set overrides, then dedicated flags on top."""
    overrides = dict(parse_override(item) for item in args.set)
    if args.seed is not None:
        overrides.update(seed_overrides(args.seed))
    if args.shape is not None:
        overrides["episode.shape"] = args.shape
    if args.out is not None:
        overrides["out_dir"] = str(args.out)
    overrides.update(extra or {})
    return overrides


def resolve_config(args: argparse.Namespace, extra: dict | None = None) -> RunConfig:
    """Defaults < --config file < --set overrides < dedicated flags."""
    return load_run_config(args.config, config_overrides(args, extra))


def resolve_shape(args: argparse.Namespace, cfg: RunConfig) -> ShapeModel:
    if args.shape_file is not None:
        return load_shape(args.shape_file)
    return get_shape(cfg.episode.shape)


def resolve_policy(args: argparse.Namespace) -> Policy:
    if args.checkpoint is not None:
        return QNetPolicy(load_checkpoint(args.checkpoint))
    return GreedyLookaheadPolicy()


def mode_of(args: argparse.Namespace) -> Mode:
    return Mode.SPP if args.baseline == "spp" else Mode.MPC


def cmd_train(args: argparse.Namespace) -> int:
    extra = {"train.episodes": args.episodes} if args.episodes is not None else {}
    overrides = config_overrides(args, extra)
    cfg = load_run_config(args.config, overrides)
    shape = resolve_shape(args, cfg)
    mode = mode_of(args)
    storage = RunStorage(cfg.out_dir)

    runs = [(cfg, storage)]
    if args.seeds:
        runs = [
            (load_run_config(args.config, {**overrides, **seed_overrides(seed)}), storage.seed_storage(seed))
            for seed in args.seeds
        ]

    for run_cfg, run_storage in runs:
        logger.info(f"[TRAIN] {shape.name} ({mode.value}) seed {run_cfg.train.seed}, {run_cfg.train.episodes} episodes")
        run_storage.save_config(run_cfg)
        net, log = train(lambda seed, c=run_cfg: make_env(c, seed=seed, shape=shape, mode=mode), run_cfg.train)
        run_storage.save_checkpoint(net)
        run_storage.save_train_log(log)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    shape = resolve_shape(args, cfg)
    mode = mode_of(args)
    policy = resolve_policy(args)
    storage = RunStorage(cfg.out_dir)
    storage.save_config(cfg)

    label = args.label or ("spp" if mode is Mode.SPP else "switching-mpc")
    report, traces = run_suite(
        policy, cfg, n_episodes=args.episodes, workers=args.workers, shape=shape, mode=mode, label=label
    )
    storage.save_report(report)
    for i, trace in enumerate(traces):
        storage.save_trace(i, trace.rows())
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    extra = {}
    if args.scenario is not None:
        extra["episode.goal"] = [0.0, 0.0, 0.0]
    if args.goal is not None:
        extra["episode.goal"] = list(args.goal)
    cfg = resolve_config(args, extra)
    shape = resolve_shape(args, cfg)
    env = make_env(cfg, shape=shape, mode=mode_of(args))

    start_state = args.start or (SCENARIOS[args.scenario] if args.scenario else None)
    start = Pose2D(*start_state) if start_state is not None else None
    if start is not None and not in_workspace(env.workspace, start):
        raise ValueError(f"start pose ({start.x}, {start.y}) is outside the workspace")

    policy = resolve_policy(args)
    trace = run_episode(env, policy, start)
    storage = RunStorage(cfg.out_dir)
    storage.save_config(cfg)
    storage.save_episode_trace(trace.rows())

    ep = cfg.episode
    metrics = trace_metrics(trace, env.goal, ep.pos_tol, ep.ang_tol)
    print(
        f"success={metrics.success} rounds={metrics.rounds} plant_steps={metrics.plant_steps} "
        f"trajectory_length={metrics.trajectory_length:.4f} angle_trajectory_length={metrics.angle_trajectory_length:.4f}"
    )
    if args.svg is not None:
        ws = workspace_of(ep)
        mcrs = [r.mcr for r in trace.results if r.mcr is not None]
        save_episode_svg(args.svg, shape, trace.poses, env.goal, mcrs, ws.half_width, ws.half_height)
    return EXIT_OK


def _fmt(v: float) -> str:
    return f"{v:g}" if v != 0 else "0"


def cmd_shapes(args: argparse.Namespace) -> int:
    shapes = [load_shape(args.shape_file)] if args.shape_file is not None else builtin_shapes()
    for shape in shapes:
        print(f"{shape.name}: com ({_fmt(shape.com[0])}, {_fmt(shape.com[1])})")
        for pt in shape.points:
            print(
                f"  #{pt.id} p=({_fmt(pt.p[0])}, {_fmt(pt.p[1])}) "
                f"e_n=({pt.e_n[0]:.4f}, {pt.e_n[1]:.4f}) e_t=({pt.e_t[0]:.4f}, {pt.e_t[1]:.4f})"
            )
    if args.svg is not None:
        save_shapes_svg(args.svg, shapes)
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    reports = [SuiteReport.model_validate(read_report(path)) for path in args.reports]
    labels = args.labels.split(",") if args.labels else None
    if labels is not None and len(labels) != len(reports):
        raise ValueError(f"{len(labels)} labels given for {len(reports)} reports")
    table = compare(reports, labels)
    out_dir = Path(args.out) if args.out is not None else Path(config.OUT_DIR)
    out_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(out_dir / "comparison.csv", index=False, float_format="%.9g")
    print(table.to_string(index=False))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    logging.basicConfig(
        level=args.log_level or config.LOG_LEVEL,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        config.validate()
        logger.info(f"[CLI] {args.command} in {config.ENVIRONMENT} environment, outputs under {config.OUT_DIR}")
        return int(args.handler(args))
    except (OSError, CheckpointError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_IO
    except (ValueError, FloatingPointError) as e:
        logger.error(f"{args.command} rejected its input: {e}")
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
