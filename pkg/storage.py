"""
Run persistence: the Q-network checkpoint container, CSV traces and logs,
JSON reports and config snapshots under one output directory.
"""

import json
import logging
import struct
from collections.abc import Iterable
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel

from config import RunConfig, dump_run_config
from qlearn import LAYER_DIMS, EpisodeLog, QNet

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"QNET"
CHECKPOINT_VERSION = 1
# magic, version, layer count, 4 layer dims, training step counter
CHECKPOINT_HEADER = struct.Struct("<4sHH4IQ")

FLOAT_FORMAT = "%.9g"
TRACE_COLUMNS = ["step", "round", "point_id", "x", "y", "theta", "u_x", "u_y", "r_env", "r_shaping", "mcr_kind"]
TRAIN_LOG_COLUMNS = ["episode", "return", "success", "rounds", "epsilon", "mean_loss", "plant_steps"]


class CheckpointError(ValueError):
    pass


def encode_checkpoint(net: QNet) -> bytes:
    """
    Serialize a network into the checkpoint container.

    Layout is little-endian: the header, then float64 W1, b1, W2, b2, W3, b3
    row-major with W shaped (out, in).
    """
    header = CHECKPOINT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(LAYER_DIMS), *LAYER_DIMS, net.step)
    payload = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in net.params)
    return header + payload


def decode_checkpoint(data: bytes) -> QNet:
    """
    Rebuild a network from checkpoint bytes.

    Raises:
        CheckpointError: bad magic, unsupported version, dimension mismatch or wrong payload length
    """
    if len(data) < CHECKPOINT_HEADER.size:
        raise CheckpointError(f"checkpoint truncated: {len(data)} bytes is shorter than the header")
    magic, version, n_layers, *dims_and_step = CHECKPOINT_HEADER.unpack_from(data)
    dims, step = tuple(dims_and_step[:4]), dims_and_step[4]
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"not a Q-network checkpoint (magic {magic!r})")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if n_layers != len(LAYER_DIMS) or dims != LAYER_DIMS:
        raise CheckpointError(f"checkpoint dims {dims} do not match network dims {LAYER_DIMS}")

    shapes = []
    for fan_in, fan_out in zip(LAYER_DIMS[:-1], LAYER_DIMS[1:], strict=True):
        shapes += [(fan_out, fan_in), (fan_out,)]
    expected = CHECKPOINT_HEADER.size + 8 * sum(int(np.prod(s)) for s in shapes)
    if len(data) != expected:
        raise CheckpointError(f"checkpoint payload has {len(data)} bytes, expected {expected}")

    arrays = []
    offset = CHECKPOINT_HEADER.size
    for shape in shapes:
        count = int(np.prod(shape))
        arrays.append(np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).astype(float))
        offset += 8 * count
    return QNet(arrays[0::2], arrays[1::2], step=int(step))


def save_checkpoint(net: QNet, path: str | Path) -> None:
    Path(path).write_bytes(encode_checkpoint(net))


def load_checkpoint(path: str | Path) -> QNet:
    return decode_checkpoint(Path(path).read_bytes())


def trace_frame(rows: Iterable[dict]) -> pd.DataFrame:
    return pd.DataFrame(list(rows), columns=TRACE_COLUMNS)


def write_trace_csv(rows: Iterable[dict], path: str | Path) -> None:
    trace_frame(rows).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def read_trace_csv(path: str | Path) -> pd.DataFrame:
    frame = pd.read_csv(path, float_precision="round_trip", keep_default_na=False)
    missing = [c for c in TRACE_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"trace {path} is missing columns: {', '.join(missing)}")
    return frame


def train_log_frame(log: list[EpisodeLog]) -> pd.DataFrame:
    return pd.DataFrame([entry.model_dump(by_alias=True) for entry in log], columns=TRAIN_LOG_COLUMNS)


def write_train_log(log: list[EpisodeLog], path: str | Path) -> None:
    train_log_frame(log).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def write_report(report: BaseModel, path: str | Path) -> None:
    Path(path).write_text(report.model_dump_json(indent=2) + "\n")


def read_report(path: str | Path) -> dict:
    with open(path) as f:
        data: dict = json.load(f)
    return data


class RunStorage:
    """
    Output directory of one command invocation.

    Layout: checkpoint, train_log.csv, config.yaml, report.json and
    traces/episode_XXX.csv.
    """

    def __init__(self, out_dir: str | Path):
        self.root = Path(out_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        logger.info(f"[STORAGE] writing outputs to {self.root}")

    @property
    def checkpoint_path(self) -> Path:
        return self.root / "checkpoint"

    @property
    def train_log_path(self) -> Path:
        return self.root / "train_log.csv"

    @property
    def config_path(self) -> Path:
        return self.root / "config.yaml"

    @property
    def report_path(self) -> Path:
        return self.root / "report.json"

    @property
    def traces_dir(self) -> Path:
        return self.root / "traces"

    def trace_path(self, episode: int) -> Path:
        return self.traces_dir / f"episode_{episode:03d}.csv"

    def seed_storage(self, seed: int) -> "RunStorage":
        return RunStorage(self.root / f"seed_{seed}")

    def save_config(self, cfg: RunConfig) -> Path:
        self.config_path.write_text(dump_run_config(cfg))
        logger.debug(f"[STORAGE] config snapshot {self.config_path}")
        return self.config_path

    def save_checkpoint(self, net: QNet) -> Path:
        save_checkpoint(net, self.checkpoint_path)
        logger.info(f"[STORAGE] checkpoint at step {net.step}: {self.checkpoint_path}")
        return self.checkpoint_path

    def save_train_log(self, log: list[EpisodeLog]) -> Path:
        write_train_log(log, self.train_log_path)
        return self.train_log_path

    def save_report(self, report: BaseModel) -> Path:
        write_report(report, self.report_path)
        logger.info(f"[STORAGE] report {self.report_path}")
        return self.report_path

    def save_trace(self, episode: int, rows: Iterable[dict]) -> Path:
        self.traces_dir.mkdir(exist_ok=True)
        path = self.trace_path(episode)
        write_trace_csv(rows, path)
        return path

    def save_episode_trace(self, rows: Iterable[dict]) -> Path:
        path = self.root / "trace.csv"
        write_trace_csv(rows, path)
        logger.info(f"[STORAGE] trace {path}")
        return path
