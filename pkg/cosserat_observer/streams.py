# cosserat_observer/streams.py
"""
Boundary measurement streams: base wrench, tip pose and tip twist sampled over time.

CSV layout (header row, SI units, empty cells for an absent channel):
    t, m_x, m_y, m_z, n_x, n_y, n_z, qw, qx, qy, qz, px, py, pz, w_x, w_y, w_z, v_x, v_y, v_z
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import pandas as pd
from scipy.spatial.transform import Rotation

from . import liegroup as lg
from .errors import ConfigurationError, InvalidArgumentError, OutOfRangeError

logger = logging.getLogger(__name__)

WRENCH_COLUMNS = ["m_x", "m_y", "m_z", "n_x", "n_y", "n_z"]
QUATERNION_COLUMNS = ["qw", "qx", "qy", "qz"]
POSITION_COLUMNS = ["px", "py", "pz"]
TWIST_COLUMNS = ["w_x", "w_y", "w_z", "v_x", "v_y", "v_z"]
STREAM_COLUMNS = ["t"] + WRENCH_COLUMNS + QUATERNION_COLUMNS + POSITION_COLUMNS + TWIST_COLUMNS

QUATERNION_NORM_TOL = 1e-6
CHANNELS = ("base_wrench", "tip_pose", "tip_twist")


@dataclass(frozen=True)
class MeasurementSample:
    t: float
    base_wrench: Optional[np.ndarray]
    tip_pose: Optional[np.ndarray]
    tip_twist: Optional[np.ndarray]


@dataclass(frozen=True)
class MeasurementStream:
    timestamps: np.ndarray
    base_wrench: Optional[np.ndarray] = None   # (T,6)
    tip_pose: Optional[np.ndarray] = None      # (T,4,4)
    tip_twist: Optional[np.ndarray] = None     # (T,6)

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float).reshape(-1)
        if t.size == 0:
            raise InvalidArgumentError("measurement stream is empty")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise InvalidArgumentError("measurement timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", t)
        for name, tail in (("base_wrench", (6,)), ("tip_pose", (4, 4)), ("tip_twist", (6,))):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=float)
            if arr.shape != (t.size,) + tail:
                raise InvalidArgumentError(f"{name}: expected shape {(t.size,) + tail}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise InvalidArgumentError(f"{name}: non-finite samples")
            object.__setattr__(self, name, arr)
        if self.tip_pose is not None:
            lg.check_pose(self.tip_pose, tol=1e-6)

    def has(self, channel: str) -> bool:
        if channel not in CHANNELS:
            raise InvalidArgumentError(f"unknown channel {channel!r}")
        return getattr(self, channel) is not None

    @property
    def available(self) -> List[str]:
        return [c for c in CHANNELS if self.has(c)]

    def covers(self, t0: float, t1: float) -> bool:
        tol = 1e-9 * max(1.0, abs(t1))
        return self.timestamps[0] <= t0 + tol and self.timestamps[-1] >= t1 - tol


def interpolate(stream: MeasurementStream, t: float) -> MeasurementSample:
    """Linear interpolation per channel; poses follow the geodesic g1 exp(a log(g1^-1 g2))."""
    ts = stream.timestamps
    tol = 1e-9 * max(1.0, abs(ts[-1]))
    if t < ts[0] - tol or t > ts[-1] + tol:
        raise OutOfRangeError(f"t={t} outside recorded span [{ts[0]}, {ts[-1]}]")
    t = min(max(t, ts[0]), ts[-1])
    i = int(np.searchsorted(ts, t, side="right") - 1)
    i = min(max(i, 0), ts.size - 1)
    if ts[i] == t or i == ts.size - 1:
        return MeasurementSample(
            t=t,
            base_wrench=None if stream.base_wrench is None else stream.base_wrench[i].copy(),
            tip_pose=None if stream.tip_pose is None else stream.tip_pose[i].copy(),
            tip_twist=None if stream.tip_twist is None else stream.tip_twist[i].copy(),
        )
    a = (t - ts[i]) / (ts[i + 1] - ts[i])

    def lerp(arr):
        return None if arr is None else (1.0 - a) * arr[i] + a * arr[i + 1]

    pose = None
    if stream.tip_pose is not None:
        g1, g2 = stream.tip_pose[i], stream.tip_pose[i + 1]
        pose = g1 @ lg.exp_se3(lg.log_se3(lg.pose_inverse(g1) @ g2), a)
    return MeasurementSample(t=t, base_wrench=lerp(stream.base_wrench), tip_pose=pose, tip_twist=lerp(stream.tip_twist))


def add_noise(stream: MeasurementStream, noise_std: dict, seed: int) -> MeasurementStream:
    """
    Zero-mean Gaussian noise per channel.  noise_std keys: base_wrench, tip_position,
    tip_rotation (rad, applied as a body-frame rotation vector), tip_twist.
    """
    rng = np.random.default_rng(seed)
    wrench = stream.base_wrench
    if wrench is not None and noise_std.get("base_wrench", 0.0) > 0:
        wrench = wrench + rng.normal(0.0, noise_std["base_wrench"], wrench.shape)
    twist = stream.tip_twist
    if twist is not None and noise_std.get("tip_twist", 0.0) > 0:
        twist = twist + rng.normal(0.0, noise_std["tip_twist"], twist.shape)
    pose = stream.tip_pose
    if pose is not None and (noise_std.get("tip_position", 0.0) > 0 or noise_std.get("tip_rotation", 0.0) > 0):
        n = pose.shape[0]
        rot = Rotation.from_rotvec(rng.normal(0.0, noise_std.get("tip_rotation", 0.0), (n, 3))).as_matrix()
        pos = rng.normal(0.0, noise_std.get("tip_position", 0.0), (n, 3))
        pose = lg.make_pose(pose[:, :3, :3] @ rot, pose[:, :3, 3] + pos)
    return MeasurementStream(timestamps=stream.timestamps, base_wrench=wrench, tip_pose=pose, tip_twist=twist)


# --------------------------------------------
# CSV I/O
# --------------------------------------------

def stream_to_frame(stream: MeasurementStream) -> pd.DataFrame:
    n = stream.timestamps.size
    data = {"t": stream.timestamps}
    empty = np.full(n, np.nan)
    for j, col in enumerate(WRENCH_COLUMNS):
        data[col] = empty if stream.base_wrench is None else stream.base_wrench[:, j]
    if stream.tip_pose is None:
        for col in QUATERNION_COLUMNS + POSITION_COLUMNS:
            data[col] = empty
    else:
        xyzw = Rotation.from_matrix(stream.tip_pose[:, :3, :3]).as_quat()
        wxyz = np.concatenate([xyzw[:, 3:], xyzw[:, :3]], axis=1)
        for j, col in enumerate(QUATERNION_COLUMNS):
            data[col] = wxyz[:, j]
        for j, col in enumerate(POSITION_COLUMNS):
            data[col] = stream.tip_pose[:, j, 3]
    for j, col in enumerate(TWIST_COLUMNS):
        data[col] = empty if stream.tip_twist is None else stream.tip_twist[:, j]
    return pd.DataFrame(data, columns=STREAM_COLUMNS)


def save_stream_csv(stream: MeasurementStream, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stream_to_frame(stream).to_csv(path, index=False, float_format="%.17g")
    return path


def _channel(df: pd.DataFrame, cols: List[str], name: str) -> Optional[np.ndarray]:
    block = df[cols].to_numpy(dtype=float)
    missing = np.isnan(block)
    if missing.all():
        return None
    if missing.any():
        raise ConfigurationError(f"stream channel {name} is only partially present")
    return block


def frame_to_stream(df: pd.DataFrame) -> MeasurementStream:
    absent = [c for c in STREAM_COLUMNS if c not in df.columns]
    if absent:
        raise ConfigurationError(f"stream CSV is missing columns: {absent}")
    wrench = _channel(df, WRENCH_COLUMNS, "base_wrench")
    twist = _channel(df, TWIST_COLUMNS, "tip_twist")
    quat = _channel(df, QUATERNION_COLUMNS, "tip_pose")
    pos = _channel(df, POSITION_COLUMNS, "tip_pose")
    pose = None
    if (quat is None) != (pos is None):
        raise ConfigurationError("tip pose needs both quaternion and position columns")
    if quat is not None:
        norms = np.linalg.norm(quat, axis=1)
        if np.any(norms <= 0):
            raise ConfigurationError("zero quaternion in stream")
        drift = float(np.max(np.abs(norms - 1.0)))
        if drift > QUATERNION_NORM_TOL:
            logger.warning("renormalising tip quaternions (max norm deviation %.2e)", drift)
        quat = quat / norms[:, None]
        R = Rotation.from_quat(np.concatenate([quat[:, 1:], quat[:, :1]], axis=1)).as_matrix()
        pose = lg.make_pose(R, pos)
    try:
        return MeasurementStream(timestamps=df["t"].to_numpy(dtype=float), base_wrench=wrench,
                                 tip_pose=pose, tip_twist=twist)
    except InvalidArgumentError as exc:
        raise ConfigurationError(f"invalid measurement stream: {exc}") from exc


def load_stream_csv(path: Union[str, Path]) -> MeasurementStream:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"stream file not found: {path}")
    return frame_to_stream(pd.read_csv(path))
