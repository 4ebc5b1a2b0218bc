# cosserat_observer/reports.py
"""
File outputs: per-step state dumps, sweep and mu tables (CSV via pandas), the run
report (JSON, written atomically) and the append-only run ledger (JSONL).
"""
from __future__ import annotations

import json
import logging
import math
import os
import tempfile
import time
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import numpy as np
import pandas as pd
from scipy.spatial.transform import Rotation

from . import liegroup as lg
from .rodmodel import RodState

logger = logging.getLogger(__name__)

STATE_COLUMNS = (
    ["t", "node", "m_x", "m_y", "m_z", "n_x", "n_y", "n_z", "qw", "qx", "qy", "qz", "px", "py", "pz",
     "w_x", "w_y", "w_z", "v_x", "v_y", "v_z", "u_x", "u_y", "u_z", "q_x", "q_y", "q_z"]
)

PathLike = Union[str, Path]


def pose_rows(g: np.ndarray) -> np.ndarray:
    """(n,7) [qw qx qy qz px py pz] rows for a stack of poses."""
    R, p = lg.pose_parts(np.asarray(g, dtype=float).reshape(-1, 4, 4))
    xyzw = Rotation.from_matrix(R).as_quat()
    return np.column_stack([xyzw[:, 3:], xyzw[:, :3], p])


def states_frame(states: List[RodState], eta: Optional[np.ndarray] = None) -> pd.DataFrame:
    """One row per (time, node); eta overrides the stored velocity (e.g. the reconstructed field)."""
    frames = []
    for k, s in enumerate(states):
        n = s.g.shape[0]
        vel = s.eta if eta is None else eta[k]
        block = np.column_stack([
            np.full(n, s.t), np.arange(n), s.lam,
            pose_rows(s.g), vel, s.xi,
        ])
        frames.append(block)
    df = pd.DataFrame(np.vstack(frames), columns=STATE_COLUMNS)
    df["node"] = df["node"].astype(int)
    return df


def write_states_csv(states: List[RodState], path: PathLike, eta: Optional[np.ndarray] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    states_frame(states, eta).to_csv(path, index=False, float_format="%.12g")
    logger.info("wrote %d time steps to %s", len(states), path)
    return path


def write_table_csv(rows: Union[pd.DataFrame, Iterable[Dict[str, Any]]], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows))
    df.to_csv(path, index=False)
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dump_json_atomic(path: PathLike, obj: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.stem + "_", suffix=".tmp", dir=str(path.parent))
    os.close(fd)
    try:
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(_jsonable(obj), f, ensure_ascii=False, indent=2)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise
    return path


def append_run_record(ledger_path: PathLike, command: str, **fields) -> Dict[str, Any]:
    """Append one run record to the JSONL ledger (append-only)."""
    rec = {"ts": int(time.time()), "command": command}
    rec.update(_jsonable(fields))
    path = Path(ledger_path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(rec, ensure_ascii=False) + "\n")
    return rec


def load_run_records(ledger_path: PathLike) -> List[Dict[str, Any]]:
    items = []
    path = Path(ledger_path)
    if path.exists():
        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    try:
                        items.append(json.loads(line))
                    except json.JSONDecodeError:
                        logger.warning("skipping malformed ledger line in %s", path)
    return items
