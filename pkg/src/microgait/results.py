"""Result writers: delimited time series, YAML summaries, JSON plan files.

Files are written atomically (temp file + rename) so concurrent compare
runs never observe partial output.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np
import yaml

from microgait.gait import MotionPlan
from microgait.simulate import SimLog


def _atomic_write(path: Path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def timeseries_header(model) -> list:
    cols = ["time"]
    cols += ["base_x", "base_y", "base_z", "base_qw", "base_qx", "base_qy", "base_qz"]
    cols += [f"q{j}" for j in range(model.n_joints)]
    cols += ["base_vx", "base_vy", "base_vz", "base_wx", "base_wy", "base_wz"]
    cols += [f"qd{j}" for j in range(model.n_joints)]
    for name in model.limb_names:
        cols += [f"f_{name}_x", f"f_{name}_y", f"f_{name}_z",
                 f"m_{name}_x", f"m_{name}_y", f"m_{name}_z",
                 f"tension_{name}", f"attached_{name}"]
    cols += ["mom_px", "mom_py", "mom_pz", "mom_lx", "mom_ly", "mom_lz"]
    return cols


def write_timeseries(path, model, log: SimLog):
    """Per-sample rows: time, base pose, joints, rates, per-contact force,
    moment, tension and attachment, momentum components."""
    cols = timeseries_header(model)
    n_rows = log.times.size
    nl = model.n_limbs
    blocks = [
        log.times[:, None], log.base_pos, log.base_quat, log.joint_angles,
        log.base_twist, log.joint_rates,
    ]
    per_limb = []
    for l in range(nl):
        per_limb.extend([
            log.contact_forces[:, l, :], log.contact_moments[:, l, :],
            log.tensions[:, l:l + 1], log.attached[:, l:l + 1].astype(float),
        ])
    data = np.hstack(blocks + per_limb + [log.momentum])
    assert data.shape == (n_rows, len(cols))
    lines = [",".join(cols)]
    for row in data:
        lines.append(",".join(f"{v:.12g}" for v in row))
    _atomic_write(Path(path), "\n".join(lines) + "\n")


def write_summary(path, summary: dict):
    _atomic_write(Path(path), yaml.safe_dump(_plain(summary), sort_keys=True))


def write_plan(path, plan: MotionPlan):
    _atomic_write(Path(path), json.dumps(plan.to_dict()))


def write_config_echo(path, cfg_dict: dict):
    """Re-emit the loaded scenario config (round-trip support)."""
    _atomic_write(Path(path), yaml.safe_dump(_plain(cfg_dict), sort_keys=True))


def _plain(obj):
    """Recursively convert numpy scalars/arrays for YAML serialization."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    return obj
