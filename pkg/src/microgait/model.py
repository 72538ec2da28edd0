"""Kinematic-tree robot model and its structured-text file format.

Robot files are YAML with the tabulated units (lengths mm, masses g,
inertias kg*m^2, joint limits deg); everything is converted to SI here.
Each limb is a serial chain of revolute links laid out along a mount
direction at the zero configuration, with link COM at the geometric
center unless overridden.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from microgait.errors import ConfigError

MM = 1e-3
GRAM = 1e-3
DEG = np.pi / 180.0

# generalized-velocity indices of the base twist kept free in planar mode
PLANAR_TWIST_IDX = np.array([0, 1, 5], dtype=np.int64)


@dataclass(frozen=True)
class LinkSpec:
    """One rigid link and the revolute joint connecting it to its parent."""

    name: str
    mass: float                 # kg
    inertia: np.ndarray         # (3,3) about COM, link frame
    com: np.ndarray             # (3,) COM offset in link frame
    axis: np.ndarray            # (3,) unit joint axis
    parent: int                 # joint index of parent link, -1 for base
    offset: np.ndarray          # (3,) joint origin in parent frame
    joint_type: str = "revolute"


class RobotModel:
    """Tree of rigid links grouped into limbs rooted at a floating base."""

    def __init__(self, name, base, links, limbs, limb_names, ee_offsets,
                 joint_limits, planar=False):
        self.name = name
        self.base = base
        self.links = list(links)
        self.limbs = [list(l) for l in limbs]
        self.limb_names = list(limb_names)
        self.ee_offsets = np.asarray(ee_offsets, dtype=float).reshape(len(limbs), 3)
        self.joint_limits = np.asarray(joint_limits, dtype=float).reshape(-1, 2)
        self.planar = bool(planar)
        self._build_flat()
        self.validate()

    # -- structure -------------------------------------------------------

    @property
    def n_joints(self) -> int:
        return len(self.links)

    @property
    def n_limbs(self) -> int:
        return len(self.limbs)

    @property
    def base_dofs(self) -> int:
        return 3 if self.planar else 6

    @property
    def pos_dim(self) -> int:
        """Dimension of end-effector position coordinates."""
        return 2 if self.planar else 3

    @property
    def momentum_dim(self) -> int:
        return 3 if self.planar else 6

    @property
    def twist_idx(self) -> np.ndarray:
        """Indices of the free base-twist components within the spatial 6."""
        return PLANAR_TWIST_IDX if self.planar else np.arange(6, dtype=np.int64)

    def limb_index(self, key) -> int:
        if isinstance(key, str):
            return self.limb_names.index(key)
        return int(key)

    def limb_root_position(self, limb: int, base_pos, base_rot) -> np.ndarray:
        j0 = self.limbs[limb][0]
        return np.asarray(base_pos) + np.asarray(base_rot) @ self.links[j0].offset

    def limb_reach(self, limb: int) -> float:
        """Upper bound on tip distance from the limb root joint."""
        joints = self.limbs[limb]
        reach = 0.0
        for j in joints[1:]:
            reach += float(np.linalg.norm(self.links[j].offset))
        reach += float(np.linalg.norm(self.ee_offsets[limb]))
        return reach

    def _build_flat(self):
        n = len(self.links)
        self.parent = np.array([l.parent for l in self.links], dtype=np.int64)
        self.axis = np.array([l.axis for l in self.links], dtype=float).reshape(n, 3)
        self.offset = np.array([l.offset for l in self.links], dtype=float).reshape(n, 3)
        self.com = np.array([l.com for l in self.links], dtype=float).reshape(n, 3)
        self.mass = np.array([l.mass for l in self.links], dtype=float)
        self.inertia = np.array([l.inertia for l in self.links], dtype=float).reshape(n, 3, 3)
        self.base_mass = float(self.base.mass)
        self.base_com = np.asarray(self.base.com, dtype=float)
        self.base_inertia = np.asarray(self.base.inertia, dtype=float)
        self.limb_start = np.array([l[0] for l in self.limbs], dtype=np.int64)
        self.limb_len = np.array([len(l) for l in self.limbs], dtype=np.int64)
        self.limb_last = np.array([l[-1] for l in self.limbs], dtype=np.int64)
        self.qlo = self.joint_limits[:, 0].copy()
        self.qhi = self.joint_limits[:, 1].copy()
        if self.planar:
            free = [0, 1, 5] + [6 + j for j in range(n)]
        else:
            free = list(range(6 + n))
        self.free_dofs = np.array(free, dtype=np.int64)

    # -- invariants ------------------------------------------------------

    def validate(self):
        n = self.n_joints
        seen = set()
        for i, l in enumerate(self.links):
            if not (-1 <= l.parent < i):
                raise ConfigError(
                    f"link {l.name}: parent index {l.parent} breaks tree order "
                    "(parents must precede children)")
            if l.joint_type != "revolute":
                raise ConfigError(f"link {l.name}: unsupported joint type {l.joint_type}")
            seen.add(i)
        masses = np.concatenate([[self.base_mass], self.mass])
        if np.any(masses <= 0):
            raise ConfigError("all masses must be > 0")
        for nm, I in [("base", self.base_inertia)] + [
                (l.name, np.asarray(l.inertia)) for l in self.links]:
            if not np.allclose(I, I.T, atol=1e-12):
                raise ConfigError(f"inertia of {nm} is not symmetric")
            if np.any(np.linalg.eigvalsh(I) <= 0):
                raise ConfigError(f"inertia of {nm} is not positive definite")
        if np.any(self.qlo >= self.qhi):
            raise ConfigError("joint limits must satisfy lo < hi")
        for l, joints in enumerate(self.limbs):
            if list(joints) != list(range(joints[0], joints[0] + len(joints))):
                raise ConfigError(f"limb {self.limb_names[l]} joints must be contiguous")
            if self.links[joints[0]].parent != -1:
                raise ConfigError(f"limb {self.limb_names[l]} must root at the base")
        if self.joint_limits.shape[0] != n:
            raise ConfigError("joint_limits length mismatch")
        for ax in self.axis:
            if abs(np.linalg.norm(ax) - 1.0) > 1e-9:
                raise ConfigError("joint axes must be unit vectors")
        if self.planar and not np.allclose(np.abs(self.axis[:, 2]), 1.0):
            raise ConfigError("planar models require all joint axes along z")


def _vec3(value, scale=1.0, pad=0.0):
    v = np.asarray(value, dtype=float).ravel()
    if v.size == 2:
        v = np.array([v[0], v[1], pad])
    if v.size != 3:
        raise ConfigError(f"expected 2 or 3 components, got {v.size}")
    return v * scale


def _inertia_tensor(value):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.diag([float(arr)] * 3)
    if arr.shape == (3,):
        return np.diag(arr)
    if arr.shape == (3, 3):
        return arr
    raise ConfigError(f"inertia must be scalar, 3-vector or 3x3, got shape {arr.shape}")


def robot_from_dict(data: dict) -> RobotModel:
    try:
        name = data.get("name", "robot")
        planar = bool(data.get("planar", False))
        b = data["base"]
        base = LinkSpec(
            name="base",
            mass=float(b["mass"]) * GRAM,
            inertia=_inertia_tensor(b["inertia"]),
            com=_vec3(b.get("com", [0, 0, 0]), MM),
            axis=np.array([0.0, 0.0, 1.0]),
            parent=-1,
            offset=np.zeros(3),
        )
        links = []
        limbs = []
        limb_names = []
        ee_offsets = []
        limits = []
        for limb in data["limbs"]:
            direction = _vec3(limb["direction"])
            nrm = np.linalg.norm(direction)
            if nrm < 1e-12:
                raise ConfigError(f"limb {limb.get('name')}: zero direction")
            direction = direction / nrm
            mount = _vec3(limb["mount"], MM)
            joints = []
            prev_length = None
            for i, ld in enumerate(limb["links"]):
                parent = -1 if i == 0 else len(links) - 1
                offset = mount if i == 0 else prev_length * direction
                length = float(ld["length"]) * MM
                com = _vec3(ld["com"], MM) if "com" in ld else 0.5 * length * direction
                axis = _vec3(ld["axis"])
                axis = axis / np.linalg.norm(axis)
                links.append(LinkSpec(
                    name=f"{limb['name']}/{ld['name']}",
                    mass=float(ld["mass"]) * GRAM,
                    inertia=_inertia_tensor(ld["inertia"]),
                    com=com,
                    axis=axis,
                    parent=parent,
                    offset=offset,
                ))
                lim = ld.get("limits", limb.get("limits"))
                if lim is None:
                    raise ConfigError(f"link {links[-1].name}: missing joint limits")
                limits.append([float(lim[0]) * DEG, float(lim[1]) * DEG])
                joints.append(len(links) - 1)
                prev_length = length
            limbs.append(joints)
            limb_names.append(limb["name"])
            ee_offsets.append(prev_length * direction)
        return RobotModel(name, base, links, limbs, limb_names,
                          ee_offsets, limits, planar=planar)
    except KeyError as exc:
        raise ConfigError(f"robot config missing field {exc}") from exc


def load_robot(path) -> RobotModel:
    path = Path(path)
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read robot file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: robot config must be a mapping")
    return robot_from_dict(data)
