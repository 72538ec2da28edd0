"""Full dynamic state: base pose/twist plus joint angles and rates."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from microgait.errors import ModelStateMismatchError
from microgait.rotations import quat_about_z, quat_normalize, quat_to_rot, quat_yaw


@dataclass
class SystemState:
    base_pos: np.ndarray
    base_quat: np.ndarray          # (w, x, y, z), kept normalized
    base_lin_vel: np.ndarray
    base_ang_vel: np.ndarray       # world frame
    joint_angles: np.ndarray
    joint_rates: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.base_pos = np.asarray(self.base_pos, dtype=float).reshape(3)
        self.base_quat = quat_normalize(np.asarray(self.base_quat, dtype=float).reshape(4))
        self.base_lin_vel = np.asarray(self.base_lin_vel, dtype=float).reshape(3)
        self.base_ang_vel = np.asarray(self.base_ang_vel, dtype=float).reshape(3)
        self.joint_angles = np.asarray(self.joint_angles, dtype=float).ravel()
        self.joint_rates = np.asarray(self.joint_rates, dtype=float).ravel()

    @classmethod
    def rest(cls, model, base_pos=None, base_quat=None, joint_angles=None):
        n = model.n_joints
        return cls(
            base_pos=np.zeros(3) if base_pos is None else base_pos,
            base_quat=np.array([1.0, 0, 0, 0]) if base_quat is None else base_quat,
            base_lin_vel=np.zeros(3),
            base_ang_vel=np.zeros(3),
            joint_angles=np.zeros(n) if joint_angles is None else joint_angles,
            joint_rates=np.zeros(n),
        )

    @classmethod
    def planar(cls, model, xy=(0.0, 0.0), angle=0.0, vel=(0.0, 0.0), omega=0.0,
               joint_angles=None, joint_rates=None, time=0.0):
        """Planar constructor: pose (x, y, theta), twist (vx, vy, omega)."""
        n = model.n_joints
        return cls(
            base_pos=np.array([xy[0], xy[1], 0.0]),
            base_quat=quat_about_z(angle),
            base_lin_vel=np.array([vel[0], vel[1], 0.0]),
            base_ang_vel=np.array([0.0, 0.0, omega]),
            joint_angles=np.zeros(n) if joint_angles is None else joint_angles,
            joint_rates=np.zeros(n) if joint_rates is None else joint_rates,
            time=time,
        )

    @property
    def base_rot(self) -> np.ndarray:
        return quat_to_rot(self.base_quat)

    @property
    def base_angle(self) -> float:
        """Planar heading (rotation about +z)."""
        return quat_yaw(self.base_quat)

    @property
    def base_twist(self) -> np.ndarray:
        """Spatial twist (v, omega), 6 components."""
        return np.concatenate([self.base_lin_vel, self.base_ang_vel])

    def reduced_twist(self, model) -> np.ndarray:
        """Twist restricted to the model's free base DOFs (3 in planar mode)."""
        return self.base_twist[model.twist_idx]

    def pack_q(self) -> np.ndarray:
        return np.concatenate([self.base_pos, self.base_quat, self.joint_angles])

    def pack_u(self) -> np.ndarray:
        return np.concatenate([self.base_lin_vel, self.base_ang_vel, self.joint_rates])

    @classmethod
    def unpack(cls, n, q, u, time=0.0):
        return cls(
            base_pos=q[0:3].copy(),
            base_quat=q[3:7].copy(),
            base_lin_vel=u[0:3].copy(),
            base_ang_vel=u[3:6].copy(),
            joint_angles=q[7:7 + n].copy(),
            joint_rates=u[6:6 + n].copy(),
            time=time,
        )

    def copy(self) -> "SystemState":
        return replace(
            self,
            base_pos=self.base_pos.copy(),
            base_quat=self.base_quat.copy(),
            base_lin_vel=self.base_lin_vel.copy(),
            base_ang_vel=self.base_ang_vel.copy(),
            joint_angles=self.joint_angles.copy(),
            joint_rates=self.joint_rates.copy(),
        )

    def within_limits(self, model, tol=0.0) -> bool:
        return bool(np.all(self.joint_angles >= model.qlo - tol)
                    and np.all(self.joint_angles <= model.qhi + tol))


def check_state(model, state: SystemState):
    if state.joint_angles.size != model.n_joints or state.joint_rates.size != model.n_joints:
        raise ModelStateMismatchError(
            f"state has {state.joint_angles.size} joints, model has {model.n_joints}")
