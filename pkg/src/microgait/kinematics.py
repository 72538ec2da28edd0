"""Forward kinematics, limb Jacobians and damped-least-squares IK."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from microgait import kernels
from microgait.errors import JointLimitError, UnreachableTargetError
from microgait.model import RobotModel
from microgait.state import SystemState, check_state

# DLS damping factor, escalated near singularities (regularizer is the
# square of the factor)
DLS_DAMPING = 1e-6
DLS_DAMPING_HIGH = 1e-3
DLS_SING_THRESHOLD = 1e-4

IK_TOL = 1e-10
IK_MAX_ITER = 200
IK_STEP_CAP = 0.2

# deterministic seed perturbations retried when DLS stalls in a fold-back
# minimum or pinned against a limit (fixed generator, so results are
# reproducible bit for bit)
_IK_RESTARTS = np.random.default_rng(1759).uniform(-1.0, 1.0, size=(10, 8))


@dataclass
class FkResult:
    ee_positions: np.ndarray      # (n_limbs, 3)
    link_rotations: np.ndarray    # (n, 3, 3)
    joint_positions: np.ndarray   # (n, 3)
    joint_axes: np.ndarray        # (n, 3) world
    com_positions: np.ndarray     # (n, 3)
    base_com: np.ndarray          # (3,)


@dataclass
class JacobianSet:
    """Velocity maps of one limb tip.

    J_b maps the base twist and J_m the limb joint rates to tip velocity;
    in planar mode both are reduced to the in-plane components.
    """

    J_b: np.ndarray
    J_m: np.ndarray
    J_m_pinv: np.ndarray
    sigma_min: float


def damped_pinv(J: np.ndarray, damping=DLS_DAMPING, damping_high=DLS_DAMPING_HIGH,
                sing_threshold=DLS_SING_THRESHOLD):
    """J^T (J J^T + lambda^2 I)^-1 with the damping factor escalated when
    the smallest singular value drops below the singularity threshold."""
    J = np.asarray(J, dtype=float)
    smin = float(np.linalg.svd(J, compute_uv=False)[-1])
    lam = damping if smin >= sing_threshold else damping_high
    m = J.shape[0]
    return J.T @ np.linalg.solve(J @ J.T + lam * lam * np.eye(m), np.eye(m)), smin


def forward_kinematics(model: RobotModel, state: SystemState) -> FkResult:
    """World poses of every link COM and every limb end-effector."""
    check_state(model, state)
    R_b = state.base_rot
    R, pj, axw, rcom = kernels.fk(model.parent, model.axis, model.offset,
                                  model.com, state.joint_angles,
                                  state.base_pos, R_b)
    ee = np.empty((model.n_limbs, 3))
    for l in range(model.n_limbs):
        ee[l] = kernels.ee_position(R, pj, model.limb_last[l], model.ee_offsets[l])
    return FkResult(
        ee_positions=ee,
        link_rotations=R,
        joint_positions=pj,
        joint_axes=axw,
        com_positions=rcom,
        base_com=state.base_pos + R_b @ model.base_com,
    )


def ee_velocities(model: RobotModel, state: SystemState) -> np.ndarray:
    """World linear velocity of every limb tip."""
    tips, tipv = kernels.tip_states(model.parent, model.axis, model.offset,
                                    model.com, state.pack_q(), state.pack_u(),
                                    model.limb_last, model.ee_offsets)
    return tipv


def jacobians(model: RobotModel, state: SystemState, limb) -> JacobianSet:
    """Base and manipulator Jacobians of a limb tip at the current state."""
    check_state(model, state)
    limb = model.limb_index(limb)
    fkr = forward_kinematics(model, state)
    j0 = int(model.limb_start[limb])
    k = int(model.limb_len[limb])
    J_b, J_m = kernels.limb_jacobians(fkr.joint_positions, fkr.joint_axes,
                                      fkr.ee_positions[limb], state.base_pos, j0, k)
    if model.planar:
        J_b = J_b[:2][:, model.twist_idx]
        J_m = J_m[:2]
    pinv, smin = damped_pinv(J_m)
    return JacobianSet(J_b=J_b, J_m=J_m, J_m_pinv=pinv, sigma_min=smin)


def inverse_kinematics(model: RobotModel, limb, target, base_pose,
                       seed: np.ndarray, tol=1e-9) -> np.ndarray:
    """Joint angles of one limb placing its tip at `target`.

    `base_pose` is a (position, quaternion) pair; `seed` is a full joint
    vector (only the limb's entries are iterated, the rest pass through).
    Raises UnreachableTargetError when the target is outside the limb's
    workspace or the solver does not converge, JointLimitError when the
    solution is pinned against a joint limit short of the target.
    """
    from microgait.rotations import quat_to_rot

    limb = model.limb_index(limb)
    base_pos = np.asarray(base_pose[0], dtype=float)
    R_b = quat_to_rot(np.asarray(base_pose[1], dtype=float))
    target3 = np.zeros(3)
    target3[: np.asarray(target).size] = np.asarray(target, dtype=float)
    root = model.limb_root_position(limb, base_pos, R_b)
    dist = float(np.linalg.norm(target3[: model.pos_dim] - root[: model.pos_dim]))
    reach = model.limb_reach(limb)
    if dist > reach + 1e-12:
        raise UnreachableTargetError(
            f"target {dist:.4f} m from limb root exceeds reach {reach:.4f} m")
    seed = np.asarray(seed, dtype=float).copy()
    j0 = int(model.limb_start[limb])
    k = int(model.limb_len[limb])
    span = 0.5 * (model.qhi[j0:j0 + k] - model.qlo[j0:j0 + k])
    phi = seed
    ok = False
    resid = np.inf
    for attempt in range(1 + _IK_RESTARTS.shape[0]):
        trial = seed.copy()
        if attempt > 0:
            trial[j0:j0 + k] = np.clip(
                seed[j0:j0 + k] + _IK_RESTARTS[attempt - 1, :k] * span,
                model.qlo[j0:j0 + k], model.qhi[j0:j0 + k])
        phi, ok, resid, _ = kernels.ik_limb(
            model.parent, model.axis, model.offset, model.com, trial,
            base_pos, R_b,
            j0, k, int(model.limb_last[limb]), model.ee_offsets[limb], target3,
            model.qlo, model.qhi, model.pos_dim,
            tol, IK_MAX_ITER, IK_STEP_CAP,
            DLS_DAMPING, DLS_DAMPING_HIGH, DLS_SING_THRESHOLD)
        if ok:
            return phi
    ang = phi[j0:j0 + k]
    pinned = np.any(np.isclose(ang, model.qlo[j0:j0 + k])) or \
        np.any(np.isclose(ang, model.qhi[j0:j0 + k]))
    if pinned:
        raise JointLimitError(
            f"IK pinned at joint limits with residual {resid:.2e} m")
    raise UnreachableTargetError(
        f"IK did not converge (residual {resid:.2e} m)")
