"""Whole-body swing momentum distribution.

With the supporting grippers constrained to zero velocity, the base twist
that compensates a fraction alpha of the swing momentum solves

    (H_b - sum_sup H_bm_i J_mi^+ J_b_i) @ twist = -alpha * L_swing

after which each support limb's joint rates follow from its Jacobians.
Plan-level distribution integrates this over the swing window on a fixed
grid, with swing joint rates frozen from the base-at-reference IK series
(the identity total momentum == (1 - alpha) * L_swing then holds exactly
at every sample, and the solve is linear in alpha at a fixed state).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from microgait.body_dynamics import inertia_matrices, system_momentum
from microgait.errors import (
    JointLimitError,
    SingularityError,
    UnreachableTargetError,
)
from microgait.kinematics import damped_pinv, forward_kinematics, inverse_kinematics, jacobians
from microgait.model import RobotModel
from microgait.rotations import quat_from_rotvec, quat_mul, quat_normalize
from microgait.state import SystemState, check_state

SINGULARITY_THRESHOLD = 1e-4
# above the abort threshold but below this, the solve switches to damped
# least squares for numerical robustness
DLS_FALLBACK_THRESHOLD = 1e-3


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"distribution factor must be in [0, 1], got {alpha}")
    return alpha


@dataclass
class EffectiveBaseInertia:
    """Coefficient of the base twist once support rates are eliminated."""

    matrix: np.ndarray
    sigma_min: float


def _support_blocks(model, state, support_set):
    """Per-support (J_m_pinv @ J_b, sigma_min) pairs."""
    blocks = []
    for limb in support_set:
        jac = jacobians(model, state, limb)
        blocks.append((model.limb_index(limb), jac.J_m_pinv @ jac.J_b, jac.sigma_min))
    return blocks


def effective_inertia(model: RobotModel, state: SystemState, support_set=()) -> EffectiveBaseInertia:
    """H_eff = H_b - sum over supports of H_bm_i J_mi^+ J_b_i.

    Conditioning is reported, not raised; callers enforcing the
    singularity threshold do so themselves.
    """
    check_state(model, state)
    iner = inertia_matrices(model, state)
    H = iner.H_b.copy()
    for limb, JJ, _ in _support_blocks(model, state, support_set):
        H -= iner.H_bm[limb] @ JJ
    smin = float(np.linalg.svd(H, compute_uv=False)[-1])
    return EffectiveBaseInertia(matrix=H, sigma_min=smin)


def _solve_twist(H_eff: EffectiveBaseInertia, rhs, state=None, time=None):
    if H_eff.sigma_min < SINGULARITY_THRESHOLD:
        raise SingularityError(
            f"effective base inertia singular (sigma_min={H_eff.sigma_min:.3e})",
            time=time)
    if H_eff.sigma_min < DLS_FALLBACK_THRESHOLD:
        M = H_eff.matrix
        lam = 1e-6
        return np.linalg.solve(M.T @ M + lam * lam * np.eye(M.shape[0]), M.T @ rhs)
    return np.linalg.solve(H_eff.matrix, rhs)


def base_velocity(model: RobotModel, state: SystemState, swing_set, alpha) -> np.ndarray:
    """Base twist compensating `alpha` of the swing momentum at this state.

    Swing joint rates are taken from the state.  The result has the
    model's base-twist dimension (3 planar / 6 spatial) and is linear in
    alpha at a fixed state.  Raises SingularityError when the effective
    inertia or any support Jacobian is below the singularity threshold.
    """
    check_state(model, state)
    alpha = _check_alpha(alpha)
    swing = {model.limb_index(s) for s in swing_set}
    support = [l for l in range(model.n_limbs) if l not in swing]
    for limb, _, smin in _support_blocks(model, state, support):
        if smin < SINGULARITY_THRESHOLD:
            raise SingularityError(
                f"support limb {model.limb_names[limb]} singular "
                f"(sigma_min={smin:.3e})", time=state.time, limb=limb)
    H_eff = effective_inertia(model, state, support)
    mom = system_momentum(model, state, swing)
    return _solve_twist(H_eff, -alpha * mom.swing_part, time=state.time)


def support_rates(model: RobotModel, state: SystemState, support_set, base_twist) -> dict:
    """Joint rates keeping each supporting tip still under `base_twist`.

    base_twist may be reduced (model twist dimension) or full spatial 6.
    Returns {limb index: rates}; raises SingularityError for a singular
    support limb.
    """
    check_state(model, state)
    base_twist = np.asarray(base_twist, dtype=float)
    if base_twist.size == 6 and model.planar:
        base_twist = base_twist[model.twist_idx]
    rates = {}
    for limb in support_set:
        l = model.limb_index(limb)
        jac = jacobians(model, state, l)
        if jac.sigma_min < SINGULARITY_THRESHOLD:
            raise SingularityError(
                f"support limb {model.limb_names[l]} singular "
                f"(sigma_min={jac.sigma_min:.3e})", time=state.time, limb=l)
        rates[l] = -jac.J_m_pinv @ (jac.J_b @ base_twist)
    return rates


@dataclass
class BaseTrajectory:
    """Distribution output: time-sampled base motion and joint series."""

    times: np.ndarray
    base_pos: np.ndarray        # (N, 3)
    base_quat: np.ndarray       # (N, 4)
    twists: np.ndarray          # (N, 6) spatial (out-of-plane zero in planar mode)
    joint_angles: np.ndarray    # (N, n) swing from reference-base IK, supports anchored
    joint_rates: np.ndarray     # (N, n) swing frozen rates + support rates
    swing_momentum: np.ndarray  # (N, d)
    total_momentum: np.ndarray  # (N, d)
    alpha: float


def _lift_twist(model, twist):
    full = np.zeros(6)
    full[model.twist_idx] = twist
    return full


def _advance_pose(pos, quat, twist_full, dt):
    pos = pos + dt * twist_full[:3]
    quat = quat_normalize(quat_mul(quat_from_rotvec(dt * twist_full[3:]), quat))
    return pos, quat


def _swing_series(model, state0, curve, limb, times):
    """IK of the curve against the reference base pose, rates by differencing."""
    n = model.n_joints
    N = times.size
    angles = np.empty((N, n))
    phi = state0.joint_angles.copy()
    base_pose = (state0.base_pos, state0.base_quat)
    for i, t in enumerate(times):
        phi = inverse_kinematics(model, limb, curve.position(t), base_pose, phi)
        angles[i] = phi
    j0 = int(model.limb_start[limb])
    k = int(model.limb_len[limb])
    rates = np.zeros((N, n))
    dt = times[1] - times[0]
    sl = slice(j0, j0 + k)
    rates[0, sl] = (angles[1, sl] - angles[0, sl]) / dt
    rates[-1, sl] = (angles[-1, sl] - angles[-2, sl]) / dt
    rates[1:-1, sl] = (angles[2:, sl] - angles[:-2, sl]) / (2 * dt)
    return angles[:, sl], rates[:, sl]


def distribute_over_plan(model: RobotModel, state0: SystemState, swing_plan,
                         support_set=None, alpha=1.0, times=None,
                         n_samples=64) -> BaseTrajectory:
    """Integrate the distributed base motion over one swing window.

    The swing limb's joint series comes from IK against the reference
    (initial) base pose; its rates are frozen from that series.  At each
    grid sample the base twist solves the distribution equation at the
    current state, support rates keep the anchors still, and the pose is
    advanced with a trapezoidal (Heun) step, the orientation updated
    multiplicatively.  A singular state raises SingularityError with the
    failing sample time attached; support anchors leaving the limb
    workspace count as (boundary) singularities as well.
    """
    check_state(model, state0)
    alpha = _check_alpha(alpha)
    curve = swing_plan.curve
    swing = model.limb_index(swing_plan.limb)
    if support_set is None:
        support_set = [l for l in range(model.n_limbs) if l != swing]
    support = [model.limb_index(s) for s in support_set]
    if times is None:
        times = np.linspace(curve.t0, curve.tf, n_samples)
    times = np.asarray(times, dtype=float)
    N = times.size
    n = model.n_joints
    d = model.momentum_dim

    swing_angles, swing_rates = _swing_series(model, state0, curve, swing, times)
    fk0 = forward_kinematics(model, state0)
    anchors = {l: fk0.ee_positions[l].copy() for l in support}

    j0 = int(model.limb_start[swing])
    k = int(model.limb_len[swing])
    sl = slice(j0, j0 + k)

    out_pos = np.empty((N, 3))
    out_quat = np.empty((N, 4))
    out_twist = np.zeros((N, 6))
    out_angles = np.empty((N, n))
    out_rates = np.zeros((N, n))
    out_Lsw = np.empty((N, d))
    out_Ltot = np.empty((N, d))

    def solve_at(state, i):
        """Twist + rates from the distribution equation at one state."""
        try:
            iner = inertia_matrices(model, state)
            Lsw = iner.H_bm[swing] @ state.joint_rates[sl]
            H = iner.H_b.copy()
            blocks = {}
            for l in support:
                jac = jacobians(model, state, l)
                if jac.sigma_min < SINGULARITY_THRESHOLD:
                    raise SingularityError(
                        f"support limb {model.limb_names[l]} singular "
                        f"(sigma_min={jac.sigma_min:.3e})",
                        time=times[i], limb=l)
                blocks[l] = (jac.J_m_pinv, jac.J_b)
                H -= iner.H_bm[l] @ (jac.J_m_pinv @ jac.J_b)
            smin = float(np.linalg.svd(H, compute_uv=False)[-1])
            twist = _solve_twist(EffectiveBaseInertia(H, smin), -alpha * Lsw,
                                 time=times[i])
            rates = {l: -(Jp @ (Jb @ twist)) for l, (Jp, Jb) in blocks.items()}
            total = iner.H_b @ twist + Lsw
            for l in support:
                total += iner.H_bm[l] @ rates[l]
            return twist, rates, Lsw, total
        except SingularityError as exc:
            if exc.time is None:
                exc.time = times[i]
            raise

    def anchored_state(pos, quat, phi_prev, i, swing_row):
        """State with the base at (pos, quat), supports IK'd to anchors."""
        phi = phi_prev.copy()
        phi[sl] = swing_row
        for l in support:
            try:
                phi = inverse_kinematics(model, l, anchors[l], (pos, quat), phi)
            except (UnreachableTargetError, JointLimitError) as exc:
                raise SingularityError(
                    f"support limb {model.limb_names[l]} cannot hold its anchor: {exc}",
                    time=times[i], limb=l) from exc
        return phi

    pos = state0.base_pos.copy()
    quat = state0.base_quat.copy()
    phi = state0.joint_angles.copy()

    for i in range(N):
        phi = anchored_state(pos, quat, phi, i, swing_angles[i])
        state = SystemState(pos, quat, np.zeros(3), np.zeros(3), phi,
                            np.zeros(n), time=times[i])
        state.joint_rates[sl] = swing_rates[i]
        twist, rates, Lsw, total = solve_at(state, i)
        out_pos[i] = pos
        out_quat[i] = quat
        out_twist[i] = _lift_twist(model, twist)
        out_angles[i] = phi
        out_rates[i, sl] = swing_rates[i]
        for l, r in rates.items():
            out_rates[i, int(model.limb_start[l]):int(model.limb_start[l]) + int(model.limb_len[l])] = r
        out_Lsw[i] = Lsw
        out_Ltot[i] = total
        if i == N - 1:
            break
        # Heun step to the next sample
        dt = times[i + 1] - times[i]
        p_pred, q_pred = _advance_pose(pos, quat, out_twist[i], dt)
        phi_pred = anchored_state(p_pred, q_pred, phi, i + 1, swing_angles[i + 1])
        state_pred = SystemState(p_pred, q_pred, np.zeros(3), np.zeros(3), phi_pred,
                                 np.zeros(n), time=times[i + 1])
        state_pred.joint_rates[sl] = swing_rates[i + 1]
        twist_pred, _, _, _ = solve_at(state_pred, i + 1)
        mean_twist = 0.5 * (out_twist[i] + _lift_twist(model, twist_pred))
        pos, quat = _advance_pose(pos, quat, mean_twist, dt)

    return BaseTrajectory(
        times=times, base_pos=out_pos, base_quat=out_quat, twists=out_twist,
        joint_angles=out_angles, joint_rates=out_rates,
        swing_momentum=out_Lsw, total_momentum=out_Ltot, alpha=alpha)
