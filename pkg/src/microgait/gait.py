"""Gait sequencing and motion-plan assembly.

A GaitSchedule is a list of phases (release / swing / grasp / base shift);
assemble_plan turns one into a time-sampled MotionPlan for a given mode:

  BL    baseline via-point swings, no momentum distribution
  LRST  optimized low-reaction swings, no distribution
  PMD   optimized swings plus partial momentum distribution (0 < alpha < 1)
  FMD   optimized swings plus full distribution (alpha = 1)

Swing joint references for PMD/FMD come from the distribution (swing limb
tracks its curve against the reference base pose while the base moves), so
the realized touchdown drifts with the base motion; the swing target is
re-aimed over a few fixed-point iterations until the planned landing hits
the commanded grasp point, which keeps crawl cycles periodic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from microgait.bezier import PiecewiseQuintic
from microgait.distribution import BaseTrajectory, distribute_over_plan
from microgait.errors import (
    ConfigError,
    InfeasibleTrajectoryError,
    JointLimitError,
    PlanAssemblyError,
    SingularityError,
    UnreachableTargetError,
)
from microgait.kinematics import forward_kinematics, inverse_kinematics
from microgait.model import RobotModel
from microgait.rotations import (
    quat_from_rotvec,
    quat_mul,
    quat_normalize,
    quat_to_rot,
)
from microgait.state import SystemState, check_state
from microgait.swing import LrstWeights, SwingPlan, optimize_swing, swing_objective

MODES = ("BL", "LRST", "PMD", "FMD")

LANDING_TOL = 1e-7
LANDING_MAX_ITER = 8
# boundary-preserving weights for re-aiming a constrained Bezier's target
_BLEND = np.array([0.0, 0.0, 0.0, 3.0 / 7.0, 4.0 / 7.0, 1.0, 1.0, 1.0])


@dataclass
class Release:
    limb: int
    height: float
    duration: float


@dataclass
class Grasp:
    limb: int
    height: float
    duration: float


@dataclass
class SwingLeg:
    limb: int
    duration: float
    displacement: np.ndarray | None = None   # target = anchor + displacement
    start: np.ndarray | None = None          # explicit grasp points (planar case)
    target: np.ndarray | None = None


@dataclass
class BaseShift:
    displacement: np.ndarray
    duration: float


@dataclass
class GaitSchedule:
    phases: list
    cycle_period: float
    stride: float
    step_height: float

    def validate(self):
        total = sum(p.duration for p in self.phases)
        if abs(total - self.cycle_period) > 1e-9:
            raise ConfigError(
                f"phase durations sum to {total}, expected cycle period {self.cycle_period}")
        for i, p in enumerate(self.phases):
            if p.duration <= 0:
                raise ConfigError(f"phase {i} has non-positive duration")
            if isinstance(p, SwingLeg) and p.displacement is not None:
                before = self.phases[i - 1] if i > 0 else None
                after = self.phases[i + 1] if i + 1 < len(self.phases) else None
                if not (isinstance(before, Release) and before.limb == p.limb):
                    raise ConfigError(f"swing of limb {p.limb} not preceded by its release")
                if not (isinstance(after, Grasp) and after.limb == p.limb):
                    raise ConfigError(f"swing of limb {p.limb} not followed by its grasp")


def build_crawl_schedule(stride, step_height, swing_period, base_shift,
                         release_height=0.01, grasp_height=0.01,
                         release_fraction=0.1, grasp_fraction=0.1,
                         leg_order=(0, 1, 2, 3)) -> GaitSchedule:
    """One crawl cycle: each leg releases, swings and regrasps inside its
    swing period, followed by a base shift of equal duration.

    The default ordering moves the hind legs before the front legs.  With
    four legs the cycle period is 8 x swing_period.
    """
    if min(stride, step_height, swing_period, base_shift) <= 0:
        raise ConfigError("stride, step height, swing period and base shift must be > 0")
    phases = []
    swing_frac = 1.0 - release_fraction - grasp_fraction
    if swing_frac <= 0:
        raise ConfigError("release + grasp fractions must leave swing time")
    for leg in leg_order:
        phases.append(Release(limb=leg, height=release_height,
                              duration=release_fraction * swing_period))
        phases.append(SwingLeg(limb=leg, duration=swing_frac * swing_period,
                               displacement=np.array([stride, 0.0, 0.0])))
        phases.append(Grasp(limb=leg, height=grasp_height,
                            duration=grasp_fraction * swing_period))
        phases.append(BaseShift(displacement=np.array([base_shift, 0.0, 0.0]),
                                duration=swing_period))
    cycle = 2.0 * swing_period * len(leg_order)
    sched = GaitSchedule(phases=phases, cycle_period=cycle,
                         stride=stride, step_height=step_height)
    sched.validate()
    return sched


def single_step_schedule(limb, start, target, step_height, swing_period,
                         lead_in=0.2, lead_out=0.2) -> GaitSchedule:
    """Single-swing schedule (planar experiment): the swing limb is never
    attached, so there are no release/grasp phases, just settle windows."""
    start = np.asarray(start, dtype=float)
    target = np.asarray(target, dtype=float)
    phases = []
    if lead_in > 0:
        phases.append(BaseShift(displacement=np.zeros(3), duration=lead_in))
    phases.append(SwingLeg(limb=limb, duration=swing_period, start=start, target=target))
    if lead_out > 0:
        phases.append(BaseShift(displacement=np.zeros(3), duration=lead_out))
    cycle = lead_in + swing_period + lead_out
    stride = float(np.linalg.norm(target - start))
    return GaitSchedule(phases=phases, cycle_period=cycle,
                        stride=stride, step_height=step_height)


def baseline_swing(start, target, step_height, window, up=(0.0, 0.0, 1.0)) -> SwingPlan:
    """Via-point baseline: two rest-to-rest quintics through the apex at
    the desired height above the chord midpoint."""
    start = np.asarray(start, dtype=float)
    target = np.asarray(target, dtype=float)
    up = np.asarray(up, dtype=float)
    chord = target - start
    cn = np.linalg.norm(chord)
    if cn > 1e-12:
        uhat = chord / cn
        nvec = up - (up @ uhat) * uhat
        nn = np.linalg.norm(nvec)
        nvec = nvec / nn if nn > 1e-12 else up / np.linalg.norm(up)
    else:
        nvec = up / np.linalg.norm(up)
    apex = 0.5 * (start + target) + step_height * nvec
    t0, tf = float(window[0]), float(window[1])
    curve = PiecewiseQuintic([start, apex, target], [t0, 0.5 * (t0 + tf), tf])
    return SwingPlan(curve=curve, limb=-1, start_grasp=start, target_grasp=target)


def _shift_curve_target(curve, new_target):
    """Move a trajectory's endpoint while keeping rest-to-rest boundaries."""
    from microgait.bezier import BezierCurve

    new_target = np.asarray(new_target, dtype=float)
    if isinstance(curve, BezierCurve):
        delta = new_target - curve.control_points[7]
        ctrl = curve.control_points + _BLEND[:, None] * delta[None, :]
        return BezierCurve(ctrl, (curve.t0, curve.tf))
    if isinstance(curve, PiecewiseQuintic):
        waypoints = [w.copy() for w in curve.waypoints]
        waypoints[-1] = new_target
        return PiecewiseQuintic(waypoints, curve.times)
    raise TypeError(f"cannot re-aim trajectory of type {type(curve).__name__}")


@dataclass
class SwingTrace:
    """Per-swing diagnostics kept on the plan for tests and replay."""

    phase_index: int
    limb: int
    curve: object
    objective: object
    distribution: BaseTrajectory | None


@dataclass
class MotionPlan:
    """Uniformly sampled reference trajectories for simulator tracking."""

    dt: float
    times: np.ndarray
    base_pos: np.ndarray          # (N, 3)
    base_quat: np.ndarray         # (N, 4)
    base_twist: np.ndarray        # (N, 6)
    joint_ref: np.ndarray         # (N, n)
    joint_rate_ref: np.ndarray    # (N, n)
    ee_ref: np.ndarray            # (N, n_limbs, 3)
    attached: np.ndarray          # (N, n_limbs) bool
    phase_index: np.ndarray       # (N,)
    contact_events: list          # (time, limb, "release"|"attach")
    swing_traces: list
    mode: str
    alpha: float
    cycle_period: float
    cycles: int
    initially_attached: list

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    def finalize_rates(self):
        """Reference joint rates by central differencing of the samples."""
        r = np.zeros_like(self.joint_ref)
        r[1:-1] = (self.joint_ref[2:] - self.joint_ref[:-2]) / (2.0 * self.dt)
        r[0] = (self.joint_ref[1] - self.joint_ref[0]) / self.dt
        r[-1] = (self.joint_ref[-1] - self.joint_ref[-2]) / self.dt
        self.joint_rate_ref = r

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "mode": self.mode,
            "alpha": self.alpha,
            "dt": self.dt,
            "cycle_period": self.cycle_period,
            "cycles": self.cycles,
            "initially_attached": [bool(b) for b in self.initially_attached],
            "times": self.times.tolist(),
            "base_pos": self.base_pos.tolist(),
            "base_quat": self.base_quat.tolist(),
            "base_twist": self.base_twist.tolist(),
            "joint_ref": self.joint_ref.tolist(),
            "joint_rate_ref": self.joint_rate_ref.tolist(),
            "ee_ref": self.ee_ref.tolist(),
            "attached": self.attached.astype(int).tolist(),
            "phase_index": self.phase_index.tolist(),
            "contact_events": [[t, int(l), kind] for t, l, kind in self.contact_events],
            "swing_curves": [
                {
                    "phase_index": tr.phase_index,
                    "limb": tr.limb,
                    "control_points": getattr(tr.curve, "control_points", None).tolist()
                    if hasattr(tr.curve, "control_points") else None,
                    "window": [tr.curve.t0, tr.curve.tf],
                }
                for tr in self.swing_traces
            ],
        }


def resolve_alpha(mode: str, alpha) -> float:
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    if mode in ("BL", "LRST"):
        if alpha not in (None, 0, 0.0):
            raise ConfigError(f"mode {mode} fixes alpha = 0")
        return 0.0
    if mode == "FMD":
        if alpha not in (None, 1, 1.0):
            raise ConfigError("mode FMD fixes alpha = 1")
        return 1.0
    if alpha is None or not 0.0 < float(alpha) < 1.0:
        raise ConfigError(f"mode PMD requires 0 < alpha < 1, got {alpha}")
    return float(alpha)


class _PlanBuilder:
    def __init__(self, model, state0, plan_dt, n_phases_total, up, initially_attached):
        self.model = model
        self.dt = plan_dt
        self.up = np.asarray(up, dtype=float)
        self.times = [0.0]
        n = model.n_joints
        nl = model.n_limbs
        fk0 = forward_kinematics(model, state0)
        self.base_pos = [state0.base_pos.copy()]
        self.base_quat = [state0.base_quat.copy()]
        self.base_twist = [np.zeros(6)]
        self.joint_ref = [state0.joint_angles.copy()]
        self.ee_ref = [fk0.ee_positions.copy()]
        self.attached_flags = [np.array(initially_attached, dtype=bool)]
        self.phase_idx = [0]
        self.events = []
        self.anchors = {l: fk0.ee_positions[l].copy()
                        for l in range(nl) if initially_attached[l]}
        self.grasp_points = {l: fk0.ee_positions[l].copy() for l in range(nl)}
        self.phi = state0.joint_angles.copy()
        self.cur_pos = state0.base_pos.copy()
        self.cur_quat = state0.base_quat.copy()
        self.is_attached = np.array(initially_attached, dtype=bool)

    @property
    def t_now(self) -> float:
        return self.times[-1]

    def phase_samples(self, duration):
        steps = duration / self.dt
        n = int(round(steps))
        if abs(steps - n) > 1e-9 or n < 1:
            raise ConfigError(
                f"phase duration {duration} is not a multiple of plan dt {self.dt}")
        return n

    def append(self, pos, quat, twist, phi, ee, phase):
        self.times.append(self.times[-1] + self.dt)
        self.base_pos.append(np.asarray(pos, dtype=float).copy())
        self.base_quat.append(np.asarray(quat, dtype=float).copy())
        self.base_twist.append(np.asarray(twist, dtype=float).copy())
        self.joint_ref.append(np.asarray(phi, dtype=float).copy())
        self.ee_ref.append(ee)
        self.attached_flags.append(self.is_attached.copy())
        self.phase_idx.append(phase)

    def ee_snapshot(self, phi, pos, quat, moving_limb=None, moving_pos=None):
        """EE references: anchors exactly for attached limbs, FK otherwise."""
        fkr = forward_kinematics(
            self.model,
            SystemState(pos, quat, np.zeros(3), np.zeros(3), phi,
                        np.zeros(self.model.n_joints)))
        ee = fkr.ee_positions.copy()
        for l, anchor in self.anchors.items():
            if self.is_attached[l]:
                ee[l] = anchor
        if moving_limb is not None and moving_pos is not None:
            ee[moving_limb] = moving_pos
        return ee


def assemble_plan(model: RobotModel, schedule: GaitSchedule, mode: str,
                  state0: SystemState, *, alpha=None, weights: LrstWeights = None,
                  plan_dt=0.025, up=(0.0, 0.0, 1.0), cycles=1,
                  initially_attached=None, seed=0) -> MotionPlan:
    """Assemble the full reference plan for `cycles` repetitions of the
    schedule, applying IK sample-wise to produce joint references.

    Raises PlanAssemblyError carrying the phase index on IK failures,
    infeasible swings or distribution singularities (the FMD failure
    mode).
    """
    check_state(model, state0)
    alpha = resolve_alpha(mode, alpha)
    weights = weights or LrstWeights(h=schedule.step_height)
    if initially_attached is None:
        initially_attached = [True] * model.n_limbs
    up_vec = np.asarray(up, dtype=float)
    b = _PlanBuilder(model, state0, plan_dt, len(schedule.phases) * cycles,
                     up_vec, initially_attached)
    neutral_pos = state0.base_pos.copy()
    neutral_quat = state0.base_quat.copy()
    shift_accum = np.zeros(3)
    phase_counter = 0
    traces = []

    for cyc in range(cycles):
        for phase in schedule.phases:
            phase_counter += 1
            try:
                if isinstance(phase, Release):
                    _do_vertical(b, model, phase.limb, +phase.height,
                                 phase.duration, phase_counter, up_vec, True,
                                 mode, alpha)
                elif isinstance(phase, Grasp):
                    _do_vertical(b, model, phase.limb, -phase.height,
                                 phase.duration, phase_counter, up_vec, False,
                                 mode, alpha)
                elif isinstance(phase, SwingLeg):
                    tr = _do_swing(b, model, phase, mode, alpha, weights,
                                   phase_counter, up_vec, schedule.step_height, seed)
                    traces.append(tr)
                elif isinstance(phase, BaseShift):
                    disp = np.asarray(phase.displacement, dtype=float)
                    if np.linalg.norm(disp) == 0.0:
                        # dwell: hold the current pose (zero shift means a
                        # constant base reference, not a return to neutral)
                        _do_base_shift(b, model, b.cur_pos.copy(), b.cur_quat.copy(),
                                       phase.duration, phase_counter)
                    else:
                        shift_accum = shift_accum + disp
                        _do_base_shift(b, model, neutral_pos + shift_accum, neutral_quat,
                                       phase.duration, phase_counter)
                else:
                    raise ConfigError(f"unknown phase type {type(phase).__name__}")
            except (SingularityError, UnreachableTargetError, JointLimitError,
                    InfeasibleTrajectoryError) as exc:
                raise PlanAssemblyError(
                    f"phase {phase_counter} ({type(phase).__name__}, cycle {cyc + 1}): {exc}",
                    phase_index=phase_counter, cause=exc) from exc

    plan = MotionPlan(
        dt=plan_dt,
        times=np.array(b.times),
        base_pos=np.array(b.base_pos),
        base_quat=np.array(b.base_quat),
        base_twist=np.array(b.base_twist),
        joint_ref=np.array(b.joint_ref),
        joint_rate_ref=np.zeros((len(b.times), model.n_joints)),
        ee_ref=np.array(b.ee_ref),
        attached=np.array(b.attached_flags),
        phase_index=np.array(b.phase_idx),
        contact_events=b.events,
        swing_traces=traces,
        mode=mode,
        alpha=alpha,
        cycle_period=schedule.cycle_period,
        cycles=cycles,
        initially_attached=list(initially_attached),
    )
    plan.finalize_rates()
    return plan


def _track_distributed(b, model, curve, limb, alpha, times, aim, phase_idx):
    """Distribute a detached-limb trajectory's momentum over the body and
    append the resulting samples.

    Swing joint references track the curve against the reference base
    pose; because the realized tip then drifts with the base motion, the
    curve target is re-aimed until the planned landing hits `aim`.
    Returns the distribution trace."""
    support = [l for l in range(model.n_limbs) if b.is_attached[l]]
    state_ref = SystemState(b.cur_pos, b.cur_quat, np.zeros(3), np.zeros(3),
                            b.phi.copy(), np.zeros(model.n_joints), time=times[0])
    desired = np.asarray(aim, dtype=float).copy()
    traj = None
    for _ in range(LANDING_MAX_ITER):
        traj = distribute_over_plan(model, state_ref,
                                    SwingPlan(curve, limb, curve.position(times[0]), desired),
                                    support_set=support, alpha=alpha, times=times)
        landing = forward_kinematics(
            model, SystemState(traj.base_pos[-1], traj.base_quat[-1],
                               np.zeros(3), np.zeros(3), traj.joint_angles[-1],
                               np.zeros(model.n_joints))).ee_positions[limb]
        err = landing - aim
        if np.linalg.norm(err) < LANDING_TOL:
            break
        desired = desired - err
        curve = _shift_curve_target(curve, desired)
    for i in range(1, times.size):
        phi = traj.joint_angles[i]
        ee = b.ee_snapshot(phi, traj.base_pos[i], traj.base_quat[i], limb, None)
        b.append(traj.base_pos[i], traj.base_quat[i], traj.twists[i], phi, ee, phase_idx)
    b.phi = traj.joint_angles[-1].copy()
    b.cur_pos = traj.base_pos[-1].copy()
    b.cur_quat = traj.base_quat[-1].copy()
    return curve, traj


def _do_vertical(b, model, limb, signed_height, duration, phase, up, release,
                 mode, alpha):
    """Release/grasp vertical: straight rest-to-rest quintic of the given
    height along the surface normal.

    The vertical is swing-limb motion, so PMD/FMD distribute its momentum
    like the swing itself; BL/LRST hold the base still."""
    limb = model.limb_index(limb)
    nsteps = b.phase_samples(duration)
    t0 = b.t_now
    if release:
        b.events.append((t0, limb, "release"))
        b.is_attached[limb] = False
        start = b.anchors.get(limb, b.grasp_points[limb]).copy()
    else:
        start = b.grasp_points[limb].copy()
    end = start + signed_height * up
    seg = PiecewiseQuintic([start, end], [t0, t0 + duration])
    if mode in ("PMD", "FMD"):
        times = t0 + b.dt * np.arange(nsteps + 1)
        _track_distributed(b, model, seg, limb, alpha, times, end, phase)
    else:
        base_pose = (b.cur_pos, b.cur_quat)
        for i in range(1, nsteps + 1):
            t = t0 + i * b.dt
            target = seg.position(t)
            b.phi = inverse_kinematics(model, limb, target, base_pose, b.phi)
            ee = b.ee_snapshot(b.phi, b.cur_pos, b.cur_quat, limb, target)
            b.append(b.cur_pos, b.cur_quat, np.zeros(6), b.phi, ee, phase)
    b.grasp_points[limb] = end.copy()
    if not release:
        b.anchors[limb] = end.copy()
        b.is_attached[limb] = True
        b.attached_flags[-1][limb] = True
        b.events.append((b.t_now, limb, "attach"))


def _do_swing(b, model, phase, mode, alpha, weights, phase_idx, up, step_height, seed):
    limb = model.limb_index(phase.limb)
    nsteps = b.phase_samples(phase.duration)
    t0 = b.t_now
    window = (t0, t0 + phase.duration)
    start = b.grasp_points[limb].copy() if phase.start is None else np.asarray(phase.start, dtype=float)
    if phase.target is not None:
        target = np.asarray(phase.target, dtype=float)
    else:
        target = start + np.asarray(phase.displacement, dtype=float)

    state_ref = SystemState(b.cur_pos, b.cur_quat, np.zeros(3), np.zeros(3),
                            b.phi.copy(), np.zeros(model.n_joints), time=t0)
    w = LrstWeights(k1=weights.k1, k2=weights.k2, k3=weights.k3, h=step_height,
                    sample_count=weights.sample_count, n_starts=weights.n_starts,
                    max_iter=weights.max_iter, simplex_tol=weights.simplex_tol)

    if mode == "BL":
        plan = baseline_swing(start, target, step_height, window, up)
        plan.limb = limb
        objective = swing_objective(model, state_ref, plan, w, up)
        curve = plan.curve
    else:
        plan, objective, _ = optimize_swing(model, state_ref, limb, start, target,
                                            window, w, up, seed=seed)
        curve = plan.curve

    if mode in ("BL", "LRST"):
        base_pose = (b.cur_pos, b.cur_quat)
        for i in range(1, nsteps + 1):
            t = t0 + i * b.dt
            pos = curve.position(t)
            b.phi = inverse_kinematics(model, limb, pos, base_pose, b.phi)
            ee = b.ee_snapshot(b.phi, b.cur_pos, b.cur_quat, limb, pos)
            b.append(b.cur_pos, b.cur_quat, np.zeros(6), b.phi, ee, phase_idx)
        b.grasp_points[limb] = curve.position(window[1]).copy()
        return SwingTrace(phase_idx, limb, curve, objective, None)

    # PMD / FMD: distribute the swing momentum over the whole body
    times = t0 + b.dt * np.arange(nsteps + 1)
    curve, traj = _track_distributed(b, model, curve, limb, alpha, times,
                                     target, phase_idx)
    b.grasp_points[limb] = target.copy()
    return SwingTrace(phase_idx, limb, curve, objective, traj)


def _do_base_shift(b, model, target_pos, target_quat, duration, phase):
    """Move the base along a straight line with quintic timing to the next
    neutral pose; supports hold their anchors via per-sample IK."""
    nsteps = b.phase_samples(duration)
    t0 = b.t_now
    start_pos = b.cur_pos.copy()
    start_quat = b.cur_quat.copy()
    # relative rotation taking the current attitude to the target
    dq = quat_mul(target_quat, np.array([start_quat[0], -start_quat[1],
                                         -start_quat[2], -start_quat[3]]))
    dq = quat_normalize(dq)
    if dq[0] < 0:
        dq = -dq
    angle = 2.0 * np.arccos(min(1.0, dq[0]))
    axis = dq[1:] / np.linalg.norm(dq[1:]) if angle > 1e-12 else np.zeros(3)
    rotvec = axis * angle
    supports = [l for l in range(model.n_limbs) if b.is_attached[l]]
    T = duration
    for i in range(1, nsteps + 1):
        t = (i * b.dt) / T
        s = 10 * t**3 - 15 * t**4 + 6 * t**5
        sd = (30 * t**2 - 60 * t**3 + 30 * t**4) / T
        pos = start_pos + s * (target_pos - start_pos)
        quat = quat_normalize(quat_mul(quat_from_rotvec(s * rotvec), start_quat))
        twist = np.concatenate([sd * (target_pos - start_pos), sd * rotvec])
        for l in supports:
            b.phi = inverse_kinematics(model, l, b.anchors[l], (pos, quat), b.phi)
        ee = b.ee_snapshot(b.phi, pos, quat)
        b.append(pos, quat, twist, b.phi, ee, phase)
    b.cur_pos = target_pos.copy()
    b.cur_quat = quat_normalize(target_quat.copy())
