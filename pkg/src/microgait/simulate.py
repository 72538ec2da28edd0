"""Forward-dynamics scenario execution with PD tracking of a MotionPlan.

A scenario run integrates the free-floating base and limbs under joint PD
torques, compliant contact forces and (micro)gravity with a fixed-step
fourth-order scheme.  Contacts attach at grasp events (anchor = touchdown
point) and release at release events; any force-triggered detachment of a
supporting contact marks the run failed, after which the simulation coasts
a grace period to exhibit the flotation and terminates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from microgait import kernels
from microgait.contact import ContactPoint, contact_force
from microgait.errors import ConfigError, NumericalBlowupError
from microgait.gait import MotionPlan
from microgait.model import RobotModel
from microgait.state import SystemState, check_state

TERMINATIONS = ("goal_reached", "detached_floating", "singularity",
                "time_out", "numerical_blowup")


@dataclass
class SimConfig:
    timestep: float
    duration: float
    kp: np.ndarray                    # per-joint, N m / rad
    kd: np.ndarray                    # per-joint, N m s / rad
    gravity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    contact_stiffness: float = 4000.0
    contact_damping: float = 1.0
    holding_force: float = 0.9
    surface_normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    goal_displacement: float = 0.0    # 0 disables; plan completion is then the goal
    goal_axis: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    float_grace: float = 2.0
    log_every: int = 10

    def __post_init__(self):
        self.kp = np.asarray(self.kp, dtype=float).ravel()
        self.kd = np.asarray(self.kd, dtype=float).ravel()
        self.gravity = np.asarray(self.gravity, dtype=float).reshape(3)
        self.surface_normal = np.asarray(self.surface_normal, dtype=float).reshape(3)
        self.goal_axis = np.asarray(self.goal_axis, dtype=float).reshape(3)
        if self.timestep <= 0:
            raise ConfigError("timestep must be > 0")
        if self.duration <= 0:
            raise ConfigError("duration must be > 0")
        if self.log_every < 1:
            raise ConfigError("log_every must be >= 1")

    def validate_for(self, model: RobotModel):
        """Gain shapes and the contact stability bound for this model."""
        n = model.n_joints
        if self.kp.size == 1:
            self.kp = np.full(n, float(self.kp[0]))
        if self.kd.size == 1:
            self.kd = np.full(n, float(self.kd[0]))
        if self.kp.size != n or self.kd.size != n:
            raise ConfigError(f"kp/kd must be scalars or length {n}")
        if self.contact_stiffness > 0:
            m_min = float(np.min(model.mass))
            bound = 1.0 / (20.0 * np.sqrt(self.contact_stiffness / m_min))
            if self.timestep > bound + 1e-15:
                raise ConfigError(
                    f"timestep {self.timestep} exceeds stability bound {bound:.3e} "
                    f"(stiffness {self.contact_stiffness}, min link mass {m_min})")


@dataclass
class SimLog:
    times: np.ndarray
    base_pos: np.ndarray
    base_quat: np.ndarray
    base_twist: np.ndarray
    joint_angles: np.ndarray
    joint_rates: np.ndarray
    contact_forces: np.ndarray     # (N, n_limbs, 3)
    contact_moments: np.ndarray    # (N, n_limbs, 3), about the base origin
    tensions: np.ndarray           # (N, n_limbs)
    attached: np.ndarray           # (N, n_limbs)
    momentum: np.ndarray           # (N, 6) about the world origin
    events: list
    termination: str
    termination_time: float
    final_state: SystemState
    # full-rate force statistics per contact (max tension, max |F|,
    # mean |F| over attached samples, max |M|, mean |M|)
    stats: dict

    def distance_along(self, axis) -> float:
        axis = np.asarray(axis, dtype=float)
        return float((self.base_pos[-1] - self.base_pos[0]) @ axis)


def pd_torques(plan: MotionPlan, state: SystemState, t: float, gains) -> np.ndarray:
    """PD tracking torques against the plan's interpolated references."""
    kp, kd = gains
    qr, qdr = kernels._ref_interp(t, float(plan.times[0]), plan.dt,
                                  plan.joint_ref, plan.joint_rate_ref,
                                  plan.joint_ref.shape[1])
    return np.asarray(kp) * (qr - state.joint_angles) + np.asarray(kd) * (qdr - state.joint_rates)


def step(model: RobotModel, state: SystemState, torques, contacts, config: SimConfig):
    """One RK4 step under fixed joint torques and the given contacts.

    Returns (next state, per-limb contact forces evaluated at the next
    state).  Contact attachment and anchors are frozen across the step.
    Raises NumericalBlowupError on a non-finite result.
    """
    check_state(model, state)
    nl = model.n_limbs
    attached = np.zeros(nl, dtype=np.int64)
    anchors = np.zeros((nl, 3))
    for c in contacts:
        if c.attached:
            attached[c.limb] = 1
            anchors[c.limb] = c.anchor
    q, u = kernels.rk4_step_tau(
        state.time, state.pack_q(), state.pack_u(), config.timestep,
        model.parent, model.axis, model.offset, model.com, model.mass, model.inertia,
        model.base_mass, model.base_com, model.base_inertia,
        model.limb_start, model.limb_len, model.limb_last, model.ee_offsets,
        model.free_dofs,
        np.asarray(torques, dtype=float), attached, anchors,
        config.contact_stiffness, config.contact_damping, config.gravity)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(u))):
        raise NumericalBlowupError(
            "non-finite state after integration step",
            time=state.time + config.timestep,
            diagnostics={"q": q, "u": u})
    nxt = SystemState.unpack(model.n_joints, q, u, time=state.time + config.timestep)
    tips, tipv = kernels.tip_states(model.parent, model.axis, model.offset, model.com,
                                    q, u, model.limb_last, model.ee_offsets)
    forces = np.zeros((nl, 3))
    for c in contacts:
        if c.attached:
            forces[c.limb] = contact_force(c, tips[c.limb], tipv[c.limb])
    return nxt, forces


def _initial_row(model, state, attached, anchors, config):
    """Log row for the initial state (the kernel logs post-step states)."""
    q, u = state.pack_q(), state.pack_u()
    tips, tipv = kernels.tip_states(model.parent, model.axis, model.offset, model.com,
                                    q, u, model.limb_last, model.ee_offsets)
    nl = model.n_limbs
    f = np.zeros(nl * 3)
    ten = np.zeros(nl)
    for l in range(nl):
        if attached[l]:
            fl = -config.contact_stiffness * (tips[l] - anchors[l]) \
                - config.contact_damping * tipv[l]
            f[3 * l:3 * l + 3] = fl
            ten[l] = float(config.surface_normal @ (-fl))
    mom = kernels.state_momentum_world(
        model.parent, model.axis, model.offset, model.com, model.mass, model.inertia,
        model.base_mass, model.base_com, model.base_inertia, q, u)
    return q, u, f, ten, attached.astype(float), mom


def run_scenario(model: RobotModel, plan: MotionPlan, config: SimConfig) -> SimLog:
    """Execute a plan under PD torque control and log the run.

    The initial state is the plan's first sample at rest.  Termination:
    goal_reached (base advanced goal_displacement along goal_axis, or plan
    completed when the goal is disabled), detached_floating (unplanned
    detachment, after the float grace), time_out (duration reached with an
    outstanding goal) or numerical_blowup.
    """
    config.validate_for(model)
    n = model.n_joints
    nl = model.n_limbs
    state0 = SystemState(plan.base_pos[0], plan.base_quat[0], np.zeros(3),
                         np.zeros(3), plan.joint_ref[0], np.zeros(n))
    q0, u0 = state0.pack_q(), state0.pack_u()

    # initial contacts at the exact initial tip positions
    tips0, _ = kernels.tip_states(model.parent, model.axis, model.offset, model.com,
                                  q0, u0, model.limb_last, model.ee_offsets)
    attached = np.zeros(nl, dtype=np.int64)
    anchors = np.zeros((nl, 3))
    for l in range(nl):
        if plan.initially_attached[l]:
            attached[l] = 1
            anchors[l] = tips0[l]
    normals = np.tile(config.surface_normal, (nl, 1))
    holding = np.full(nl, config.holding_force)

    events = sorted(plan.contact_events, key=lambda e: e[0])
    ev_time = np.array([e[0] for e in events], dtype=float)
    ev_limb = np.array([model.limb_index(e[1]) for e in events], dtype=np.int64)
    ev_kind = np.array([1 if e[2] == "attach" else 0 for e in events], dtype=np.int64)

    duration = min(config.duration, plan.duration + config.float_grace)
    n_steps = int(np.ceil(duration / config.timestep))
    max_rows = n_steps // config.log_every + len(events) + nl * 4 + 4
    log_t = np.zeros(max_rows)
    log_q = np.zeros((max_rows, 7 + n))
    log_u = np.zeros((max_rows, 6 + n))
    log_f = np.zeros((max_rows, nl * 3))
    log_mom = np.zeros((max_rows, 6))
    log_ten = np.zeros((max_rows, nl))
    log_att = np.zeros((max_rows, nl))
    det_cap = 4 * nl + 8
    det_time = np.zeros(det_cap)
    det_limb = np.zeros(det_cap, dtype=np.int64)
    det_tension = np.zeros(det_cap)
    stats = np.zeros((nl, 6))

    row0 = _initial_row(model, state0, attached.copy(), anchors, config)

    term, term_t, rows, ndet, q_end, u_end = kernels.run_span(
        model.parent, model.axis, model.offset, model.com, model.mass, model.inertia,
        model.base_mass, model.base_com, model.base_inertia,
        model.limb_start, model.limb_len, model.limb_last, model.ee_offsets,
        model.free_dofs,
        q0, u0, 0.0,
        float(plan.times[0]), plan.dt,
        np.ascontiguousarray(plan.joint_ref), np.ascontiguousarray(plan.joint_rate_ref),
        config.kp, config.kd,
        attached, anchors, normals,
        config.contact_stiffness, config.contact_damping, holding,
        ev_time, ev_limb, ev_kind,
        config.timestep, n_steps, config.gravity,
        config.goal_axis, config.goal_displacement, config.float_grace,
        config.log_every,
        log_t, log_q, log_u, log_f, log_mom, log_ten, log_att,
        det_time, det_limb, det_tension,
        stats)

    # prepend the initial sample
    times = np.concatenate([[0.0], log_t[:rows]])
    qs = np.vstack([row0[0], log_q[:rows]])
    us = np.vstack([row0[1], log_u[:rows]])
    fs = np.vstack([row0[2], log_f[:rows]]).reshape(-1, nl, 3)
    tens = np.vstack([row0[3], log_ten[:rows]])
    atts = np.vstack([row0[4], log_att[:rows]])
    moms = np.vstack([row0[5], log_mom[:rows]])

    # per-contact moment of the contact force about the base origin
    moments = np.zeros_like(fs)
    for i in range(fs.shape[0]):
        tips, _ = kernels.tip_states(model.parent, model.axis, model.offset, model.com,
                                     qs[i], us[i], model.limb_last, model.ee_offsets)
        for l in range(nl):
            moments[i, l] = np.cross(tips[l] - qs[i, 0:3], fs[i, l])

    ev_log = []
    for i in range(ndet):
        ev_log.append({"kind": "detachment", "time": float(det_time[i]),
                       "limb": int(det_limb[i]), "tension": float(det_tension[i])})
    # flag joint-limit violations observed in the logged states
    ang = qs[:, 7:]
    viol = (ang < model.qlo - 1e-12) | (ang > model.qhi + 1e-12)
    if np.any(viol):
        i, j = np.argwhere(viol)[0]
        ev_log.append({"kind": "joint_limit", "time": float(times[i]), "joint": int(j)})

    if term == kernels.TERM_GOAL:
        termination = "goal_reached"
    elif term == kernels.TERM_DETACHED:
        termination = "detached_floating"
    elif term == kernels.TERM_BLOWUP:
        termination = "numerical_blowup"
        ev_log.append({"kind": "blowup", "time": float(term_t)})
    else:
        termination = "time_out" if config.goal_displacement > 0 else "goal_reached"

    stat_dict = {
        "max_tension": stats[:, 0].copy(),
        "max_force": stats[:, 1].copy(),
        "mean_force": np.where(stats[:, 3] > 0, stats[:, 2] / np.maximum(stats[:, 3], 1), 0.0),
        "max_moment": stats[:, 4].copy(),
        "mean_moment": np.where(stats[:, 3] > 0, stats[:, 5] / np.maximum(stats[:, 3], 1), 0.0),
        "force_samples": stats[:, 3].copy(),
    }

    return SimLog(
        times=times,
        base_pos=qs[:, 0:3],
        base_quat=qs[:, 3:7],
        base_twist=us[:, 0:6],
        joint_angles=qs[:, 7:],
        joint_rates=us[:, 6:],
        contact_forces=fs,
        contact_moments=moments,
        tensions=tens,
        attached=atts.astype(bool),
        momentum=moms,
        events=ev_log,
        termination=termination,
        termination_time=float(term_t),
        final_state=SystemState.unpack(n, q_end, u_end, time=float(term_t)),
        stats=stat_dict,
    )


def run_passive(model: RobotModel, state: SystemState, duration, dt,
                gravity=(0.0, 0.0, 0.0), log_every=10) -> SimLog:
    """Free-floating run: no contacts, no torques, optional gravity.

    Used for conservation checks; reuses the scenario machinery with zero
    gains and a quiescent plan."""
    n = model.n_joints
    times = np.array([0.0, duration])
    plan = MotionPlan(
        dt=duration, times=times,
        base_pos=np.tile(state.base_pos, (2, 1)),
        base_quat=np.tile(state.base_quat, (2, 1)),
        base_twist=np.zeros((2, 6)),
        joint_ref=np.tile(state.joint_angles, (2, 1)),
        joint_rate_ref=np.zeros((2, n)),
        ee_ref=np.zeros((2, model.n_limbs, 3)),
        attached=np.zeros((2, model.n_limbs), dtype=bool),
        phase_index=np.zeros(2, dtype=int),
        contact_events=[], swing_traces=[], mode="BL", alpha=0.0,
        cycle_period=duration, cycles=1,
        initially_attached=[False] * model.n_limbs,
    )
    config = SimConfig(timestep=dt, duration=duration, kp=np.zeros(n), kd=np.zeros(n),
                       gravity=np.asarray(gravity, dtype=float), log_every=log_every,
                       goal_displacement=0.0, contact_stiffness=0.0, contact_damping=0.0)
    config.validate_for(model)
    return _rerun_with_velocity(model, plan, config, state)


def _rerun_with_velocity(model, plan, config, state0):
    """run_scenario with an explicit (possibly moving) initial state."""
    n = model.n_joints
    nl = model.n_limbs
    q0, u0 = state0.pack_q(), state0.pack_u()
    n_steps = int(np.ceil(config.duration / config.timestep))
    max_rows = n_steps // config.log_every + 8
    log_t = np.zeros(max_rows)
    log_q = np.zeros((max_rows, 7 + n))
    log_u = np.zeros((max_rows, 6 + n))
    log_f = np.zeros((max_rows, nl * 3))
    log_mom = np.zeros((max_rows, 6))
    log_ten = np.zeros((max_rows, nl))
    log_att = np.zeros((max_rows, nl))
    det_time = np.zeros(8)
    det_limb = np.zeros(8, dtype=np.int64)
    det_tension = np.zeros(8)
    stats = np.zeros((nl, 6))
    attached = np.zeros(nl, dtype=np.int64)
    anchors = np.zeros((nl, 3))
    normals = np.tile(config.surface_normal, (nl, 1))
    holding = np.full(nl, config.holding_force)
    row0 = _initial_row(model, state0, attached.copy(), anchors, config)
    term, term_t, rows, ndet, q_end, u_end = kernels.run_span(
        model.parent, model.axis, model.offset, model.com, model.mass, model.inertia,
        model.base_mass, model.base_com, model.base_inertia,
        model.limb_start, model.limb_len, model.limb_last, model.ee_offsets,
        model.free_dofs,
        q0, u0, 0.0,
        float(plan.times[0]), plan.dt,
        np.ascontiguousarray(plan.joint_ref), np.ascontiguousarray(plan.joint_rate_ref),
        config.kp, config.kd,
        attached, anchors, normals,
        config.contact_stiffness, config.contact_damping, holding,
        np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
        config.timestep, n_steps, config.gravity,
        config.goal_axis, 0.0, config.float_grace, config.log_every,
        log_t, log_q, log_u, log_f, log_mom, log_ten, log_att,
        det_time, det_limb, det_tension, stats)
    times = np.concatenate([[0.0], log_t[:rows]])
    qs = np.vstack([row0[0], log_q[:rows]])
    us = np.vstack([row0[1], log_u[:rows]])
    moms = np.vstack([row0[5], log_mom[:rows]])
    nl3 = np.zeros((times.size, nl, 3))
    return SimLog(
        times=times, base_pos=qs[:, 0:3], base_quat=qs[:, 3:7],
        base_twist=us[:, 0:6], joint_angles=qs[:, 7:], joint_rates=us[:, 6:],
        contact_forces=nl3, contact_moments=nl3.copy(),
        tensions=np.zeros((times.size, nl)), attached=np.zeros((times.size, nl), dtype=bool),
        momentum=moms, events=[],
        termination="goal_reached", termination_time=float(term_t),
        final_state=SystemState.unpack(n, q_end, u_end, time=float(term_t)),
        stats={},
    )
