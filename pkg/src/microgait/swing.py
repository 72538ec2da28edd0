"""Low-reaction swing trajectory generation.

A degree-7 Bezier with rest-to-rest boundary conditions leaves two free
interior control points; a derivative-free simplex search over them
minimizes the peak rate of the swing limb's momentum plus step-height
penalty terms, subject to joint limits (violations reject the candidate
with an infinite objective).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

from microgait import kernels
from microgait.bezier import BezierCurve, PiecewiseQuintic, boundary_constrained_curve
from microgait.errors import InfeasibleTrajectoryError
from microgait.kinematics import (
    DLS_DAMPING,
    DLS_DAMPING_HIGH,
    DLS_SING_THRESHOLD,
    IK_STEP_CAP,
)
from microgait.model import RobotModel
from microgait.state import SystemState, check_state

IK_SAMPLE_TOL = 1e-9
IK_SAMPLE_MAX_ITER = 50


@dataclass
class LrstWeights:
    """Objective weights and optimizer settings.

    k1 scales the peak momentum-rate term, k2/k3 the step-height terms
    (target height h).  Defaults are artifact settings exposed in the
    scenario config, not tuned reproduction values.
    """

    k1: float = 1.0
    k2: float = 10.0
    k3: float = 10.0
    h: float = 0.05
    sample_count: int = 64
    n_starts: int = 8
    max_iter: int = 500
    simplex_tol: float = 1e-6

    def __post_init__(self):
        if min(self.k1, self.k2, self.k3) < 0:
            raise ValueError("objective weights must be >= 0")
        if self.sample_count < 16:
            raise ValueError("sample_count must be >= 16")


@dataclass
class ObjectiveValue:
    J1: float
    J2: float
    total: float
    feasible: bool = True


@dataclass
class SwingPlan:
    """A swing trajectory for one limb plus its grasp bookkeeping."""

    curve: object                  # BezierCurve or PiecewiseQuintic
    limb: int
    start_grasp: np.ndarray
    target_grasp: np.ndarray
    release_height: float = 0.0
    grasp_height: float = 0.0


def _objective_from_positions(model, state, limb, positions, dt, weights, up):
    j0 = int(model.limb_start[limb])
    k = int(model.limb_len[limb])
    J1, J2, total, feasible = kernels.lrst_objective(
        np.ascontiguousarray(positions, dtype=float), dt,
        model.parent, model.axis, model.offset, model.com, model.mass, model.inertia,
        state.base_pos, state.base_rot, state.joint_angles.astype(float),
        j0, k, int(model.limb_last[limb]), model.ee_offsets[limb],
        model.qlo, model.qhi, model.pos_dim,
        weights.k1, weights.k2, weights.k3, weights.h,
        np.asarray(up, dtype=float),
        IK_SAMPLE_TOL, IK_SAMPLE_MAX_ITER, IK_STEP_CAP,
        DLS_DAMPING, DLS_DAMPING_HIGH, DLS_SING_THRESHOLD)
    return ObjectiveValue(float(J1), float(J2), float(total), bool(feasible))


def swing_objective(model: RobotModel, state: SystemState, plan: SwingPlan,
                    weights: LrstWeights, up=(0.0, 0.0, 1.0)) -> ObjectiveValue:
    """Evaluate the swing objective for any trajectory on the LRST grid.

    Joint rates are obtained by differencing the IK solutions across the
    grid with the base held at the state's pose; an IK failure anywhere
    marks the trajectory infeasible (infinite objective).
    """
    check_state(model, state)
    limb = model.limb_index(plan.limb)
    n = weights.sample_count
    curve = plan.curve
    ts = np.linspace(curve.t0, curve.tf, n)
    positions = np.array([curve.position(t) for t in ts])
    dt = (curve.tf - curve.t0) / (n - 1)
    return _objective_from_positions(model, state, limb, positions, dt, weights, up)


def bernstein_basis(n_samples: int, degree: int = 7) -> np.ndarray:
    """(n_samples, degree+1) Bernstein basis on a uniform grid of [0, 1]."""
    s = np.linspace(0.0, 1.0, n_samples)[:, None]
    i = np.arange(degree + 1)[None, :]
    binom = np.array([comb(degree, j) for j in range(degree + 1)])[None, :]
    return binom * s ** i * (1.0 - s) ** (degree - i)


def nelder_mead(f, x0, step, max_iter=500, tol=1e-6):
    """Minimize f with the classic simplex method.

    Returns (x_best, f_best, history) where history is the best objective
    after each iteration (non-increasing).  Convergence is declared when
    the simplex diameter (max vertex distance from the best) drops below
    `tol`.
    """
    x0 = np.asarray(x0, dtype=float)
    dim = x0.size
    alpha, gamma, rho, sigma = 1.0, 2.0, 0.5, 0.5
    simplex = [x0.copy()]
    for i in range(dim):
        v = x0.copy()
        v[i] += step
        simplex.append(v)
    values = [f(v) for v in simplex]
    history = []
    for it in range(max_iter):
        order = np.argsort(values, kind="stable")
        simplex = [simplex[i] for i in order]
        values = [values[i] for i in order]
        history.append(values[0])
        diameter = max(np.linalg.norm(v - simplex[0]) for v in simplex[1:])
        if diameter < tol:
            break
        if not np.isfinite(values[0]) and it >= 2 * dim:
            break  # start stuck in an infeasible basin
        centroid = np.mean(simplex[:-1], axis=0)
        xr = centroid + alpha * (centroid - simplex[-1])
        fr = f(xr)
        if values[0] <= fr < values[-2]:
            simplex[-1], values[-1] = xr, fr
            continue
        if fr < values[0]:
            xe = centroid + gamma * (centroid - simplex[-1])
            fe = f(xe)
            if fe < fr:
                simplex[-1], values[-1] = xe, fe
            else:
                simplex[-1], values[-1] = xr, fr
            continue
        xc = centroid + rho * (simplex[-1] - centroid)
        fc = f(xc)
        if fc < values[-1]:
            simplex[-1], values[-1] = xc, fc
            continue
        for i in range(1, dim + 1):
            simplex[i] = simplex[0] + sigma * (simplex[i] - simplex[0])
            values[i] = f(simplex[i])
    order = np.argsort(values, kind="stable")
    best = order[0]
    history.append(values[best])
    return simplex[best], values[best], history


def _chord_frame(start, target, up):
    chord = target - start
    cn = np.linalg.norm(chord)
    up = np.asarray(up, dtype=float)
    if cn < 1e-12:
        return up / np.linalg.norm(up)
    uhat = chord / cn
    n = up - (up @ uhat) * uhat
    nn = np.linalg.norm(n)
    return up / np.linalg.norm(up) if nn < 1e-12 else n / nn


def fit_free_points(curve, start, target, window, n_samples=64):
    """Least-squares a_3, a_4 so the constrained Bezier tracks `curve`."""
    ts = np.linspace(window[0], window[1], n_samples)
    P = np.array([curve.position(t) for t in ts])
    B = bernstein_basis(n_samples)
    fixed = np.outer(B[:, :3].sum(axis=1), start) + np.outer(B[:, 5:].sum(axis=1), target)
    sol, *_ = np.linalg.lstsq(B[:, 3:5], P - fixed, rcond=None)
    return sol[0], sol[1]


def optimize_swing(model: RobotModel, state: SystemState, limb, start, target,
                   window, weights: LrstWeights, up=(0.0, 0.0, 1.0), seed=0):
    """Optimize the two free Bezier control points for one swing.

    Multi-start simplex search: deterministic seeds along the chord at the
    target height (1.0/1.5/0.5 x h), a least-squares fit of the via-point
    baseline, and seeded random perturbations.  Ties across starts resolve
    to the lowest start index; a fixed seed therefore gives bit-identical
    results.  Raises InfeasibleTrajectoryError when every start is
    infeasible.
    """
    check_state(model, state)
    limb = model.limb_index(limb)
    start = np.asarray(start, dtype=float)
    target = np.asarray(target, dtype=float)
    nvec = _chord_frame(start, target, up)
    h = weights.h
    nsamp = weights.sample_count
    basis = bernstein_basis(nsamp)
    dt = (window[1] - window[0]) / (nsamp - 1)
    dim = 2 * model.pos_dim

    def unpack(x):
        if model.pos_dim == 2:
            a3 = np.array([x[0], x[1], 0.0])
            a4 = np.array([x[2], x[3], 0.0])
        else:
            a3, a4 = x[:3], x[3:]
        return a3, a4

    def pack(a3, a4):
        if model.pos_dim == 2:
            return np.array([a3[0], a3[1], a4[0], a4[1]])
        return np.concatenate([a3, a4])

    ctrl = np.empty((8, 3))
    ctrl[0] = ctrl[1] = ctrl[2] = start
    ctrl[5] = ctrl[6] = ctrl[7] = target

    # bind the kernel call once; this closure is the optimizer hot path
    j0 = int(model.limb_start[limb])
    k = int(model.limb_len[limb])
    limb_last = int(model.limb_last[limb])
    ee_off = model.ee_offsets[limb]
    base_pos = state.base_pos
    base_rot = state.base_rot
    phi_ref = state.joint_angles.astype(float)
    up_arr = np.asarray(up, dtype=float)

    def objective(x):
        a3, a4 = unpack(x)
        ctrl[3] = a3
        ctrl[4] = a4
        total = kernels.lrst_objective(
            basis @ ctrl, dt,
            model.parent, model.axis, model.offset, model.com, model.mass,
            model.inertia, base_pos, base_rot, phi_ref,
            j0, k, limb_last, ee_off, model.qlo, model.qhi, model.pos_dim,
            weights.k1, weights.k2, weights.k3, weights.h, up_arr,
            IK_SAMPLE_TOL, IK_SAMPLE_MAX_ITER, IK_STEP_CAP,
            DLS_DAMPING, DLS_DAMPING_HIGH, DLS_SING_THRESHOLD)[2]
        return float(total)

    p3 = start + (target - start) * (3.0 / 7.0)
    p4 = start + (target - start) * (4.0 / 7.0)
    seeds = [
        pack(p3 + h * nvec, p4 + h * nvec),
        pack(p3 + 1.5 * h * nvec, p4 + 1.5 * h * nvec),
        pack(p3 + 0.5 * h * nvec, p4 + 0.5 * h * nvec),
    ]
    apex = 0.5 * (start + target) + h * nvec
    baseline = PiecewiseQuintic([start, apex, target],
                                [window[0], 0.5 * (window[0] + window[1]), window[1]])
    fit3, fit4 = fit_free_points(baseline, start, target, window, nsamp)
    seeds.append(pack(fit3, fit4))
    rng = np.random.default_rng(seed)
    scale = max(0.5 * h, 1e-3)
    while len(seeds) < weights.n_starts:
        seeds.append(seeds[0] + rng.normal(0.0, scale, size=dim))
    seeds = seeds[: weights.n_starts]

    step = max(0.25 * h, 1e-3)
    best_x, best_val, best_idx = None, np.inf, -1
    histories = []
    seed_values = []
    for idx, x0 in enumerate(seeds):
        seed_values.append(objective(x0))
        x, val, hist = nelder_mead(objective, x0, step,
                                   max_iter=weights.max_iter, tol=weights.simplex_tol)
        histories.append(hist)
        if val < best_val:
            best_x, best_val, best_idx = x, val, idx
    if not np.isfinite(best_val):
        raise InfeasibleTrajectoryError(
            f"no feasible swing trajectory from any of {len(seeds)} starts")
    a3, a4 = unpack(best_x)
    curve = boundary_constrained_curve(start, target, window, a3, a4)
    plan = SwingPlan(curve=curve, limb=limb, start_grasp=start, target_grasp=target)
    value = swing_objective(model, state, plan, weights, up)
    info = {
        "histories": histories,
        "seed_values": seed_values,
        "best_start": best_idx,
    }
    return plan, value, info
