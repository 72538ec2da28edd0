"""System momentum and the inertia matrices behind it.

Momentum is linear plus angular about the base frame origin (world axes,
reference point fixed at the evaluation instant):

    momentum = H_b @ base_twist + sum_i H_bm[i] @ joint_rates_i

with H_b the locked (whole system rigid) spatial inertia and H_bm the
base-manipulator coupling blocks.  Planar models reduce to the in-plane
components [px, py, Lz].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from microgait import kernels
from microgait.model import RobotModel
from microgait.state import SystemState, check_state


@dataclass
class InertiaSet:
    H_b: np.ndarray            # (d, d): locked spatial inertia, d = 3 planar / 6 spatial
    H_bm: list                 # per limb (d, k) coupling blocks
    sigma_min: float           # conditioning of H_b


@dataclass
class MomentumState:
    total: np.ndarray
    base_part: np.ndarray
    support_part: np.ndarray
    swing_part: np.ndarray


def _world_quantities(model: RobotModel, state: SystemState):
    R_b = state.base_rot
    R, pj, axw, rcom = kernels.fk(model.parent, model.axis, model.offset,
                                  model.com, state.joint_angles,
                                  state.base_pos, R_b)
    Iw, Iwb = kernels.world_inertias(R, model.inertia, R_b, model.base_inertia)
    rcom_b = state.base_pos + R_b @ model.base_com
    return R, pj, axw, rcom, Iw, Iwb, rcom_b


def inertia_matrices(model: RobotModel, state: SystemState) -> InertiaSet:
    """Locked inertia H_b and per-limb coupling blocks H_bm."""
    check_state(model, state)
    R, pj, axw, rcom, Iw, Iwb, rcom_b = _world_quantities(model, state)
    H_b = kernels.locked_inertia(model.mass, rcom, Iw, model.base_mass,
                                 rcom_b, Iwb, state.base_pos)
    idx = model.twist_idx
    H_bm = []
    for l in range(model.n_limbs):
        Hc = kernels.coupling_columns(model.parent, model.mass, rcom, Iw, pj, axw,
                                      state.base_pos, int(model.limb_start[l]),
                                      int(model.limb_len[l]))
        H_bm.append(Hc[idx])
    H_b = H_b[np.ix_(idx, idx)]
    smin = float(np.linalg.svd(H_b, compute_uv=False)[-1])
    return InertiaSet(H_b=H_b, H_bm=H_bm, sigma_min=smin)


def system_momentum(model: RobotModel, state: SystemState, swing_set=()) -> MomentumState:
    """Momentum about the base origin split into base, support and swing
    parts; limbs in `swing_set` count as swinging, the rest as support."""
    check_state(model, state)
    swing = {model.limb_index(s) for s in swing_set}
    if not swing <= set(range(model.n_limbs)):
        raise ValueError(f"swing set {swing} outside limb range")
    iner = inertia_matrices(model, state)
    twist = state.reduced_twist(model)
    base_part = iner.H_b @ twist
    d = model.momentum_dim
    support_part = np.zeros(d)
    swing_part = np.zeros(d)
    for l in range(model.n_limbs):
        j0 = int(model.limb_start[l])
        k = int(model.limb_len[l])
        contrib = iner.H_bm[l] @ state.joint_rates[j0:j0 + k]
        if l in swing:
            swing_part += contrib
        else:
            support_part += contrib
    return MomentumState(
        total=base_part + support_part + swing_part,
        base_part=base_part,
        support_part=support_part,
        swing_part=swing_part,
    )


def momentum_about_world_origin(model: RobotModel, state: SystemState) -> np.ndarray:
    """Spatial momentum about the world origin (conserved in free float)."""
    check_state(model, state)
    return kernels.state_momentum_world(
        model.parent, model.axis, model.offset, model.com, model.mass,
        model.inertia, model.base_mass, model.base_com, model.base_inertia,
        state.pack_q(), state.pack_u())


def kinetic_energy(model: RobotModel, state: SystemState) -> float:
    """0.5 u^T H u for the full generalized velocity."""
    check_state(model, state)
    R, pj, axw, rcom, Iw, Iwb, rcom_b = _world_quantities(model, state)
    H = kernels.mass_matrix(model.parent, model.mass, rcom, Iw, pj, axw,
                            state.base_pos, model.base_mass, rcom_b, Iwb,
                            model.n_joints)
    u = state.pack_u()
    return 0.5 * float(u @ H @ u)
