"""Numba-compiled numerical core shared by the planner and the simulator.

Everything in here operates on flat float64/int64 arrays unpacked from
`RobotModel` / `SystemState` (see model.flat_arrays / state packing) so a
single set of formulas backs kinematics, momentum matrices, the swing
objective and forward dynamics.  The Python API layers stay thin wrappers.

Conventions:
  * quaternions (w, x, y, z); angular velocities in the world frame
  * base twist = (v of base frame origin, world omega), 6 components
  * generalized velocity u = [v(3), omega(3), joint rates(n)]
  * momentum from the planner-side kernels is taken about the base frame
    origin; `momentum_world_origin` (used for conservation logging) is
    taken about the world origin, which is a conserved quantity in free
    float.

All joints are revolute.  A link's frame sits at its joint, with
R_link = R_parent @ rodrigues(axis, angle); the axis is the same vector in
both parent and child frames.
"""

import numpy as np

try:
    from numba import njit

    def _jit(fn):
        return njit(cache=True, fastmath=False)(fn)

except ImportError:  # pragma: no cover - numba is a hard dependency; kept for debugging
    def _jit(fn):
        return fn


@_jit
def _rodrigues(axis, angle):
    c = np.cos(angle)
    s = np.sin(angle)
    kx, ky, kz = axis[0], axis[1], axis[2]
    R = np.empty((3, 3))
    R[0, 0] = c + kx * kx * (1.0 - c)
    R[0, 1] = kx * ky * (1.0 - c) - kz * s
    R[0, 2] = kx * kz * (1.0 - c) + ky * s
    R[1, 0] = ky * kx * (1.0 - c) + kz * s
    R[1, 1] = c + ky * ky * (1.0 - c)
    R[1, 2] = ky * kz * (1.0 - c) - kx * s
    R[2, 0] = kz * kx * (1.0 - c) - ky * s
    R[2, 1] = kz * ky * (1.0 - c) + kx * s
    R[2, 2] = c + kz * kz * (1.0 - c)
    return R


@_jit
def _quat_to_rot(q):
    w, x, y, z = q[0], q[1], q[2], q[3]
    R = np.empty((3, 3))
    R[0, 0] = 1.0 - 2.0 * (y * y + z * z)
    R[0, 1] = 2.0 * (x * y - w * z)
    R[0, 2] = 2.0 * (x * z + w * y)
    R[1, 0] = 2.0 * (x * y + w * z)
    R[1, 1] = 1.0 - 2.0 * (x * x + z * z)
    R[1, 2] = 2.0 * (y * z - w * x)
    R[2, 0] = 2.0 * (x * z - w * y)
    R[2, 1] = 2.0 * (y * z + w * x)
    R[2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return R


@_jit
def _cross(a, b):
    c = np.empty(3)
    c[0] = a[1] * b[2] - a[2] * b[1]
    c[1] = a[2] * b[0] - a[0] * b[2]
    c[2] = a[0] * b[1] - a[1] * b[0]
    return c


@_jit
def fk(parent, axis, offset, com, phi, p_b, R_b):
    """Forward kinematics over the whole tree.

    Returns world link rotations R (n,3,3), joint origins pj (n,3), world
    joint axes axw (n,3) and link COM positions rcom (n,3).
    """
    n = parent.shape[0]
    R = np.empty((n, 3, 3))
    pj = np.empty((n, 3))
    axw = np.empty((n, 3))
    rcom = np.empty((n, 3))
    for i in range(n):
        par = parent[i]
        if par < 0:
            Rp = R_b
            pp = p_b
        else:
            Rp = R[par]
            pp = pj[par]
        pj[i] = pp + Rp @ offset[i]
        R[i] = Rp @ _rodrigues(axis[i], phi[i])
        axw[i] = Rp @ axis[i]
        rcom[i] = pj[i] + R[i] @ com[i]
    return R, pj, axw, rcom


@_jit
def link_velocities(parent, pj, axw, rcom, v_b, w_b, p_b, phid):
    """World angular velocity and COM velocity of every link."""
    n = parent.shape[0]
    w = np.empty((n, 3))
    vo = np.empty((n, 3))  # joint-origin velocities
    vcom = np.empty((n, 3))
    for i in range(n):
        par = parent[i]
        if par < 0:
            wp = w_b
            vp = v_b + _cross(w_b, pj[i] - p_b)
        else:
            wp = w[par]
            vp = vo[par] + _cross(w[par], pj[i] - pj[par])
        vo[i] = vp
        w[i] = wp + axw[i] * phid[i]
        vcom[i] = vo[i] + _cross(w[i], rcom[i] - pj[i])
    return w, vo, vcom


@_jit
def world_inertias(R, inertia, R_b, base_inertia):
    """Rotate link inertia tensors (about COM) into the world frame."""
    n = R.shape[0]
    Iw = np.empty((n, 3, 3))
    for i in range(n):
        Iw[i] = R[i] @ inertia[i] @ R[i].T
    Iwb = R_b @ base_inertia @ R_b.T
    return Iw, Iwb


@_jit
def ee_position(R, pj, limb_last, ee_off):
    return pj[limb_last] + R[limb_last] @ ee_off


@_jit
def ee_velocity(R, pj, limb_last, ee_off, w, vo):
    tip = pj[limb_last] + R[limb_last] @ ee_off
    return vo[limb_last] + _cross(w[limb_last], tip - pj[limb_last])


@_jit
def limb_jacobians(pj, axw, tip, p_b, j0, k):
    """Base and manipulator Jacobians of one limb tip (linear velocity).

    J_b (3,6) maps base twist to tip velocity, J_m (3,k) maps the limb's
    joint rates to tip velocity.
    """
    J_b = np.zeros((3, 6))
    for i in range(3):
        J_b[i, i] = 1.0
    r = tip - p_b
    # -skew(r) block: tip velocity from base rotation is w x r
    J_b[0, 4] = r[2]
    J_b[0, 5] = -r[1]
    J_b[1, 3] = -r[2]
    J_b[1, 5] = r[0]
    J_b[2, 3] = r[1]
    J_b[2, 4] = -r[0]
    J_m = np.empty((3, k))
    for c in range(k):
        j = j0 + c
        col = _cross(axw[j], tip - pj[j])
        J_m[0, c] = col[0]
        J_m[1, c] = col[1]
        J_m[2, c] = col[2]
    return J_b, J_m


@_jit
def locked_inertia(mass, rcom, Iw, base_mass, rcom_b, Iwb, p_b):
    """Spatial inertia of the whole system frozen rigid, about the base
    frame origin: momentum = H_b @ base twist when all joint rates vanish."""
    H = np.zeros((6, 6))
    nb = mass.shape[0] + 1
    for b in range(nb):
        if b == 0:
            m = base_mass
            c = rcom_b - p_b
            Ib = Iwb
        else:
            m = mass[b - 1]
            c = rcom[b - 1] - p_b
            Ib = Iw[b - 1]
        for i in range(3):
            H[i, i] += m
        # skew(c) blocks
        S = np.zeros((3, 3))
        S[0, 1] = -c[2]
        S[0, 2] = c[1]
        S[1, 0] = c[2]
        S[1, 2] = -c[0]
        S[2, 0] = -c[1]
        S[2, 1] = c[0]
        for i in range(3):
            for jj in range(3):
                H[i, 3 + jj] += -m * S[i, jj]
                H[3 + i, jj] += m * S[i, jj]
        SS = S @ S
        for i in range(3):
            for jj in range(3):
                H[3 + i, 3 + jj] += Ib[i, jj] - m * SS[i, jj]
    return H


@_jit
def coupling_columns(parent, mass, rcom, Iw, pj, axw, p_b, j0, k):
    """Base-manipulator coupling H_bm columns for joints j0..j0+k-1.

    Column j maps that joint's rate to system momentum about the base
    origin; only links distal to j (same chain) contribute.
    """
    n = parent.shape[0]
    H = np.zeros((6, k))
    for link in range(n):
        # walk ancestors of `link`; any ancestor joint in [j0, j0+k) picks
        # up this link's mass
        a = link
        while a >= 0:
            if j0 <= a < j0 + k:
                c = a - j0
                d = rcom[link] - pj[a]
                lin = _cross(axw[a], d) * mass[link]
                ang = Iw[link] @ axw[a] + _cross(rcom[link] - p_b, lin)
                for i in range(3):
                    H[i, c] += lin[i]
                    H[3 + i, c] += ang[i]
            a = parent[a]
    return H


@_jit
def momentum_world_origin(parent, mass, rcom, Iw, vcom, w,
                          base_mass, rcom_b, Iwb, v_b, w_b, p_b):
    """Linear momentum and angular momentum about the world origin."""
    L = np.zeros(6)
    vb_com = v_b + _cross(w_b, rcom_b - p_b)
    L[0:3] += base_mass * vb_com
    L[3:6] += Iwb @ w_b + _cross(rcom_b, base_mass * vb_com)
    n = parent.shape[0]
    for i in range(n):
        L[0:3] += mass[i] * vcom[i]
        L[3:6] += Iw[i] @ w[i] + _cross(rcom[i], mass[i] * vcom[i])
    return L


@_jit
def sigma_min(J):
    s = np.linalg.svd(np.ascontiguousarray(J), False)[1]
    return s[s.shape[0] - 1]


@_jit
def _min_eig_sym(A, m):
    """Smallest eigenvalue of a symmetric 2x2 or 3x3 matrix, closed form."""
    if m == 2:
        tr = A[0, 0] + A[1, 1]
        det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
        disc = tr * tr - 4.0 * det
        if disc < 0.0:
            disc = 0.0
        return 0.5 * (tr - np.sqrt(disc))
    p1 = A[0, 1] ** 2 + A[0, 2] ** 2 + A[1, 2] ** 2
    if p1 < 1e-300:
        lo = A[0, 0]
        if A[1, 1] < lo:
            lo = A[1, 1]
        if A[2, 2] < lo:
            lo = A[2, 2]
        return lo
    q = (A[0, 0] + A[1, 1] + A[2, 2]) / 3.0
    p2 = (A[0, 0] - q) ** 2 + (A[1, 1] - q) ** 2 + (A[2, 2] - q) ** 2 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    b00 = (A[0, 0] - q) / p
    b11 = (A[1, 1] - q) / p
    b22 = (A[2, 2] - q) / p
    b01 = A[0, 1] / p
    b02 = A[0, 2] / p
    b12 = A[1, 2] / p
    detb = b00 * (b11 * b22 - b12 * b12) - b01 * (b01 * b22 - b12 * b02) \
        + b02 * (b01 * b12 - b11 * b02)
    r = detb / 2.0
    if r < -1.0:
        r = -1.0
    elif r > 1.0:
        r = 1.0
    phi_ang = np.arccos(r) / 3.0
    return q + 2.0 * p * np.cos(phi_ang + 2.0 * np.pi / 3.0)


@_jit
def _solve_sym_small(A, b, m, out):
    """Solve a symmetric positive definite 2x2 or 3x3 system in place."""
    if m == 2:
        det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
        out[0] = (A[1, 1] * b[0] - A[0, 1] * b[1]) / det
        out[1] = (A[0, 0] * b[1] - A[1, 0] * b[0]) / det
    else:
        c00 = A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1]
        c01 = A[0, 2] * A[2, 1] - A[0, 1] * A[2, 2]
        c02 = A[0, 1] * A[1, 2] - A[0, 2] * A[1, 1]
        c10 = A[1, 2] * A[2, 0] - A[1, 0] * A[2, 2]
        c11 = A[0, 0] * A[2, 2] - A[0, 2] * A[2, 0]
        c12 = A[0, 2] * A[1, 0] - A[0, 0] * A[1, 2]
        c20 = A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0]
        c21 = A[0, 1] * A[2, 0] - A[0, 0] * A[2, 1]
        c22 = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
        det = A[0, 0] * c00 + A[0, 1] * c10 + A[0, 2] * c20
        out[0] = (c00 * b[0] + c01 * b[1] + c02 * b[2]) / det
        out[1] = (c10 * b[0] + c11 * b[1] + c12 * b[2]) / det
        out[2] = (c20 * b[0] + c21 * b[1] + c22 * b[2]) / det


@_jit
def limb_fk(axis, offset, phi, p_b, R_b, j0, k, ee_off, Rj, pj_l, aw, tip):
    """FK over one limb chain only (limbs root at the base).

    Fills the provided work arrays (rotations, joint origins, world axes)
    and the tip position, allocation-free: this sits inside the IK and
    swing-objective hot loops."""
    r00 = R_b[0, 0]
    r01 = R_b[0, 1]
    r02 = R_b[0, 2]
    r10 = R_b[1, 0]
    r11 = R_b[1, 1]
    r12 = R_b[1, 2]
    r20 = R_b[2, 0]
    r21 = R_b[2, 1]
    r22 = R_b[2, 2]
    px = p_b[0]
    py = p_b[1]
    pz = p_b[2]
    for c in range(k):
        j = j0 + c
        ox = offset[j, 0]
        oy = offset[j, 1]
        oz = offset[j, 2]
        px = px + r00 * ox + r01 * oy + r02 * oz
        py = py + r10 * ox + r11 * oy + r12 * oz
        pz = pz + r20 * ox + r21 * oy + r22 * oz
        pj_l[c, 0] = px
        pj_l[c, 1] = py
        pj_l[c, 2] = pz
        kx = axis[j, 0]
        ky = axis[j, 1]
        kz = axis[j, 2]
        aw[c, 0] = r00 * kx + r01 * ky + r02 * kz
        aw[c, 1] = r10 * kx + r11 * ky + r12 * kz
        aw[c, 2] = r20 * kx + r21 * ky + r22 * kz
        ca = np.cos(phi[j])
        sa = np.sin(phi[j])
        om = 1.0 - ca
        l00 = ca + kx * kx * om
        l01 = kx * ky * om - kz * sa
        l02 = kx * kz * om + ky * sa
        l10 = ky * kx * om + kz * sa
        l11 = ca + ky * ky * om
        l12 = ky * kz * om - kx * sa
        l20 = kz * kx * om - ky * sa
        l21 = kz * ky * om + kx * sa
        l22 = ca + kz * kz * om
        n00 = r00 * l00 + r01 * l10 + r02 * l20
        n01 = r00 * l01 + r01 * l11 + r02 * l21
        n02 = r00 * l02 + r01 * l12 + r02 * l22
        n10 = r10 * l00 + r11 * l10 + r12 * l20
        n11 = r10 * l01 + r11 * l11 + r12 * l21
        n12 = r10 * l02 + r11 * l12 + r12 * l22
        n20 = r20 * l00 + r21 * l10 + r22 * l20
        n21 = r20 * l01 + r21 * l11 + r22 * l21
        n22 = r20 * l02 + r21 * l12 + r22 * l22
        Rj[c, 0, 0] = n00
        Rj[c, 0, 1] = n01
        Rj[c, 0, 2] = n02
        Rj[c, 1, 0] = n10
        Rj[c, 1, 1] = n11
        Rj[c, 1, 2] = n12
        Rj[c, 2, 0] = n20
        Rj[c, 2, 1] = n21
        Rj[c, 2, 2] = n22
        r00 = n00
        r01 = n01
        r02 = n02
        r10 = n10
        r11 = n11
        r12 = n12
        r20 = n20
        r21 = n21
        r22 = n22
    ex = ee_off[0]
    ey = ee_off[1]
    ez = ee_off[2]
    tip[0] = px + r00 * ex + r01 * ey + r02 * ez
    tip[1] = py + r10 * ex + r11 * ey + r12 * ez
    tip[2] = pz + r20 * ex + r21 * ey + r22 * ez


@_jit
def ik_limb(parent, axis, offset, com, phi_all, p_b, R_b,
            j0, k, limb_last, ee_off, target, qlo, qhi,
            pos_dim, tol, max_iter, step_cap, damping, damping_hi, sing_thresh):
    """Damped-least-squares position IK for one limb, base held fixed.

    Iterates on a copy of the full joint vector; only the limb's joints
    move.  Angles are clamped to the joint limits each iteration; the
    damping factor escalates when the smallest singular value of the limb
    Jacobian drops below the singularity threshold.  Returns (angles for
    the whole tree, converged flag, residual norm, iterations).
    """
    phi = phi_all.copy()
    Rj = np.empty((k, 3, 3))
    pj_l = np.empty((k, 3))
    aw = np.empty((k, 3))
    tip = np.empty(3)
    J = np.empty((pos_dim, k))
    A = np.empty((pos_dim, pos_dim))
    e = np.empty(pos_dim)
    y = np.empty(pos_dim)
    d = np.empty(k)
    it_done = _ik_iterate(axis, offset, phi, p_b, R_b, j0, k, ee_off, target,
                          qlo, qhi, pos_dim, tol, max_iter, step_cap,
                          damping, damping_hi, sing_thresh,
                          Rj, pj_l, aw, tip, J, A, e, y, d)
    resid = 0.0
    for i in range(pos_dim):
        resid += (target[i] - tip[i]) ** 2
    resid = np.sqrt(resid)
    return phi, resid < tol, resid, it_done


@_jit
def _ik_iterate(axis, offset, phi, p_b, R_b, j0, k, ee_off, target,
                qlo, qhi, pos_dim, tol, max_iter, step_cap,
                damping, damping_hi, sing_thresh,
                Rj, pj_l, aw, tip, J, A, e, y, d):
    """Allocation-free DLS iteration core; mutates phi in place and leaves
    the final tip in `tip`.  Returns the iteration count."""
    thresh2 = sing_thresh * sing_thresh
    tol2 = tol * tol
    for it in range(max_iter + 1):
        limb_fk(axis, offset, phi, p_b, R_b, j0, k, ee_off, Rj, pj_l, aw, tip)
        r2 = 0.0
        for i in range(pos_dim):
            e[i] = target[i] - tip[i]
            r2 += e[i] * e[i]
        if r2 < tol2:
            return it
        if it == max_iter:
            return max_iter
        for c in range(k):
            ax = aw[c, 0]
            ay = aw[c, 1]
            az = aw[c, 2]
            dx = tip[0] - pj_l[c, 0]
            dy = tip[1] - pj_l[c, 1]
            dz = tip[2] - pj_l[c, 2]
            J[0, c] = ay * dz - az * dy
            if pos_dim > 1:
                J[1, c] = az * dx - ax * dz
            if pos_dim > 2:
                J[2, c] = ax * dy - ay * dx
        for i in range(pos_dim):
            for jj in range(i, pos_dim):
                acc = 0.0
                for c in range(k):
                    acc += J[i, c] * J[jj, c]
                A[i, jj] = acc
                A[jj, i] = acc
        lam = damping
        if _min_eig_sym(A, pos_dim) < thresh2:
            lam = damping_hi
        for i in range(pos_dim):
            A[i, i] += lam * lam
        _solve_sym_small(A, e, pos_dim, y)
        mx = 0.0
        for c in range(k):
            acc = 0.0
            for i in range(pos_dim):
                acc += J[i, c] * y[i]
            d[c] = acc
            if abs(acc) > mx:
                mx = abs(acc)
        if mx > step_cap:
            for c in range(k):
                d[c] *= step_cap / mx
        for c in range(k):
            j = j0 + c
            v = phi[j] + d[c]
            if v < qlo[j]:
                v = qlo[j]
            elif v > qhi[j]:
                v = qhi[j]
            phi[j] = v
    return max_iter


@_jit
def lrst_objective(positions, dt,
                   parent, axis, offset, com, mass, inertia,
                   p_b, R_b, phi_ref,
                   j0, k, limb_last, ee_off, qlo, qhi, pos_dim,
                   k1, k2, k3, h, up,
                   ik_tol, ik_max_iter, ik_step_cap, damping, damping_hi, sing_thresh):
    """Swing objective: peak momentum-rate term plus step-height terms.

    `positions` is the trajectory sampled on a uniform grid (spacing dt).
    The swing limb tracks it with the base held at its reference pose;
    joint rates come from differencing the IK solutions across the grid,
    the momentum series from the limb's coupling columns, and its rate
    from central differences.  Heights are measured along the component
    of `up` orthogonal to the chord joining the trajectory endpoints.
    Returns (J1, J2, total, feasible).
    """
    nsamp = positions.shape[0]
    chord = np.empty(3)
    for d in range(3):
        chord[d] = positions[nsamp - 1, d] - positions[0, d]
    cn = np.sqrt(chord[0] ** 2 + chord[1] ** 2 + chord[2] ** 2)
    nvec = up.copy()
    if cn > 1e-12:
        uhat = chord / cn
        dot = up[0] * uhat[0] + up[1] * uhat[1] + up[2] * uhat[2]
        for d in range(3):
            nvec[d] = up[d] - dot * uhat[d]
        nn = np.sqrt(nvec[0] ** 2 + nvec[1] ** 2 + nvec[2] ** 2)
        if nn > 1e-12:
            nvec = nvec / nn
        else:
            nvec = up.copy()
    phi_series = np.empty((nsamp, k))
    heights = np.empty(nsamp)
    phi_cur = phi_ref.copy()
    Rj = np.empty((k, 3, 3))
    pj_l = np.empty((k, 3))
    aw = np.empty((k, 3))
    tip = np.empty(3)
    J = np.empty((pos_dim, k))
    A = np.empty((pos_dim, pos_dim))
    e = np.empty(pos_dim)
    y = np.empty(pos_dim)
    dwork = np.empty(k)
    tol2 = ik_tol * ik_tol
    for s in range(nsamp):
        pos = positions[s]
        hval = 0.0
        for d in range(3):
            hval += nvec[d] * (pos[d] - positions[0, d])
        heights[s] = hval
        # warm start from the previous sample's solution: for redundant
        # limbs this keeps the redundancy resolution minimal-motion (an
        # extrapolated seed would let null-space drift compound)
        _ik_iterate(axis, offset, phi_cur, p_b, R_b, j0, k, ee_off, pos,
                    qlo, qhi, pos_dim, ik_tol, ik_max_iter, ik_step_cap,
                    damping, damping_hi, sing_thresh,
                    Rj, pj_l, aw, tip, J, A, e, y, dwork)
        r2 = 0.0
        for i in range(pos_dim):
            r2 += (pos[i] - tip[i]) ** 2
        if r2 >= tol2:
            return np.inf, np.inf, np.inf, False
        for c in range(k):
            phi_series[s, c] = phi_cur[j0 + c]
    # joint rates by differencing the IK series
    rates = np.empty((nsamp, k))
    for c in range(k):
        rates[0, c] = (phi_series[1, c] - phi_series[0, c]) / dt
        rates[nsamp - 1, c] = (phi_series[nsamp - 1, c] - phi_series[nsamp - 2, c]) / dt
    for s in range(1, nsamp - 1):
        for c in range(k):
            rates[s, c] = (phi_series[s + 1, c] - phi_series[s - 1, c]) / (2.0 * dt)
    # swing-limb momentum series about the base origin, base at reference
    L = np.empty((nsamp, 6))
    phi_work = phi_ref.copy()
    Hbm = np.empty((6, k))
    for s in range(nsamp):
        for c in range(k):
            phi_work[j0 + c] = phi_series[s, c]
        limb_fk(axis, offset, phi_work, p_b, R_b, j0, k, ee_off, Rj, pj_l, aw, tip)
        for i in range(6):
            for c in range(k):
                Hbm[i, c] = 0.0
        for c in range(k):
            j = j0 + c
            cx = com[j, 0]
            cy = com[j, 1]
            cz = com[j, 2]
            rcx = pj_l[c, 0] + Rj[c, 0, 0] * cx + Rj[c, 0, 1] * cy + Rj[c, 0, 2] * cz
            rcy = pj_l[c, 1] + Rj[c, 1, 0] * cx + Rj[c, 1, 1] * cy + Rj[c, 1, 2] * cz
            rcz = pj_l[c, 2] + Rj[c, 2, 0] * cx + Rj[c, 2, 1] * cy + Rj[c, 2, 2] * cz
            # Iw = R I R^T
            t00 = Rj[c, 0, 0] * inertia[j, 0, 0] + Rj[c, 0, 1] * inertia[j, 1, 0] + Rj[c, 0, 2] * inertia[j, 2, 0]
            t01 = Rj[c, 0, 0] * inertia[j, 0, 1] + Rj[c, 0, 1] * inertia[j, 1, 1] + Rj[c, 0, 2] * inertia[j, 2, 1]
            t02 = Rj[c, 0, 0] * inertia[j, 0, 2] + Rj[c, 0, 1] * inertia[j, 1, 2] + Rj[c, 0, 2] * inertia[j, 2, 2]
            t10 = Rj[c, 1, 0] * inertia[j, 0, 0] + Rj[c, 1, 1] * inertia[j, 1, 0] + Rj[c, 1, 2] * inertia[j, 2, 0]
            t11 = Rj[c, 1, 0] * inertia[j, 0, 1] + Rj[c, 1, 1] * inertia[j, 1, 1] + Rj[c, 1, 2] * inertia[j, 2, 1]
            t12 = Rj[c, 1, 0] * inertia[j, 0, 2] + Rj[c, 1, 1] * inertia[j, 1, 2] + Rj[c, 1, 2] * inertia[j, 2, 2]
            t20 = Rj[c, 2, 0] * inertia[j, 0, 0] + Rj[c, 2, 1] * inertia[j, 1, 0] + Rj[c, 2, 2] * inertia[j, 2, 0]
            t21 = Rj[c, 2, 0] * inertia[j, 0, 1] + Rj[c, 2, 1] * inertia[j, 1, 1] + Rj[c, 2, 2] * inertia[j, 2, 1]
            t22 = Rj[c, 2, 0] * inertia[j, 0, 2] + Rj[c, 2, 1] * inertia[j, 1, 2] + Rj[c, 2, 2] * inertia[j, 2, 2]
            i00 = t00 * Rj[c, 0, 0] + t01 * Rj[c, 0, 1] + t02 * Rj[c, 0, 2]
            i01 = t00 * Rj[c, 1, 0] + t01 * Rj[c, 1, 1] + t02 * Rj[c, 1, 2]
            i02 = t00 * Rj[c, 2, 0] + t01 * Rj[c, 2, 1] + t02 * Rj[c, 2, 2]
            i10 = t10 * Rj[c, 0, 0] + t11 * Rj[c, 0, 1] + t12 * Rj[c, 0, 2]
            i11 = t10 * Rj[c, 1, 0] + t11 * Rj[c, 1, 1] + t12 * Rj[c, 1, 2]
            i12 = t10 * Rj[c, 2, 0] + t11 * Rj[c, 2, 1] + t12 * Rj[c, 2, 2]
            i20 = t20 * Rj[c, 0, 0] + t21 * Rj[c, 0, 1] + t22 * Rj[c, 0, 2]
            i21 = t20 * Rj[c, 1, 0] + t21 * Rj[c, 1, 1] + t22 * Rj[c, 1, 2]
            i22 = t20 * Rj[c, 2, 0] + t21 * Rj[c, 2, 1] + t22 * Rj[c, 2, 2]
            m = mass[j]
            for cc in range(c + 1):
                ax = aw[cc, 0]
                ay = aw[cc, 1]
                az = aw[cc, 2]
                dx = rcx - pj_l[cc, 0]
                dy = rcy - pj_l[cc, 1]
                dz = rcz - pj_l[cc, 2]
                lx = (ay * dz - az * dy) * m
                ly = (az * dx - ax * dz) * m
                lz = (ax * dy - ay * dx) * m
                gx = rcx - p_b[0]
                gy = rcy - p_b[1]
                gz = rcz - p_b[2]
                Hbm[0, cc] += lx
                Hbm[1, cc] += ly
                Hbm[2, cc] += lz
                Hbm[3, cc] += i00 * ax + i01 * ay + i02 * az + gy * lz - gz * ly
                Hbm[4, cc] += i10 * ax + i11 * ay + i12 * az + gz * lx - gx * lz
                Hbm[5, cc] += i20 * ax + i21 * ay + i22 * az + gx * ly - gy * lx
        for i in range(6):
            acc = 0.0
            for c in range(k):
                acc += Hbm[i, c] * rates[s, c]
            L[s, i] = acc
    # momentum rate by central differences
    j1max = 0.0
    for s in range(nsamp):
        nrm = 0.0
        for i in range(6):
            if s == 0:
                ld = (L[1, i] - L[0, i]) / dt
            elif s == nsamp - 1:
                ld = (L[nsamp - 1, i] - L[nsamp - 2, i]) / dt
            else:
                ld = (L[s + 1, i] - L[s - 1, i]) / (2.0 * dt)
            nrm += ld * ld
        nrm = np.sqrt(nrm)
        if nrm > j1max:
            j1max = nrm
    hmax = heights[0]
    hsum = 0.0
    for s in range(nsamp):
        if heights[s] > hmax:
            hmax = heights[s]
        hsum += heights[s]
    hmean = hsum / nsamp
    J1 = k1 * j1max
    J2 = k2 * abs(h - hmax) + k3 * abs(h - hmean)
    return J1, J2, J1 + J2, True


@_jit
def mass_matrix(parent, mass, rcom, Iw, pj, axw, p_b,
                base_mass, rcom_b, Iwb, n):
    """Generalized mass matrix for u = [v_b, w_b, joint rates].

    Per body only the supporting DOF columns (base six plus ancestor
    joints) are assembled, as small dense blocks scattered into H.
    """
    nu = 6 + n
    H = np.zeros((nu, nu))
    maxs = 6 + n
    idx = np.empty(maxs, dtype=np.int64)
    Jl = np.empty((maxs, 3))
    Ja = np.empty((maxs, 3))
    B = np.empty((maxs, 3))   # Iw @ Ja rows
    for body in range(n + 1):
        if body == 0:
            m = base_mass
            c = rcom_b - p_b
            Ib = Iwb
            r = rcom_b
        else:
            m = mass[body - 1]
            c = rcom[body - 1] - p_b
            Ib = Iw[body - 1]
            r = rcom[body - 1]
        # base translation columns
        for i in range(3):
            idx[i] = i
            for d in range(3):
                Jl[i, d] = 1.0 if d == i else 0.0
                Ja[i, d] = 0.0
        # base rotation columns: Jl = e_i x c, Ja = e_i
        # e_0 x c = (0, -c2, c1); e_1 x c = (c2, 0, -c0); e_2 x c = (-c1, c0, 0)
        idx[3] = 3
        Jl[3, 0] = 0.0
        Jl[3, 1] = -c[2]
        Jl[3, 2] = c[1]
        idx[4] = 4
        Jl[4, 0] = c[2]
        Jl[4, 1] = 0.0
        Jl[4, 2] = -c[0]
        idx[5] = 5
        Jl[5, 0] = -c[1]
        Jl[5, 1] = c[0]
        Jl[5, 2] = 0.0
        for i in range(3):
            for d in range(3):
                Ja[3 + i, d] = 1.0 if d == i else 0.0
        s = 6
        if body > 0:
            a = body - 1
            while a >= 0:
                lever = _cross(axw[a], r - pj[a])
                idx[s] = 6 + a
                for d in range(3):
                    Jl[s, d] = lever[d]
                    Ja[s, d] = axw[a][d]
                s += 1
                a = parent[a]
        for i in range(s):
            for d in range(3):
                B[i, d] = Ib[d, 0] * Ja[i, 0] + Ib[d, 1] * Ja[i, 1] + Ib[d, 2] * Ja[i, 2]
        for i in range(s):
            for j in range(i, s):
                v = m * (Jl[i, 0] * Jl[j, 0] + Jl[i, 1] * Jl[j, 1] + Jl[i, 2] * Jl[j, 2]) \
                    + Ja[i, 0] * B[j, 0] + Ja[i, 1] * B[j, 1] + Ja[i, 2] * B[j, 2]
                H[idx[i], idx[j]] += v
                if i != j:
                    H[idx[j], idx[i]] += v
    return H


@_jit
def bias_forces(parent, mass, rcom, Iw, pj, axw, p_b,
                base_mass, rcom_b, Iwb,
                v_b, w_b, phid, w, vo, n):
    """Velocity-product generalized forces C(q, u) (appear on the LHS:
    H u_dot + C = Q)."""
    nu = 6 + n
    C = np.zeros(nu)
    # per-link velocity-product accelerations
    wd = np.empty((n, 3))   # angular accel with u_dot = 0
    ao = np.empty((n, 3))   # joint-origin accel with u_dot = 0
    for i in range(n):
        par = parent[i]
        if par < 0:
            wp = w_b
            wdp = np.zeros(3)
            aop = np.zeros(3)
            dp = pj[i] - p_b
        else:
            wp = w[par]
            wdp = wd[par]
            aop = ao[par]
            dp = pj[i] - pj[par]
        ao[i] = aop + _cross(wdp, dp) + _cross(wp, _cross(wp, dp))
        wd[i] = wdp + _cross(wp, axw[i]) * phid[i]
    # base body inertial forces (v_b, w_b constant => only centripetal)
    cb = rcom_b - p_b
    acb = _cross(w_b, _cross(w_b, cb))
    Fb = base_mass * acb
    Nb = _cross(w_b, Iwb @ w_b)
    C[0:3] += Fb
    C[3:6] += Nb + _cross(cb, Fb)
    for link in range(n):
        d = rcom[link] - pj[link]
        acom = ao[link] + _cross(wd[link], d) + _cross(w[link], _cross(w[link], d))
        F = mass[link] * acom
        N = Iw[link] @ wd[link] + _cross(w[link], Iw[link] @ w[link])
        C[0:3] += F
        rr = rcom[link] - p_b
        C[3:6] += N + _cross(rr, F)
        a = link
        while a >= 0:
            lever = _cross(axw[a], rcom[link] - pj[a])
            C[6 + a] += axw[a][0] * N[0] + axw[a][1] * N[1] + axw[a][2] * N[2]
            C[6 + a] += lever[0] * F[0] + lever[1] * F[1] + lever[2] * F[2]
            a = parent[a]
    return C


@_jit
def applied_forces(parent, mass, rcom, pj, axw, p_b,
                   base_mass, rcom_b,
                   gravity, tau,
                   limb_start, limb_len, limb_last, ee_off,
                   R, f_contact, attached, n):
    """Generalized forces: gravity on every body, joint torques, and
    contact forces applied at limb tips."""
    nu = 6 + n
    Q = np.zeros(nu)
    # gravity
    Fb = base_mass * gravity
    Q[0:3] += Fb
    Q[3:6] += _cross(rcom_b - p_b, Fb)
    for link in range(n):
        F = mass[link] * gravity
        Q[0:3] += F
        Q[3:6] += _cross(rcom[link] - p_b, F)
        a = link
        while a >= 0:
            lever = _cross(axw[a], rcom[link] - pj[a])
            Q[6 + a] += lever[0] * F[0] + lever[1] * F[1] + lever[2] * F[2]
            a = parent[a]
    # joint torques
    for j in range(n):
        Q[6 + j] += tau[j]
    # contact forces at tips
    nl = limb_start.shape[0]
    for l in range(nl):
        if attached[l] == 0:
            continue
        f = f_contact[l]
        last = limb_last[l]
        tip = pj[last] + R[last] @ ee_off[l]
        Q[0:3] += f
        Q[3:6] += _cross(tip - p_b, f)
        for c in range(limb_len[l]):
            j = limb_start[l] + c
            lever = _cross(axw[j], tip - pj[j])
            Q[6 + j] += lever[0] * f[0] + lever[1] * f[1] + lever[2] * f[2]
    return Q


@_jit
def _accel_core(parent, axis, offset, com, mass, inertia,
                base_mass, base_com, base_inertia,
                limb_start, limb_len, limb_last, ee_off, free_dofs,
                q, u, tau, k_c, c_c, attached, anchors, gravity):
    """Shared dynamics evaluation: one FK pass feeding contact forces and
    the generalized-acceleration solve.  Returns (udot, per-limb forces)."""
    n = parent.shape[0]
    p_b = q[0:3]
    R_b = _quat_to_rot(q[3:7])
    phi = q[7:]
    v_b = u[0:3]
    w_b = u[3:6]
    phid = u[6:]
    R, pj, axw, rcom = fk(parent, axis, offset, com, phi, p_b, R_b)
    w, vo, vcom = link_velocities(parent, pj, axw, rcom, v_b, w_b, p_b, phid)
    Iw, Iwb = world_inertias(R, inertia, R_b, base_inertia)
    rcom_b = p_b + R_b @ base_com
    nl = limb_last.shape[0]
    f = np.zeros((nl, 3))
    for l in range(nl):
        if attached[l] == 1:
            last = limb_last[l]
            tip = pj[last] + R[last] @ ee_off[l]
            tv = vo[last] + _cross(w[last], tip - pj[last])
            for i in range(3):
                f[l, i] = -k_c * (tip[i] - anchors[l, i]) - c_c * tv[i]
    H = mass_matrix(parent, mass, rcom, Iw, pj, axw, p_b, base_mass, rcom_b, Iwb, n)
    C = bias_forces(parent, mass, rcom, Iw, pj, axw, p_b,
                    base_mass, rcom_b, Iwb, v_b, w_b, phid, w, vo, n)
    Q = applied_forces(parent, mass, rcom, pj, axw, p_b, base_mass, rcom_b,
                       gravity, tau, limb_start, limb_len, limb_last, ee_off,
                       R, f, attached, n)
    rhs = Q - C
    nf = free_dofs.shape[0]
    Hr = np.empty((nf, nf))
    br = np.empty(nf)
    ok = True
    for i in range(nf):
        br[i] = rhs[free_dofs[i]]
        if not np.isfinite(br[i]):
            ok = False
        for jj in range(nf):
            Hr[i, jj] = H[free_dofs[i], free_dofs[jj]]
            if not np.isfinite(Hr[i, jj]):
                ok = False
    udot = np.zeros(6 + n)
    if not ok:
        # poison the state instead of tripping the LAPACK finiteness check;
        # the integrator's blowup detection then terminates the run
        for i in range(nf):
            udot[free_dofs[i]] = np.nan
        return udot, f
    x = np.linalg.solve(Hr, br)
    for i in range(nf):
        udot[free_dofs[i]] = x[i]
    return udot, f


@_jit
def forward_dynamics(parent, axis, offset, com, mass, inertia,
                     base_mass, base_com, base_inertia,
                     limb_start, limb_len, limb_last, ee_off,
                     free_dofs,
                     q, u, tau, f_contact, attached, gravity):
    """Generalized accelerations for state (q, u) under joint torques,
    per-limb tip contact forces (given explicitly) and gravity.

    q = [p_b(3), quat(4), phi(n)], u = [v_b(3), w_b(3), phid(n)].
    Non-free base DOFs (planar mode) are held at zero acceleration.
    """
    n = parent.shape[0]
    p_b = q[0:3]
    R_b = _quat_to_rot(q[3:7])
    phi = q[7:]
    v_b = u[0:3]
    w_b = u[3:6]
    phid = u[6:]
    R, pj, axw, rcom = fk(parent, axis, offset, com, phi, p_b, R_b)
    w, vo, vcom = link_velocities(parent, pj, axw, rcom, v_b, w_b, p_b, phid)
    Iw, Iwb = world_inertias(R, inertia, R_b, base_inertia)
    rcom_b = p_b + R_b @ base_com
    H = mass_matrix(parent, mass, rcom, Iw, pj, axw, p_b, base_mass, rcom_b, Iwb, n)
    C = bias_forces(parent, mass, rcom, Iw, pj, axw, p_b,
                    base_mass, rcom_b, Iwb, v_b, w_b, phid, w, vo, n)
    Q = applied_forces(parent, mass, rcom, pj, axw, p_b, base_mass, rcom_b,
                       gravity, tau, limb_start, limb_len, limb_last, ee_off,
                       R, f_contact, attached, n)
    rhs = Q - C
    nf = free_dofs.shape[0]
    Hr = np.empty((nf, nf))
    br = np.empty(nf)
    for i in range(nf):
        br[i] = rhs[free_dofs[i]]
        for jj in range(nf):
            Hr[i, jj] = H[free_dofs[i], free_dofs[jj]]
    x = np.linalg.solve(Hr, br)
    udot = np.zeros(6 + n)
    for i in range(nf):
        udot[free_dofs[i]] = x[i]
    return udot


@_jit
def tip_states(parent, axis, offset, com, q, u, limb_last, ee_off):
    """Tip position and velocity of every limb for the current state."""
    n = parent.shape[0]
    p_b = q[0:3]
    R_b = _quat_to_rot(q[3:7])
    phi = q[7:]
    v_b = u[0:3]
    w_b = u[3:6]
    phid = u[6:]
    R, pj, axw, rcom = fk(parent, axis, offset, com, phi, p_b, R_b)
    w, vo, vcom = link_velocities(parent, pj, axw, rcom, v_b, w_b, p_b, phid)
    nl = limb_last.shape[0]
    tips = np.empty((nl, 3))
    tipv = np.empty((nl, 3))
    for l in range(nl):
        last = limb_last[l]
        tip = pj[last] + R[last] @ ee_off[l]
        tips[l] = tip
        tipv[l] = vo[last] + _cross(w[last], tip - pj[last])
    return tips, tipv


@_jit
def _contact_forces(tips, tipv, attached, anchors, k_c, c_c, nl):
    f = np.zeros((nl, 3))
    for l in range(nl):
        if attached[l] == 1:
            for i in range(3):
                f[l, i] = -k_c * (tips[l, i] - anchors[l, i]) - c_c * tipv[l, i]
    return f


@_jit
def _ref_interp(t, plan_t0, plan_dt, ref_q, ref_qd, n):
    """Linear interpolation of the plan's joint references, clamped to the
    plan window."""
    npts = ref_q.shape[0]
    s = (t - plan_t0) / plan_dt
    if s <= 0.0:
        i0 = 0
        frac = 0.0
    elif s >= npts - 1:
        i0 = npts - 2
        frac = 1.0
    else:
        i0 = int(s)
        frac = s - i0
    qr = np.empty(n)
    qdr = np.empty(n)
    for j in range(n):
        qr[j] = ref_q[i0, j] * (1.0 - frac) + ref_q[i0 + 1, j] * frac
        qdr[j] = ref_qd[i0, j] * (1.0 - frac) + ref_qd[i0 + 1, j] * frac
    return qr, qdr


@_jit
def _deriv(t, q, u,
           parent, axis, offset, com, mass, inertia,
           base_mass, base_com, base_inertia,
           limb_start, limb_len, limb_last, ee_off, free_dofs,
           plan_t0, plan_dt, ref_q, ref_qd, kp, kd,
           attached, anchors, k_c, c_c, gravity):
    n = parent.shape[0]
    qr, qdr = _ref_interp(t, plan_t0, plan_dt, ref_q, ref_qd, n)
    tau = np.empty(n)
    for j in range(n):
        tau[j] = kp[j] * (qr[j] - q[7 + j]) + kd[j] * (qdr[j] - u[6 + j])
    udot, f = _accel_core(parent, axis, offset, com, mass, inertia,
                          base_mass, base_com, base_inertia,
                          limb_start, limb_len, limb_last, ee_off, free_dofs,
                          q, u, tau, k_c, c_c, attached, anchors, gravity)
    qdot = np.empty(q.shape[0])
    qdot[0] = u[0]
    qdot[1] = u[1]
    qdot[2] = u[2]
    # quaternion rate for world angular velocity: 0.5 * (0, w) * quat
    qw, qx, qy, qz = q[3], q[4], q[5], q[6]
    wx, wy, wz = u[3], u[4], u[5]
    qdot[3] = 0.5 * (-wx * qx - wy * qy - wz * qz)
    qdot[4] = 0.5 * (wx * qw + wy * qz - wz * qy)
    qdot[5] = 0.5 * (wy * qw + wz * qx - wx * qz)
    qdot[6] = 0.5 * (wz * qw + wx * qy - wy * qx)
    for j in range(n):
        qdot[7 + j] = u[6 + j]
    return qdot, udot


@_jit
def rk4_step(t, q, u, dt,
             parent, axis, offset, com, mass, inertia,
             base_mass, base_com, base_inertia,
             limb_start, limb_len, limb_last, ee_off, free_dofs,
             plan_t0, plan_dt, ref_q, ref_qd, kp, kd,
             attached, anchors, k_c, c_c, gravity):
    """Classic fourth-order step; contact attachment and anchors are held
    fixed across the substeps.  The quaternion is renormalized at the end."""
    k1q, k1u = _deriv(t, q, u, parent, axis, offset, com, mass, inertia,
                      base_mass, base_com, base_inertia,
                      limb_start, limb_len, limb_last, ee_off, free_dofs,
                      plan_t0, plan_dt, ref_q, ref_qd, kp, kd,
                      attached, anchors, k_c, c_c, gravity)
    k2q, k2u = _deriv(t + 0.5 * dt, q + 0.5 * dt * k1q, u + 0.5 * dt * k1u,
                      parent, axis, offset, com, mass, inertia,
                      base_mass, base_com, base_inertia,
                      limb_start, limb_len, limb_last, ee_off, free_dofs,
                      plan_t0, plan_dt, ref_q, ref_qd, kp, kd,
                      attached, anchors, k_c, c_c, gravity)
    k3q, k3u = _deriv(t + 0.5 * dt, q + 0.5 * dt * k2q, u + 0.5 * dt * k2u,
                      parent, axis, offset, com, mass, inertia,
                      base_mass, base_com, base_inertia,
                      limb_start, limb_len, limb_last, ee_off, free_dofs,
                      plan_t0, plan_dt, ref_q, ref_qd, kp, kd,
                      attached, anchors, k_c, c_c, gravity)
    k4q, k4u = _deriv(t + dt, q + dt * k3q, u + dt * k3u,
                      parent, axis, offset, com, mass, inertia,
                      base_mass, base_com, base_inertia,
                      limb_start, limb_len, limb_last, ee_off, free_dofs,
                      plan_t0, plan_dt, ref_q, ref_qd, kp, kd,
                      attached, anchors, k_c, c_c, gravity)
    qn = q + (dt / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
    un = u + (dt / 6.0) * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
    qnorm = np.sqrt(qn[3] ** 2 + qn[4] ** 2 + qn[5] ** 2 + qn[6] ** 2)
    for i in range(4):
        qn[3 + i] /= qnorm
    return qn, un


@_jit
def state_momentum_world(parent, axis, offset, com, mass, inertia,
                         base_mass, base_com, base_inertia, q, u):
    n = parent.shape[0]
    p_b = q[0:3]
    R_b = _quat_to_rot(q[3:7])
    phi = q[7:]
    v_b = u[0:3]
    w_b = u[3:6]
    phid = u[6:]
    R, pj, axw, rcom = fk(parent, axis, offset, com, phi, p_b, R_b)
    w, vo, vcom = link_velocities(parent, pj, axw, rcom, v_b, w_b, p_b, phid)
    Iw, Iwb = world_inertias(R, inertia, R_b, base_inertia)
    rcom_b = p_b + R_b @ base_com
    return momentum_world_origin(parent, mass, rcom, Iw, vcom, w,
                                 base_mass, rcom_b, Iwb, v_b, w_b, p_b)


@_jit
def _deriv_tau(t, q, u,
               parent, axis, offset, com, mass, inertia,
               base_mass, base_com, base_inertia,
               limb_start, limb_len, limb_last, ee_off, free_dofs,
               tau, attached, anchors, k_c, c_c, gravity):
    """State derivative under fixed joint torques (no controller)."""
    n = parent.shape[0]
    udot, f = _accel_core(parent, axis, offset, com, mass, inertia,
                          base_mass, base_com, base_inertia,
                          limb_start, limb_len, limb_last, ee_off, free_dofs,
                          q, u, tau, k_c, c_c, attached, anchors, gravity)
    qdot = np.empty(q.shape[0])
    qdot[0] = u[0]
    qdot[1] = u[1]
    qdot[2] = u[2]
    qw, qx, qy, qz = q[3], q[4], q[5], q[6]
    wx, wy, wz = u[3], u[4], u[5]
    qdot[3] = 0.5 * (-wx * qx - wy * qy - wz * qz)
    qdot[4] = 0.5 * (wx * qw + wy * qz - wz * qy)
    qdot[5] = 0.5 * (wy * qw + wz * qx - wx * qz)
    qdot[6] = 0.5 * (wz * qw + wx * qy - wy * qx)
    for j in range(n):
        qdot[7 + j] = u[6 + j]
    return qdot, udot


@_jit
def rk4_step_tau(t, q, u, dt,
                 parent, axis, offset, com, mass, inertia,
                 base_mass, base_com, base_inertia,
                 limb_start, limb_len, limb_last, ee_off, free_dofs,
                 tau, attached, anchors, k_c, c_c, gravity):
    """Fourth-order step with torques held constant across the substeps."""
    k1q, k1u = _deriv_tau(t, q, u, parent, axis, offset, com, mass, inertia,
                          base_mass, base_com, base_inertia,
                          limb_start, limb_len, limb_last, ee_off, free_dofs,
                          tau, attached, anchors, k_c, c_c, gravity)
    k2q, k2u = _deriv_tau(t + 0.5 * dt, q + 0.5 * dt * k1q, u + 0.5 * dt * k1u,
                          parent, axis, offset, com, mass, inertia,
                          base_mass, base_com, base_inertia,
                          limb_start, limb_len, limb_last, ee_off, free_dofs,
                          tau, attached, anchors, k_c, c_c, gravity)
    k3q, k3u = _deriv_tau(t + 0.5 * dt, q + 0.5 * dt * k2q, u + 0.5 * dt * k2u,
                          parent, axis, offset, com, mass, inertia,
                          base_mass, base_com, base_inertia,
                          limb_start, limb_len, limb_last, ee_off, free_dofs,
                          tau, attached, anchors, k_c, c_c, gravity)
    k4q, k4u = _deriv_tau(t + dt, q + dt * k3q, u + dt * k3u,
                          parent, axis, offset, com, mass, inertia,
                          base_mass, base_com, base_inertia,
                          limb_start, limb_len, limb_last, ee_off, free_dofs,
                          tau, attached, anchors, k_c, c_c, gravity)
    qn = q + (dt / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
    un = u + (dt / 6.0) * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
    qnorm = np.sqrt(qn[3] ** 2 + qn[4] ** 2 + qn[5] ** 2 + qn[6] ** 2)
    for i in range(4):
        qn[3 + i] /= qnorm
    return qn, un


# termination codes returned by run_span
TERM_COMPLETED = 0
TERM_GOAL = 1
TERM_DETACHED = 2
TERM_BLOWUP = 3


@_jit
def run_span(parent, axis, offset, com, mass, inertia,
             base_mass, base_com, base_inertia,
             limb_start, limb_len, limb_last, ee_off, free_dofs,
             q, u, t_start,
             plan_t0, plan_dt, ref_q, ref_qd, kp, kd,
             attached, anchors, normals, k_c, c_c, holding,
             ev_time, ev_limb, ev_kind,
             dt, n_steps, gravity, goal_axis, goal_disp, grace, log_every,
             log_t, log_q, log_u, log_f, log_mom, log_ten, log_att,
             det_time, det_limb, det_tension,
             stats):
    """Integrate the closed-loop system and handle contact events.

    Per full step: scheduled release/attach events are applied (attach
    anchors at the current tip position), then every attached contact is
    checked for tensile overload and detached when the pull along the
    surface normal exceeds its holding force.  The first force-triggered
    detachment marks the run failed; simulation then coasts `grace`
    seconds to exhibit the resulting flotation and stops.

    Force statistics (per contact: max tension, max/sum force norm, sample
    count, max/sum moment norm) accumulate at full rate in `stats`; the
    log arrays receive every `log_every`-th step plus every detachment
    step.  Returns (termination code, time, rows logged, detach count).
    """
    n = parent.shape[0]
    nl = limb_last.shape[0]
    t = t_start
    p0 = q[0:3].copy()
    ev_i = 0
    n_ev = ev_time.shape[0]
    rows = 0
    ndet = 0
    failed = False
    float_until = 0.0
    term = TERM_COMPLETED
    term_t = t_start + n_steps * dt

    # apply events scheduled at or before the start time
    while ev_i < n_ev and ev_time[ev_i] <= t + 1e-12:
        l = ev_limb[ev_i]
        if ev_kind[ev_i] == 1:
            tips0, _ = tip_states(parent, axis, offset, com, q, u, limb_last, ee_off)
            anchors[l] = tips0[l]
            attached[l] = 1
        else:
            attached[l] = 0
        ev_i += 1

    def_log = log_every if log_every > 0 else 1

    for istep in range(n_steps):
        qn, un = rk4_step(t, q, u, dt,
                          parent, axis, offset, com, mass, inertia,
                          base_mass, base_com, base_inertia,
                          limb_start, limb_len, limb_last, ee_off, free_dofs,
                          plan_t0, plan_dt, ref_q, ref_qd, kp, kd,
                          attached, anchors, k_c, c_c, gravity)
        q = qn
        u = un
        t = t_start + (istep + 1) * dt

        finite = True
        for i in range(q.shape[0]):
            if not np.isfinite(q[i]) or abs(q[i]) > 1e8:
                finite = False
        for i in range(u.shape[0]):
            if not np.isfinite(u[i]) or abs(u[i]) > 1e8:
                finite = False
        if not finite:
            term = TERM_BLOWUP
            term_t = t
            break

        # scheduled contact events
        while ev_i < n_ev and ev_time[ev_i] <= t + 1e-12:
            l = ev_limb[ev_i]
            if ev_kind[ev_i] == 1:
                tips0, _ = tip_states(parent, axis, offset, com, q, u, limb_last, ee_off)
                anchors[l] = tips0[l]
                attached[l] = 1
            else:
                attached[l] = 0
            ev_i += 1

        # contact forces at the new state: stats + detachment check
        tips, tipv = tip_states(parent, axis, offset, com, q, u, limb_last, ee_off)
        f = _contact_forces(tips, tipv, attached, anchors, k_c, c_c, nl)
        detached_now = False
        for l in range(nl):
            if attached[l] == 0:
                continue
            # tension: pull transmitted to the anchor along the surface normal
            ten = 0.0
            for i in range(3):
                ten += normals[l, i] * (-f[l, i])
            fn = np.sqrt(f[l, 0] ** 2 + f[l, 1] ** 2 + f[l, 2] ** 2)
            mom = _cross(tips[l] - q[0:3], f[l])
            mn = np.sqrt(mom[0] ** 2 + mom[1] ** 2 + mom[2] ** 2)
            if ten > stats[l, 0]:
                stats[l, 0] = ten
            if fn > stats[l, 1]:
                stats[l, 1] = fn
            stats[l, 2] += fn
            stats[l, 3] += 1.0
            if mn > stats[l, 4]:
                stats[l, 4] = mn
            stats[l, 5] += mn
            if ten > holding[l]:
                attached[l] = 0
                if ndet < det_time.shape[0]:
                    det_time[ndet] = t
                    det_limb[ndet] = l
                    det_tension[ndet] = ten
                    ndet += 1
                detached_now = True
                if not failed:
                    failed = True
                    float_until = t + grace
        if detached_now:
            # recompute forces with the detached contact removed for logging
            f = _contact_forces(tips, tipv, attached, anchors, k_c, c_c, nl)

        do_log = (istep + 1) % def_log == 0 or detached_now
        if do_log and rows < log_t.shape[0]:
            log_t[rows] = t
            for i in range(q.shape[0]):
                log_q[rows, i] = q[i]
            for i in range(u.shape[0]):
                log_u[rows, i] = u[i]
            for l in range(nl):
                for i in range(3):
                    log_f[rows, 3 * l + i] = f[l, i]
                ten = 0.0
                for i in range(3):
                    ten += normals[l, i] * (-f[l, i])
                log_ten[rows, l] = ten if attached[l] == 1 else 0.0
                log_att[rows, l] = 1.0 if attached[l] == 1 else 0.0
            mom = state_momentum_world(parent, axis, offset, com, mass, inertia,
                                       base_mass, base_com, base_inertia, q, u)
            for i in range(6):
                log_mom[rows, i] = mom[i]
            rows += 1

        if failed and t >= float_until:
            term = TERM_DETACHED
            term_t = t
            break

        if not failed and goal_disp > 0.0:
            adv = 0.0
            for i in range(3):
                adv += (q[i] - p0[i]) * goal_axis[i]
            if adv >= goal_disp:
                term = TERM_GOAL
                term_t = t
                break

    return term, term_t, rows, ndet, q, u
