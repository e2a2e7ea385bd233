"""Numba kernels for the simulation hot path and its adjoint.

One forward kernel advances a whole frame interval (all substeps) in place,
recording the object state at every substep boundary. The backward kernel
re-derives each substep's intermediates from the recorded states (bit-exact:
same expressions in the same order as the forward kernel) and accumulates
adjoints for spring parameters and controller frames.

The numpy implementations in sim.py (internal_forces, spring_force) stay as
the readable reference; equivalence is covered by tests.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

LENGTH_GUARD = 1e-9
BLOWUP_LIMIT = 1e9


@njit(cache=True)
def run_interval(
    x,  # (n_nodes, 3) in-out
    v,  # (n_nodes, 3) in-out
    i_idx,
    j_idx,
    stiffness,
    damping,
    rest,
    masses,  # (n_nodes,)
    n_obj,
    gravity,  # (3,)
    dt,
    ground_h,
    friction,
    restitution,
    ctl_start,  # (n_ctl, 3)
    ctl_next,  # (n_ctl, 3)
    frame_dt,
    substeps,
    xs_out,  # (substeps, n_obj, 3) object positions after each substep
    vs_out,
):
    """Advance one frame interval. Returns -1 or the diverging local substep."""
    n_ctl = ctl_start.shape[0]
    n_springs = i_idx.shape[0]
    seg = np.empty((n_ctl, 3))
    for c in range(n_ctl):
        for a in range(3):
            seg[c, a] = ctl_next[c, a] - ctl_start[c, a]
            x[n_obj + c, a] = ctl_start[c, a]
            v[n_obj + c, a] = seg[c, a] / frame_dt
    forces = np.empty((n_obj, 3))
    for k in range(substeps):
        for i in range(n_obj):
            forces[i, 0] = 0.0
            forces[i, 1] = 0.0
            forces[i, 2] = 0.0
        for s in range(n_springs):
            a = i_idx[s]
            b = j_idx[s]
            dx = x[b, 0] - x[a, 0]
            dy = x[b, 1] - x[a, 1]
            dz = x[b, 2] - x[a, 2]
            length = math.sqrt(dx * dx + dy * dy + dz * dz)
            if length > LENGTH_GUARD:
                coeff = stiffness[s] * (length - rest[s]) / length
            else:
                coeff = 0.0
            fx = coeff * dx - damping[s] * (v[a, 0] - v[b, 0])
            fy = coeff * dy - damping[s] * (v[a, 1] - v[b, 1])
            fz = coeff * dz - damping[s] * (v[a, 2] - v[b, 2])
            if a < n_obj:
                forces[a, 0] += fx
                forces[a, 1] += fy
                forces[a, 2] += fz
            if b < n_obj:
                forces[b, 0] -= fx
                forces[b, 1] -= fy
                forces[b, 2] -= fz
        ok = True
        for i in range(n_obj):
            m = masses[i]
            for a in range(3):
                vn = v[i, a] + dt * (forces[i, a] + m * gravity[a]) / m
                v[i, a] = vn
                x[i, a] = x[i, a] + dt * vn
            if x[i, 2] < ground_h:
                x[i, 2] = ground_h
                v[i, 2] *= -restitution
                v[i, 0] *= friction
                v[i, 1] *= friction
            for a in range(3):
                if not math.isfinite(x[i, a]) or abs(x[i, a]) > BLOWUP_LIMIT:
                    ok = False
                if not math.isfinite(v[i, a]):
                    ok = False
        if not ok:
            return k
        if k == substeps - 1:
            for c in range(n_ctl):
                for a in range(3):
                    x[n_obj + c, a] = ctl_next[c, a]
        else:
            frac = (k + 1) / substeps
            for c in range(n_ctl):
                for a in range(3):
                    x[n_obj + c, a] = ctl_start[c, a] + frac * seg[c, a]
        for i in range(n_obj):
            for a in range(3):
                xs_out[k, i, a] = x[i, a]
                vs_out[k, i, a] = v[i, a]
    return -1


@njit(cache=True)
def backward_interval(
    xs,  # (substeps + 1, n_obj, 3): object states entering each substep, plus the last output
    vs,
    ctl_start,
    ctl_next,
    i_idx,
    j_idx,
    stiffness,
    damping,
    rest,
    masses,
    n_obj,
    gravity,
    dt,
    ground_h,
    friction,
    restitution,
    frame_dt,
    substeps,
    want_params,
    want_controller,
    xb,  # (n_obj, 3) in-out: adjoint of the interval's final object positions
    vb,
    ds_raw,  # (n_springs,) in-out
    dg_raw,
    ctl_grad_t,  # (n_ctl, 3) in-out
    ctl_grad_t1,
):
    """Reverse one frame interval, updating xb/vb to the interval-start adjoints."""
    n_ctl = ctl_start.shape[0]
    n_springs = i_idx.shape[0]
    seg = np.empty((n_ctl, 3))
    ctl_vel = np.empty((n_ctl, 3))
    for c in range(n_ctl):
        for a in range(3):
            seg[c, a] = ctl_next[c, a] - ctl_start[c, a]
            ctl_vel[c, a] = seg[c, a] / frame_dt
    ctl_x = np.empty((n_ctl, 3))
    forces = np.empty((n_obj, 3))
    fb_obj = np.empty((n_obj, 3))
    below = np.empty(n_obj, dtype=np.bool_)
    for k in range(substeps - 1, -1, -1):
        # Controller position at this substep's start (bit-exact with forward).
        if k == 0:
            for c in range(n_ctl):
                for a in range(3):
                    ctl_x[c, a] = ctl_start[c, a]
        else:
            frac = k / substeps
            for c in range(n_ctl):
                for a in range(3):
                    ctl_x[c, a] = ctl_start[c, a] + frac * seg[c, a]
        # Recompute the forward substep to recover the ground-contact mask.
        for i in range(n_obj):
            forces[i, 0] = 0.0
            forces[i, 1] = 0.0
            forces[i, 2] = 0.0
        for s in range(n_springs):
            a = i_idx[s]
            b = j_idx[s]
            if a < n_obj:
                ax, ay, az = xs[k, a, 0], xs[k, a, 1], xs[k, a, 2]
                avx, avy, avz = vs[k, a, 0], vs[k, a, 1], vs[k, a, 2]
            else:
                ax, ay, az = ctl_x[a - n_obj, 0], ctl_x[a - n_obj, 1], ctl_x[a - n_obj, 2]
                avx, avy, avz = ctl_vel[a - n_obj, 0], ctl_vel[a - n_obj, 1], ctl_vel[a - n_obj, 2]
            if b < n_obj:
                bx, by, bz = xs[k, b, 0], xs[k, b, 1], xs[k, b, 2]
                bvx, bvy, bvz = vs[k, b, 0], vs[k, b, 1], vs[k, b, 2]
            else:
                bx, by, bz = ctl_x[b - n_obj, 0], ctl_x[b - n_obj, 1], ctl_x[b - n_obj, 2]
                bvx, bvy, bvz = ctl_vel[b - n_obj, 0], ctl_vel[b - n_obj, 1], ctl_vel[b - n_obj, 2]
            dx = bx - ax
            dy = by - ay
            dz = bz - az
            length = math.sqrt(dx * dx + dy * dy + dz * dz)
            if length > LENGTH_GUARD:
                coeff = stiffness[s] * (length - rest[s]) / length
            else:
                coeff = 0.0
            fx = coeff * dx - damping[s] * (avx - bvx)
            fy = coeff * dy - damping[s] * (avy - bvy)
            fz = coeff * dz - damping[s] * (avz - bvz)
            if a < n_obj:
                forces[a, 0] += fx
                forces[a, 1] += fy
                forces[a, 2] += fz
            if b < n_obj:
                forces[b, 0] -= fx
                forces[b, 1] -= fy
                forces[b, 2] -= fz
        for i in range(n_obj):
            m = masses[i]
            zp = xs[k, i, 2] + dt * (vs[k, i, 2] + dt * (forces[i, 2] + m * gravity[2]) / m)
            below[i] = zp < ground_h

        # Ground-response reverse (projection differentiates as a clamp),
        # then integration reverse.
        for i in range(n_obj):
            xb0 = xb[i, 0]
            xb1 = xb[i, 1]
            xb2 = xb[i, 2]
            vb0 = vb[i, 0]
            vb1 = vb[i, 1]
            vb2 = vb[i, 2]
            if below[i]:
                xb2 = 0.0
                vb2 = -restitution * vb2
                vb0 = friction * vb0
                vb1 = friction * vb1
            ve0 = vb0 + dt * xb0
            ve1 = vb1 + dt * xb1
            ve2 = vb2 + dt * xb2
            m = masses[i]
            fb_obj[i, 0] = (dt / m) * ve0
            fb_obj[i, 1] = (dt / m) * ve1
            fb_obj[i, 2] = (dt / m) * ve2
            xb[i, 0] = xb0
            xb[i, 1] = xb1
            xb[i, 2] = xb2
            vb[i, 0] = ve0
            vb[i, 1] = ve1
            vb[i, 2] = ve2

        # Force-accumulation reverse: per spring, route into position/velocity
        # adjoints (object rows) or controller-frame adjoints (boundary rows).
        if k == 0:
            w_t = 1.0
            w_t1 = 0.0
        else:
            w_t1 = k / substeps
            w_t = 1.0 - w_t1
        for s in range(n_springs):
            a = i_idx[s]
            b = j_idx[s]
            if a < n_obj:
                ax, ay, az = xs[k, a, 0], xs[k, a, 1], xs[k, a, 2]
                avx, avy, avz = vs[k, a, 0], vs[k, a, 1], vs[k, a, 2]
                fba0, fba1, fba2 = fb_obj[a, 0], fb_obj[a, 1], fb_obj[a, 2]
            else:
                ax, ay, az = ctl_x[a - n_obj, 0], ctl_x[a - n_obj, 1], ctl_x[a - n_obj, 2]
                avx, avy, avz = ctl_vel[a - n_obj, 0], ctl_vel[a - n_obj, 1], ctl_vel[a - n_obj, 2]
                fba0 = fba1 = fba2 = 0.0
            if b < n_obj:
                bx, by, bz = xs[k, b, 0], xs[k, b, 1], xs[k, b, 2]
                bvx, bvy, bvz = vs[k, b, 0], vs[k, b, 1], vs[k, b, 2]
                fbb0, fbb1, fbb2 = fb_obj[b, 0], fb_obj[b, 1], fb_obj[b, 2]
            else:
                bx, by, bz = ctl_x[b - n_obj, 0], ctl_x[b - n_obj, 1], ctl_x[b - n_obj, 2]
                bvx, bvy, bvz = ctl_vel[b - n_obj, 0], ctl_vel[b - n_obj, 1], ctl_vel[b - n_obj, 2]
                fbb0 = fbb1 = fbb2 = 0.0
            fb0 = fba0 - fbb0
            fb1 = fba1 - fbb1
            fb2 = fba2 - fbb2
            if fb0 == 0.0 and fb1 == 0.0 and fb2 == 0.0:
                continue
            rvx = avx - bvx
            rvy = avy - bvy
            rvz = avz - bvz
            if want_params:
                dg_raw[s] -= fb0 * rvx + fb1 * rvy + fb2 * rvz
            gamma = damping[s]
            # velocity adjoints: d f / d v_i = -gamma, d f / d v_j = +gamma
            gva0 = -gamma * fb0
            gva1 = -gamma * fb1
            gva2 = -gamma * fb2
            dx = bx - ax
            dy = by - ay
            dz = bz - az
            length = math.sqrt(dx * dx + dy * dy + dz * dz)
            db0 = db1 = db2 = 0.0
            if length > LENGTH_GUARD:
                inv = 1.0 / length
                ux = dx * inv
                uy = dy * inv
                uz = dz * inv
                ext = length - rest[s]
                dot_fb_u = fb0 * ux + fb1 * uy + fb2 * uz
                if want_params:
                    ds_raw[s] += ext * dot_fb_u
                se = stiffness[s] * ext
                ub0 = se * fb0
                ub1 = se * fb1
                ub2 = se * fb2
                extb = stiffness[s] * dot_fb_u
                dot_u_ub = ux * ub0 + uy * ub1 + uz * ub2
                db0 = ub0 * inv - ux * dot_u_ub * inv + ux * extb
                db1 = ub1 * inv - uy * dot_u_ub * inv + uy * extb
                db2 = ub2 * inv - uz * dot_u_ub * inv + uz * extb
            if a < n_obj:
                vb[a, 0] += gva0
                vb[a, 1] += gva1
                vb[a, 2] += gva2
                xb[a, 0] -= db0
                xb[a, 1] -= db1
                xb[a, 2] -= db2
            elif want_controller:
                c = a - n_obj
                ctl_grad_t[c, 0] += w_t * (-db0) + (-gva0) / frame_dt
                ctl_grad_t[c, 1] += w_t * (-db1) + (-gva1) / frame_dt
                ctl_grad_t[c, 2] += w_t * (-db2) + (-gva2) / frame_dt
                ctl_grad_t1[c, 0] += w_t1 * (-db0) + gva0 / frame_dt
                ctl_grad_t1[c, 1] += w_t1 * (-db1) + gva1 / frame_dt
                ctl_grad_t1[c, 2] += w_t1 * (-db2) + gva2 / frame_dt
            if b < n_obj:
                vb[b, 0] -= gva0
                vb[b, 1] -= gva1
                vb[b, 2] -= gva2
                xb[b, 0] += db0
                xb[b, 1] += db1
                xb[b, 2] += db2
            elif want_controller:
                c = b - n_obj
                ctl_grad_t[c, 0] += w_t * db0 + gva0 / frame_dt
                ctl_grad_t[c, 1] += w_t * db1 + gva1 / frame_dt
                ctl_grad_t[c, 2] += w_t * db2 + gva2 / frame_dt
                ctl_grad_t1[c, 0] += w_t1 * db0 + (-gva0) / frame_dt
                ctl_grad_t1[c, 1] += w_t1 * db1 + (-gva1) / frame_dt
                ctl_grad_t1[c, 2] += w_t1 * db2 + (-gva2) / frame_dt
