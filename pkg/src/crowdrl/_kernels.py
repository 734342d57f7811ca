"""Compiled inner loops of the physics step.

All functions mutate their array arguments in place. Model codes follow
``MODEL_CODES`` in :mod:`crowdrl.sim`.
"""
import math

import numba as nb
import numpy as np

CARTESIAN_VELOCITY = 0
CARTESIAN_ACCELERATION = 1
POLAR_VELOCITY = 2
POLAR_ACCELERATION = 3

CONTACT_SLOP = 1e-9
MAX_PROJECTION_ITERS = 64


@nb.njit(cache=True)
def wrap(a):
    return math.pi - ((math.pi - a) % (2.0 * math.pi))


@nb.njit(cache=True)
def integrate(pos, vel, ori, actions, model, v_max, a_max, damping, omega_max, dt):
    n = pos.shape[0]
    for i in range(n):
        ax = actions[i, 0]
        ay = actions[i, 1]
        vx = vel[i, 0]
        vy = vel[i, 1]
        phi = ori[i]
        if model == CARTESIAN_VELOCITY or model == CARTESIAN_ACCELERATION:
            if model == CARTESIAN_VELOCITY:
                vx = ax * v_max
                vy = ay * v_max
            else:
                vx = vx + (ax * a_max - damping * vx) * dt
                vy = vy + (ay * a_max - damping * vy) * dt
            s = math.sqrt(vx * vx + vy * vy)
            if s > v_max:
                vx *= v_max / s
                vy *= v_max / s
            if vx * vx + vy * vy > 1e-24:
                phi = math.atan2(vy, vx)
        else:
            hx = math.cos(phi)
            hy = math.sin(phi)
            phi = wrap(phi + ay * omega_max * dt)
            if model == POLAR_VELOCITY:
                sp = max(ax, 0.0) * v_max
            else:
                sp = max(vx * hx + vy * hy, 0.0)
                sp = sp + (ax * a_max - damping * sp) * dt
                sp = min(max(sp, 0.0), v_max)
            vx = sp * math.cos(phi)
            vy = sp * math.sin(phi)
        vel[i, 0] = vx
        vel[i, 1] = vy
        ori[i] = phi
        pos[i, 0] += vx * dt
        pos[i, 1] += vy * dt


@nb.njit(cache=True)
def _closest_on_segment(px, py, ax, ay, bx, by):
    ex = bx - ax
    ey = by - ay
    den = ex * ex + ey * ey
    t = 0.0
    if den > 0.0:
        t = ((px - ax) * ex + (py - ay) * ey) / den
        t = min(max(t, 0.0), 1.0)
    return ax + t * ex, ay + t * ey


@nb.njit(cache=True)
def _normal(dx, dy, dist):
    if dist > 0.0:
        return dx / dist, dy / dist
    # Coincident centres: fixed, deterministic separation direction.
    return 1.0, 0.0


@nb.njit(cache=True)
def project(pos, vel, radii, circ_c, circ_r, wall_a, wall_b, wall_h, hit_agents, hit_circles, hit_walls):
    """Push overlapping bodies apart; zero approaching normal velocities.

    Agent pairs split the penetration equally; obstacles never move. Every
    contact found is flagged in the ``hit_*`` matrices.
    """
    n = pos.shape[0]
    nc = circ_c.shape[0]
    nw = wall_a.shape[0]
    disp = np.zeros((n, 2))
    for _ in range(MAX_PROJECTION_ITERS):
        disp[:, :] = 0.0
        found = False
        for i in range(n):
            for j in range(i + 1, n):
                dx = pos[i, 0] - pos[j, 0]
                dy = pos[i, 1] - pos[j, 1]
                dist = math.sqrt(dx * dx + dy * dy)
                pen = radii[i] + radii[j] - dist
                if pen > CONTACT_SLOP:
                    found = True
                    hit_agents[i, j] = True
                    nx, ny = _normal(dx, dy, dist)
                    disp[i, 0] += 0.5 * pen * nx
                    disp[i, 1] += 0.5 * pen * ny
                    disp[j, 0] -= 0.5 * pen * nx
                    disp[j, 1] -= 0.5 * pen * ny
                    rel = (vel[i, 0] - vel[j, 0]) * nx + (vel[i, 1] - vel[j, 1]) * ny
                    if rel < 0.0:
                        vel[i, 0] -= 0.5 * rel * nx
                        vel[i, 1] -= 0.5 * rel * ny
                        vel[j, 0] += 0.5 * rel * nx
                        vel[j, 1] += 0.5 * rel * ny
            for k in range(nc):
                dx = pos[i, 0] - circ_c[k, 0]
                dy = pos[i, 1] - circ_c[k, 1]
                dist = math.sqrt(dx * dx + dy * dy)
                pen = radii[i] + circ_r[k] - dist
                if pen > CONTACT_SLOP:
                    found = True
                    hit_circles[i, k] = True
                    nx, ny = _normal(dx, dy, dist)
                    disp[i, 0] += pen * nx
                    disp[i, 1] += pen * ny
                    vn = vel[i, 0] * nx + vel[i, 1] * ny
                    if vn < 0.0:
                        vel[i, 0] -= vn * nx
                        vel[i, 1] -= vn * ny
            for k in range(nw):
                cx, cy = _closest_on_segment(
                    pos[i, 0], pos[i, 1], wall_a[k, 0], wall_a[k, 1], wall_b[k, 0], wall_b[k, 1]
                )
                dx = pos[i, 0] - cx
                dy = pos[i, 1] - cy
                dist = math.sqrt(dx * dx + dy * dy)
                pen = radii[i] + wall_h[k] - dist
                if pen > CONTACT_SLOP:
                    found = True
                    hit_walls[i, k] = True
                    nx, ny = _normal(dx, dy, dist)
                    disp[i, 0] += pen * nx
                    disp[i, 1] += pen * ny
                    vn = vel[i, 0] * nx + vel[i, 1] * ny
                    if vn < 0.0:
                        vel[i, 0] -= vn * nx
                        vel[i, 1] -= vn * ny
        if not found:
            break
        for i in range(n):
            pos[i, 0] += disp[i, 0]
            pos[i, 1] += disp[i, 1]


@nb.njit(cache=True)
def physics_step(pos, vel, ori, actions, radii, circ_c, circ_r, wall_a, wall_b, wall_h,
                 model, v_max, a_max, damping, omega_max, dt, substeps,
                 hit_agents, hit_circles, hit_walls):
    """Repeat the decision's action over ``substeps`` integrate/resolve rounds."""
    polar = model == POLAR_VELOCITY or model == POLAR_ACCELERATION
    n = pos.shape[0]
    for _ in range(substeps):
        integrate(pos, vel, ori, actions, model, v_max, a_max, damping, omega_max, dt)
        project(pos, vel, radii, circ_c, circ_r, wall_a, wall_b, wall_h,
                hit_agents, hit_circles, hit_walls)
        for i in range(n):
            vx = vel[i, 0]
            vy = vel[i, 1]
            # A contact can hand a body its partner's normal velocity on top of
            # its own tangential one; keep the cap.
            s = math.sqrt(vx * vx + vy * vy)
            if s > v_max:
                vx *= v_max / s
                vy *= v_max / s
                vel[i, 0] = vx
                vel[i, 1] = vy
            if polar:
                # Polar bodies only move along their heading.
                hx = math.cos(ori[i])
                hy = math.sin(ori[i])
                along = max(vx * hx + vy * hy, 0.0)
                vel[i, 0] = along * hx
                vel[i, 1] = along * hy
            elif vx * vx + vy * vy > 1e-24:
                ori[i] = math.atan2(vy, vx)
