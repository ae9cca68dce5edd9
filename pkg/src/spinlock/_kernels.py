"""Compiled inner loop of the Bloch-vector integrator."""

import math

import numpy as np
from numba import njit


@njit(nogil=True, cache=True)
def evolve_batch(s0, omx, omy, omz, noise, noise_offset, gamma1, z_eq, dt,
                 record_steps, out):
    """Propagate a batch of trajectories through piecewise-constant fields.

    Each step rotates the Bloch vector about (omx, omy, omz + noise) in rad/s
    by the exact angle |omega| dt (dS/dt = omega x S), sandwiched between two
    half steps of amplitude damping. ``noise`` has one row per trajectory and
    ``noise_offset`` adds a per-trajectory constant. ``out[k, r]`` receives
    the state after ``record_steps[r]`` steps.
    """
    n_traj = noise.shape[0]
    n_steps = omx.shape[0]
    n_rec = record_steps.shape[0]
    half_t = math.exp(-0.25 * gamma1 * dt)
    half_z = math.exp(-0.5 * gamma1 * dt)
    damp = gamma1 > 0.0
    for k in range(n_traj):
        x = s0[0]
        y = s0[1]
        z = s0[2]
        r = 0
        while r < n_rec and record_steps[r] == 0:
            out[k, r, 0] = x
            out[k, r, 1] = y
            out[k, r, 2] = z
            r += 1
        off = noise_offset[k]
        for i in range(n_steps):
            if damp:
                x *= half_t
                y *= half_t
                z = z_eq + (z - z_eq) * half_z
            wx = omx[i]
            wy = omy[i]
            wz = omz[i] + noise[k, i] + off
            w = math.sqrt(wx * wx + wy * wy + wz * wz)
            if w > 0.0:
                a = w * dt
                nx = wx / w
                ny = wy / w
                nz = wz / w
                c = math.cos(a)
                s = math.sin(a)
                dot = (nx * x + ny * y + nz * z) * (1.0 - c)
                cx = ny * z - nz * y
                cy = nz * x - nx * z
                cz = nx * y - ny * x
                x, y, z = (x * c + cx * s + nx * dot,
                           y * c + cy * s + ny * dot,
                           z * c + cz * s + nz * dot)
            if damp:
                x *= half_t
                y *= half_t
                z = z_eq + (z - z_eq) * half_z
            while r < n_rec and record_steps[r] == i + 1:
                out[k, r, 0] = x
                out[k, r, 1] = y
                out[k, r, 2] = z
                r += 1
    return out


def warm_up():
    """Trigger compilation on a tiny problem."""
    out = np.zeros((1, 1, 3))
    evolve_batch(np.array([0.0, 0.0, -1.0]), np.zeros(2), np.zeros(2), np.zeros(2),
                 np.zeros((1, 2)), np.zeros(1), 0.0, -1.0, 1e-9,
                 np.array([2], dtype=np.int64), out)
