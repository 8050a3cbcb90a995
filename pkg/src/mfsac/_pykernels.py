"""
Numpy reference implementations of the hot loops.

These are the fallback used when the compiled extension is unavailable and
the reference the compiled kernels are tested against.
"""
from __future__ import annotations

import numpy as np

E = np.e


def linear_recurrence(Phi, c, y0):
    """``y[k+1] = Phi y[k] + c[k]`` for a batch of systems.

    Phi: (K, n, n); c: (K, L, n); y0: (K, n). Returns (K, L+1, n).
    """
    Phi = np.ascontiguousarray(Phi, dtype=float)
    c = np.ascontiguousarray(c, dtype=float)
    K, L, n = c.shape
    y = np.empty((K, L + 1, n))
    y[:, 0] = y0
    cur = np.array(y0, dtype=float)
    for k in range(L):
        cur = np.einsum("kij,kj->ki", Phi, cur) + c[:, k]
        y[:, k + 1] = cur
    return y


def _gain(r):
    return 1.0 / np.maximum(1.0, np.log(r + E) ** 2)


def advance_block(
    x, A, B, K, v, noise, Gam, cvec, eta, mass_in, mass_out, Q, R, dt, cost_from,
    cost_track, cost_ctrl, x2_int,
    do_dyn, info_d, cross_d, r_d,
    cost_idx, W, info_c, cross_c, r_c,
    rec_every, rec_x, rec_u, blowup,
):
    """Advance the population ``L`` Euler-Maruyama steps in place.

    Returns the local index of the first step whose post-update state exceeds
    ``blowup`` in absolute value, or -1.
    """
    N, L, m = v.shape
    n = x.shape[1]
    use_mass_in = mass_in.shape[0] > 0
    do_cost = cost_idx.shape[0] > 0
    for j in range(L):
        if use_mass_in:
            mN = mass_in[j]
        else:
            mN = Gam @ (x.mean(axis=0) + eta) + cvec
        mass_out[j] = mN
        u = v[:, j] - np.einsum("imk,ik->im", K, x)
        dx = (np.einsum("ink,ik->in", A, x) + np.einsum("inm,im->in", B, u)) * dt + noise[:, j]
        if j >= cost_from:
            e = x - mN
            cost_track += np.einsum("in,ink,ik->i", e, Q, e) * dt
            cost_ctrl += np.einsum("im,mk,ik->i", u, R, u) * dt
        x2_int += np.einsum("in,in->i", x, x) * dt
        if rec_every > 0 and j % rec_every == 0:
            rec_x[j // rec_every] = x
            rec_u[j // rec_every] = u
        if do_dyn:
            psi = np.concatenate([x, u], axis=1)
            a = _gain(r_d)
            info_d += (a * dt)[:, None, None] * psi[:, :, None] * psi[:, None, :]
            cross_d += a[:, None, None] * psi[:, :, None] * dx[:, None, :]
            r_d += np.einsum("ip,ip->i", psi, psi) * dt
        if do_cost:
            xc = x[cost_idx]
            psi = np.concatenate([xc, np.ones((xc.shape[0], 1))], axis=1)
            y = np.einsum("inm,im->in", W, u[cost_idx])
            a = _gain(r_c)
            info_c += (a * dt)[:, None, None] * psi[:, :, None] * psi[:, None, :]
            cross_c += (a * dt)[:, None, None] * psi[:, :, None] * y[:, None, :]
            r_c += np.einsum("ip,ip->i", psi, psi) * dt
        x += dx
        if not np.all(np.abs(x) <= blowup):
            return j
    return -1
