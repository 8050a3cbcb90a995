# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""
Compiled versions of the hot loops. Semantics match ``_pykernels`` exactly.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport log, fabs, M_E

cnp.import_array()


cdef inline double _gain(double r) nogil:
    cdef double f = log(r + M_E)
    f = f * f
    if f < 1.0:
        f = 1.0
    return 1.0 / f


def linear_recurrence(Phi, c, y0):
    """``y[k+1] = Phi y[k] + c[k]`` for a batch of systems."""
    cdef double[:, :, ::1] P = np.ascontiguousarray(Phi, dtype=np.float64)
    cdef double[:, :, ::1] cc = np.ascontiguousarray(c, dtype=np.float64)
    cdef Py_ssize_t K = cc.shape[0], L = cc.shape[1], n = cc.shape[2]
    out = np.empty((K, L + 1, n))
    cdef double[:, :, ::1] y = out
    cdef double[:, ::1] y0v = np.ascontiguousarray(y0, dtype=np.float64).reshape(K, n)
    cdef Py_ssize_t k, l, i, j
    cdef double acc
    with nogil:
        for k in range(K):
            for i in range(n):
                y[k, 0, i] = y0v[k, i]
            for l in range(L):
                for i in range(n):
                    acc = cc[k, l, i]
                    for j in range(n):
                        acc = acc + P[k, i, j] * y[k, l, j]
                    y[k, l + 1, i] = acc
    return out


def advance_block(
    double[:, ::1] x, double[:, :, ::1] A, double[:, :, ::1] B, double[:, :, ::1] K,
    double[:, :, ::1] v, double[:, :, ::1] noise,
    double[:, ::1] Gam, double[::1] cvec, double[::1] eta,
    double[:, ::1] mass_in, double[:, ::1] mass_out,
    double[:, :, ::1] Q, double[:, ::1] R, double dt, long cost_from,
    double[::1] cost_track, double[::1] cost_ctrl, double[::1] x2_int,
    int do_dyn, double[:, :, ::1] info_d, double[:, :, ::1] cross_d, double[::1] r_d,
    long[::1] cost_idx, double[:, :, ::1] W, double[:, :, ::1] info_c,
    double[:, :, ::1] cross_c, double[::1] r_c,
    long rec_every, double[:, :, ::1] rec_x, double[:, :, ::1] rec_u, double blowup,
):
    """Advance the population ``L`` Euler-Maruyama steps in place."""
    cdef Py_ssize_t N = v.shape[0], L = v.shape[1], m = v.shape[2], n = x.shape[1]
    cdef Py_ssize_t Nc = cost_idx.shape[0]
    cdef Py_ssize_t p = n + m, pc = n + 1
    cdef bint use_mass_in = mass_in.shape[0] > 0
    cdef double[::1] mean = np.zeros(n)
    cdef double[::1] mN = np.zeros(n)
    cdef double[:, ::1] u = np.zeros((N, m))
    cdef double[:, ::1] dx = np.zeros((N, n))
    cdef double[::1] psi = np.zeros(p)
    cdef double[::1] y = np.zeros(n)
    cdef Py_ssize_t j, i, a, b, c, row
    cdef double acc, e_a, e_b, a_gain, s2
    cdef long hit = -1
    with nogil:
        for j in range(L):
            # realized coupling signal from the pre-step states
            if use_mass_in:
                for a in range(n):
                    mN[a] = mass_in[j, a]
            else:
                for a in range(n):
                    mean[a] = 0.0
                for i in range(N):
                    for a in range(n):
                        mean[a] += x[i, a]
                for a in range(n):
                    mean[a] = mean[a] / N + eta[a]
                for a in range(n):
                    acc = cvec[a]
                    for b in range(n):
                        acc = acc + Gam[a, b] * mean[b]
                    mN[a] = acc
            for a in range(n):
                mass_out[j, a] = mN[a]

            for i in range(N):
                for a in range(m):
                    acc = v[i, j, a]
                    for b in range(n):
                        acc = acc - K[i, a, b] * x[i, b]
                    u[i, a] = acc
                for a in range(n):
                    acc = 0.0
                    for b in range(n):
                        acc = acc + A[i, a, b] * x[i, b]
                    for b in range(m):
                        acc = acc + B[i, a, b] * u[i, b]
                    dx[i, a] = acc * dt + noise[i, j, a]
                if j >= cost_from:
                    acc = 0.0
                    for a in range(n):
                        e_a = x[i, a] - mN[a]
                        for b in range(n):
                            e_b = x[i, b] - mN[b]
                            acc = acc + e_a * Q[i, a, b] * e_b
                    cost_track[i] += acc * dt
                    acc = 0.0
                    for a in range(m):
                        for b in range(m):
                            acc = acc + u[i, a] * R[a, b] * u[i, b]
                    cost_ctrl[i] += acc * dt
                acc = 0.0
                for a in range(n):
                    acc = acc + x[i, a] * x[i, a]
                x2_int[i] += acc * dt
                if rec_every > 0 and j % rec_every == 0:
                    row = j // rec_every
                    for a in range(n):
                        rec_x[row, i, a] = x[i, a]
                    for a in range(m):
                        rec_u[row, i, a] = u[i, a]
                if do_dyn:
                    s2 = 0.0
                    for a in range(n):
                        psi[a] = x[i, a]
                    for a in range(m):
                        psi[n + a] = u[i, a]
                    for a in range(p):
                        s2 = s2 + psi[a] * psi[a]
                    a_gain = _gain(r_d[i])
                    for a in range(p):
                        for b in range(p):
                            info_d[i, a, b] += a_gain * dt * psi[a] * psi[b]
                        for b in range(n):
                            cross_d[i, a, b] += a_gain * psi[a] * dx[i, b]
                    r_d[i] += s2 * dt

            for c in range(Nc):
                i = cost_idx[c]
                for a in range(n):
                    acc = 0.0
                    for b in range(m):
                        acc = acc + W[c, a, b] * u[i, b]
                    y[a] = acc
                for a in range(n):
                    psi[a] = x[i, a]
                psi[n] = 1.0
                s2 = 0.0
                for a in range(pc):
                    s2 = s2 + psi[a] * psi[a]
                a_gain = _gain(r_c[c])
                for a in range(pc):
                    for b in range(pc):
                        info_c[c, a, b] += a_gain * dt * psi[a] * psi[b]
                    for b in range(n):
                        cross_c[c, a, b] += a_gain * dt * psi[a] * y[b]
                r_c[c] += s2 * dt

            for i in range(N):
                for a in range(n):
                    x[i, a] += dx[i, a]
                    if not fabs(x[i, a]) <= blowup:
                        hit = j
            if hit >= 0:
                break
    return hit
