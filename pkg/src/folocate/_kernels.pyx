# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot loops in ``_kernels_py``.

Same signatures and same arithmetic order as the pure-Python module.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, sqrt, fabs, isfinite

cnp.import_array()


def run_em(double[:, ::1] jm, double[::1] dm, double[::1] inv_m, double[::1] sig_m,
           double[:, ::1] c, double[::1] kp, double[::1] ki, double[:, ::1] pw,
           long[::1] inj_kind, long[::1] inj_dev, double[::1] inj_w, double[::1] inj_amp,
           double[::1] inj_phase, double[::1] inj_start, double[::1] inj_end,
           double[::1] x0, double dt, long substeps, long n_samples, double[:, ::1] noise,
           double[:, ::1] vq_noise):
    cdef Py_ssize_t g = jm.shape[0]
    cdef Py_ssize_t r = kp.shape[0]
    cdef Py_ssize_t n_inj = inj_kind.shape[0]
    cdef double sqdt = sqrt(dt)
    cdef double[::1] delta = np.array(x0[:g], dtype=np.float64)
    cdef double[::1] theta = np.array(x0[g:g + r], dtype=np.float64)
    cdef double[::1] omega = np.array(x0[g + r:2 * g + r], dtype=np.float64)
    cdef double[::1] vqi = np.array(x0[2 * g + r:], dtype=np.float64)
    cdef double[::1] d_new = np.empty(g)
    cdef double[::1] w_new = np.empty(g)
    cdef double[::1] th_new = np.empty(r)
    cdef double[::1] vq = np.empty(r)
    cdef double[::1] vq_new = np.empty(r)
    cdef double[::1] u_w = np.empty(g)
    cdef double[::1] u_vq = np.empty(r)
    cdef double[::1] u_vqi = np.empty(r)
    out_arr = np.empty((n_samples, 2 * g + 2 * r))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, m, k, s, dev
    cdef long step = 0
    cdef double t, acc, w, a, ph, te
    cdef bint active, bad

    for i in range(r):
        acc = 0.0
        for j in range(g):
            acc = acc + c[i, j] * delta[j]
        for j in range(r):
            acc = acc + c[i, g + j] * theta[j]
        vq[i] = acc + vq_noise[0, i]
    for i in range(g):
        out[0, i] = delta[i]
        out[0, g + r + i] = omega[i]
    for i in range(r):
        out[0, g + i] = theta[i]
        out[0, 2 * g + r + i] = vq[i]

    for k in range(1, n_samples):
        for s in range(substeps):
            t = step * dt
            for i in range(g):
                u_w[i] = 0.0
            for i in range(r):
                u_vq[i] = 0.0
                u_vqi[i] = 0.0
            for m in range(n_inj):
                if t < inj_start[m]:
                    continue
                w = inj_w[m]
                a = inj_amp[m]
                ph = inj_phase[m]
                active = t < inj_end[m]
                dev = inj_dev[m]
                if inj_kind[m] == 0:
                    if active:
                        u_w[dev] += a * sin(w * t + ph)
                else:
                    te = t if active else inj_end[m]
                    if active:
                        u_vq[dev] += a * sin(w * t + ph)
                    u_vqi[dev] += a / w * (cos(w * inj_start[m] + ph) - cos(w * te + ph))
            if r:
                for i in range(g):
                    acc = 0.0
                    for j in range(r):
                        acc = acc + pw[i, j] * u_vq[j]
                    u_w[i] = u_w[i] + acc
            for i in range(g):
                d_new[i] = delta[i] + omega[i] * dt
                acc = 0.0
                for j in range(g):
                    acc = acc + jm[i, j] * delta[j]
                w_new[i] = omega[i] + (-acc - dm[i] * omega[i] + inv_m[i] * u_w[i]) * dt \
                    - sig_m[i] * noise[step, i] * sqdt
            for i in range(r):
                th_new[i] = theta[i] + (kp[i] * (vq[i] + u_vq[i]) + ki[i] * (vqi[i] + u_vqi[i])) * dt
            for i in range(r):
                acc = 0.0
                for j in range(g):
                    acc = acc + c[i, j] * d_new[j]
                for j in range(r):
                    acc = acc + c[i, g + j] * th_new[j]
                vq_new[i] = acc + vq_noise[k - 1, i]
            for i in range(r):
                vqi[i] = vqi[i] + 0.5 * dt * (vq[i] + vq_new[i])
                theta[i] = th_new[i]
                vq[i] = vq_new[i]
            for i in range(g):
                delta[i] = d_new[i]
                omega[i] = w_new[i]
            step += 1
        for i in range(r):
            acc = 0.0
            for j in range(g):
                acc = acc + c[i, j] * delta[j]
            for j in range(r):
                acc = acc + c[i, g + j] * theta[j]
            vq[i] = acc + vq_noise[k, i]
        bad = False
        for i in range(g):
            out[k, i] = delta[i]
            out[k, g + r + i] = omega[i]
            if not (isfinite(delta[i]) and isfinite(omega[i])):
                bad = True
        for i in range(r):
            out[k, g + i] = theta[i]
            out[k, 2 * g + r + i] = vq[i]
            if not (isfinite(theta[i]) and isfinite(vq[i])):
                bad = True
        if bad:
            return out_arr, k
    return out_arr, -1


def zscore_signals(double[::1] y, long lag, double threshold, double influence):
    cdef Py_ssize_t n = y.shape[0]
    sig_arr = np.zeros(n, dtype=np.int8)
    if n == 0:
        return sig_arr
    cdef signed char[::1] signals = sig_arr
    if lag > n:
        lag = n
    if lag < 2:
        lag = 2
    cdef double[::1] filtered = np.array(y, dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef double avg = 0.0, std = 0.0, dev
    for j in range(lag):
        avg += y[j]
    avg /= lag
    for j in range(lag):
        std += (y[j] - avg) * (y[j] - avg)
    std = sqrt(std / lag)
    for i in range(lag):
        if fabs(y[i] - avg) > threshold * std:
            signals[i] = 1 if y[i] > avg else -1
    for i in range(lag, n):
        if fabs(y[i] - avg) > threshold * std:
            signals[i] = 1 if y[i] > avg else -1
            filtered[i] = influence * y[i] + (1.0 - influence) * filtered[i - 1]
        avg = 0.0
        for j in range(i - lag + 1, i + 1):
            avg += filtered[j]
        avg /= lag
        std = 0.0
        for j in range(i - lag + 1, i + 1):
            dev = filtered[j] - avg
            std += dev * dev
        std = sqrt(std / lag)
    return sig_arr
