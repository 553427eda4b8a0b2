"""Pure-Python versions of the hot loops.

These are the reference implementations; ``_kernels.pyx`` mirrors them
line for line and is used when the compiled extension is available.
"""

import math

import numpy as np


def run_em(jm, dm, inv_m, sig_m, c, kp, ki, pw,
           inj_kind, inj_dev, inj_w, inj_amp, inj_phase, inj_start, inj_end,
           x0, dt, substeps, n_samples, noise, vq_noise):
    """Euler-Maruyama integration of the swing/PLL deviation model.

    State layout of ``x0`` is [delta (g), theta (r), omega (g), vqI (r)].
    Returns an (n_samples, 2g + 2r) array of [delta, theta, omega, vq]
    recorded every ``substeps`` integration steps.  Non-finite states stop
    the run; the returned ``bad`` index is the first offending sample or -1.
    ``vq_noise`` (n_samples, r) is added to every IBR's v_q and held over
    each sampling interval, so the PLL sees the same value that is
    reported at the start of the interval.
    """
    g = jm.shape[0]
    r = kp.shape[0]
    n_inj = inj_kind.shape[0]
    sqdt = math.sqrt(dt)
    x = np.array(x0, dtype=float)
    delta = x[:g]
    theta = x[g:g + r]
    omega = x[g + r:2 * g + r]
    vqi = x[2 * g + r:]
    out = np.empty((n_samples, 2 * g + 2 * r))
    angles = np.concatenate([delta, theta])
    vq = c @ angles + vq_noise[0]
    out[0, :2 * g + r] = x[:2 * g + r]
    out[0, 2 * g + r:] = vq
    u_w = np.zeros(g)
    u_vq = np.zeros(r)
    u_vqi = np.zeros(r)
    step = 0
    for k in range(1, n_samples):
        nu = vq_noise[k - 1]
        for _ in range(substeps):
            t = step * dt
            u_w[:] = 0.0
            u_vq[:] = 0.0
            u_vqi[:] = 0.0
            for m in range(n_inj):
                if t < inj_start[m]:
                    continue
                w = inj_w[m]
                a = inj_amp[m]
                ph = inj_phase[m]
                active = t < inj_end[m]
                if inj_kind[m] == 0:
                    if active:
                        u_w[inj_dev[m]] += a * math.sin(w * t + ph)
                else:
                    d = inj_dev[m]
                    te = t if active else inj_end[m]
                    if active:
                        u_vq[d] += a * math.sin(w * t + ph)
                    u_vqi[d] += a / w * (math.cos(w * inj_start[m] + ph) - math.cos(w * te + ph))
            if r:
                u_w += pw @ u_vq
            d_new = delta + omega * dt
            w_new = omega + (-(jm @ delta) - dm * omega + inv_m * u_w) * dt - sig_m * noise[step] * sqdt
            th_new = theta + (kp * (vq + u_vq) + ki * (vqi + u_vqi)) * dt
            angles = np.concatenate([d_new, th_new])
            vq_new = c @ angles + nu
            vqi = vqi + 0.5 * dt * (vq + vq_new)
            delta, theta, omega, vq = d_new, th_new, w_new, vq_new
            step += 1
        vq = c @ np.concatenate([delta, theta]) + vq_noise[k]
        row = out[k]
        row[:g] = delta
        row[g:g + r] = theta
        row[g + r:2 * g + r] = omega
        row[2 * g + r:] = vq
        if not np.all(np.isfinite(row)):
            return out, k
    return out, -1


def zscore_signals(y, lag, threshold, influence):
    """Smoothed z-score peak flags (+1 above, -1 below, 0 otherwise).

    Bins before ``lag`` are scored against the statistics of the seed
    window ``y[:lag]`` so that low-frequency peaks are not skipped.
    """
    n = y.shape[0]
    signals = np.zeros(n, dtype=np.int8)
    if n == 0:
        return signals
    lag = max(2, min(lag, n))
    filtered = np.array(y, dtype=float)
    avg = float(np.mean(y[:lag]))
    std = float(np.std(y[:lag]))
    for i in range(lag):
        if abs(y[i] - avg) > threshold * std:
            signals[i] = 1 if y[i] > avg else -1
    for i in range(lag, n):
        if abs(y[i] - avg) > threshold * std:
            signals[i] = 1 if y[i] > avg else -1
            filtered[i] = influence * y[i] + (1.0 - influence) * filtered[i - 1]
        seg = filtered[i - lag + 1:i + 1]
        avg = float(np.mean(seg))
        std = float(np.std(seg))
    return signals
