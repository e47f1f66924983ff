"""Compiled inner loops for the path simulator.

All state arrays are updated in place; a block covers ``n_block`` time steps
for every path of a chunk.  Random numbers are generated outside (numpy
Generator streams) so results do not depend on how chunks are scheduled.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def ou_block(y, xi_s, xi_perp, rho, decay, mean, noise_sd, lam_shift, y_out):
    """Exact OU transition with frozen constant risk-premium shift.

    y_out[:, k] is the state at the start of step k; y is advanced in place.
    """
    n, nb = xi_s.shape
    rho_c = math.sqrt(1.0 - rho * rho)
    target = mean - lam_shift
    for p in range(n):
        yp = y[p]
        for k in range(nb):
            y_out[p, k] = yp
            dw = rho * xi_s[p, k] + rho_c * xi_perp[p, k]
            yp = target + (yp - target) * decay + noise_sd * dw
        y[p] = yp


@njit(cache=True)
def log_block(x, run_min, run_max, bmax, surv, f2_sum, vol, xi_s, u,
              dt, r, levels, bridge, want_bridge_max, monitor_every, step0):
    """Advance log-price paths x = ln(S/s0) over one block of steps.

    vol[p, k] is f(Y) frozen over step k.  ``levels`` are log barrier levels
    ln(B/s0); ``surv[p, j]`` holds the survival weight (bridge) or indicator.
    """
    n, nb = xi_s.shape
    n_lev = levels.shape[0]
    sqdt = math.sqrt(dt)
    for p in range(n):
        xp = x[p]
        lo = run_min[p]
        hi = run_max[p]
        bm = bmax[p]
        acc = f2_sum[p]
        for k in range(nb):
            sig = vol[p, k]
            var_dt = sig * sig * dt
            xn = xp + (r - 0.5 * sig * sig) * dt + sig * sqdt * xi_s[p, k]
            acc += sig * sig
            monitored = (step0 + k + 1) % monitor_every == 0
            for j in range(n_lev):
                w = surv[p, j]
                if w == 0.0:
                    continue
                b = levels[j]
                if bridge:
                    if xn <= b:
                        surv[p, j] = 0.0
                    else:
                        d = (xp - b) * (xn - b)
                        # crossing probabilities below 4e-18 are dropped
                        if d < 20.0 * var_dt:
                            surv[p, j] = w * (1.0 - math.exp(-2.0 * d / var_dt))
                elif monitored and xn <= b:
                    surv[p, j] = 0.0
            if want_bridge_max:
                dx = xn - xp
                m = 0.5 * (xp + xn + math.sqrt(dx * dx - 2.0 * var_dt * math.log(u[p, k])))
                if m > bm:
                    bm = m
            if monitored:
                if xn < lo:
                    lo = xn
                if xn > hi:
                    hi = xn
            xp = xn
        x[p] = xp
        run_min[p] = lo
        run_max[p] = hi
        bmax[p] = bm
        f2_sum[p] = acc
