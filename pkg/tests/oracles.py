"""Independent reference formulas used only by the tests.

Coded from the standard textbook forms (Haug, "The Complete Guide to Option
Pricing Formulas", ch. 4) with plain ``math`` so they share nothing with the
package's term machinery.
"""

import math

from scipy import integrate


def N(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def bs_put(S, K, r, sigma, T):
    v = sigma * math.sqrt(T)
    d1 = (math.log(S / K) + (r + 0.5 * sigma**2) * T) / v
    d2 = d1 - v
    return K * math.exp(-r * T) * N(-d2) - S * N(-d1)


def bs_call(S, K, r, sigma, T):
    v = sigma * math.sqrt(T)
    d1 = (math.log(S / K) + (r + 0.5 * sigma**2) * T) / v
    d2 = d1 - v
    return S * N(d1) - K * math.exp(-r * T) * N(d2)


def bs_put_delta(S, K, r, sigma, T):
    v = sigma * math.sqrt(T)
    d1 = (math.log(S / K) + (r + 0.5 * sigma**2) * T) / v
    return -N(-d1)


def reiner_rubinstein_dop(S, X, H, r, sigma, T):
    """Down-and-out put, strike X above barrier H, no rebate, b = r."""
    phi, eta = -1.0, 1.0
    b = r
    v = sigma * math.sqrt(T)
    mu = (b - 0.5 * sigma**2) / sigma**2
    x1 = math.log(S / X) / v + (1 + mu) * v
    x2 = math.log(S / H) / v + (1 + mu) * v
    y1 = math.log(H * H / (S * X)) / v + (1 + mu) * v
    y2 = math.log(H / S) / v + (1 + mu) * v
    df = math.exp(-r * T)
    A = phi * S * N(phi * x1) - phi * X * df * N(phi * x1 - phi * v)
    B = phi * S * N(phi * x2) - phi * X * df * N(phi * x2 - phi * v)
    C = (phi * S * (H / S) ** (2 * (mu + 1)) * N(eta * y1)
         - phi * X * df * (H / S) ** (2 * mu) * N(eta * y1 - eta * v))
    D = (phi * S * (H / S) ** (2 * (mu + 1)) * N(eta * y2)
         - phi * X * df * (H / S) ** (2 * mu) * N(eta * y2 - eta * v))
    return A - B + C - D


def gsg_floating_lookback_put(S, Smax, r, sigma, T):
    """Goldman-Sosin-Gatto floating-strike lookback put, b = r."""
    b = r
    v = sigma * math.sqrt(T)
    b1 = (math.log(S / Smax) + (b + 0.5 * sigma**2) * T) / v
    b2 = b1 - v
    return (
        -S * math.exp((b - r) * T) * N(-b1)
        + Smax * math.exp(-r * T) * N(-b2)
        + S * math.exp(-r * T) * sigma**2 / (2 * b)
        * (-(S / Smax) ** (-2 * b / sigma**2) * N(b1 - 2 * b / sigma * math.sqrt(T))
           + math.exp(b * T) * N(b1))
    )


def gaussian_average(h, m, nu, width=10.0):
    """Adaptive quadrature of E[h(Y)], Y ~ N(m, nu^2), on [m - width nu, m + width nu]."""
    dens = lambda y: math.exp(-0.5 * ((y - m) / nu) ** 2) / (nu * math.sqrt(2 * math.pi))
    val, _ = integrate.quad(lambda y: h(y) * dens(y), m - width * nu, m + width * nu,
                            epsabs=0, epsrel=1e-13, limit=400, points=[m])
    return val


def richardson_derivs(fn, s, rel_step=1e-3):
    """s dP/ds, s^2 d2P/ds2, s^3 d3P/ds3 by Richardson-extrapolated central differences."""

    def stencil(h):
        fm2, fm1, f0, fp1, fp2 = (fn(s + k * h) for k in (-2, -1, 0, 1, 2))
        d1 = (fp1 - fm1) / (2 * h)
        d2 = (fp1 - 2 * f0 + fm1) / h**2
        d3 = (fp2 - 2 * fp1 + 2 * fm1 - fm2) / (2 * h**3)
        return d1, d2, d3

    h = rel_step * s
    a = stencil(h)
    b = stencil(h / 2)
    d = [(4 * bb - aa) / 3 for aa, bb in zip(a, b)]
    return d[0] * s, d[1] * s**2, d[2] * s**3


# --- high-precision versions (mpmath), for derivative and limit oracles ---

import mpmath  # noqa: E402

mpmath.mp.dps = 50


def _mpN(x):
    return mpmath.ncdf(x)


def mp_reiner_rubinstein_dop(S, X, H, r, sigma, T):
    S, X, H, r, sigma, T = (mpmath.mpf(v) for v in (S, X, H, r, sigma, T))
    v = sigma * mpmath.sqrt(T)
    mu = (r - sigma**2 / 2) / sigma**2
    x1 = mpmath.log(S / X) / v + (1 + mu) * v
    x2 = mpmath.log(S / H) / v + (1 + mu) * v
    y1 = mpmath.log(H * H / (S * X)) / v + (1 + mu) * v
    y2 = mpmath.log(H / S) / v + (1 + mu) * v
    df = mpmath.exp(-r * T)
    A = -S * _mpN(-x1) + X * df * _mpN(-x1 + v)
    B = -S * _mpN(-x2) + X * df * _mpN(-x2 + v)
    C = -S * (H / S) ** (2 * (mu + 1)) * _mpN(y1) + X * df * (H / S) ** (2 * mu) * _mpN(y1 - v)
    D = -S * (H / S) ** (2 * (mu + 1)) * _mpN(y2) + X * df * (H / S) ** (2 * mu) * _mpN(y2 - v)
    return A - B + C - D


def mp_gsg_floating_lookback_put(S, Smax, r, sigma, T):
    S, Smax, r, sigma, T = (mpmath.mpf(v) for v in (S, Smax, r, sigma, T))
    v = sigma * mpmath.sqrt(T)
    b1 = (mpmath.log(S / Smax) + (r + sigma**2 / 2) * T) / v
    b2 = b1 - v
    return (-S * _mpN(-b1) + Smax * mpmath.exp(-r * T) * _mpN(-b2)
            + S * mpmath.exp(-r * T) * sigma**2 / (2 * r)
            * (-(S / Smax) ** (-2 * r / sigma**2) * _mpN(b1 - 2 * r / sigma * mpmath.sqrt(T))
               + mpmath.exp(r * T) * _mpN(b1)))


def mp_scaled_derivs(fn, s):
    """(s f', s^2 f'', s^3 f''') by mpmath numerical differentiation at 50 digits."""
    s = mpmath.mpf(s)
    return tuple(float(s**k * mpmath.diff(fn, s, k)) for k in (1, 2, 3))
