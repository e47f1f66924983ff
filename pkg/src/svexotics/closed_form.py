"""Closed-form first-order prices P ~ P0 + sqrt(eps) P1.

P0 is the Black-Scholes price at variance <f^2> (down-and-out put or
floating-strike lookback put).  P1 applies the operator

    tau * [c1 (-D1 - 3 D2 - D3) - (c2 - 3 c1)(D1 + D2) - (c2 - 2 c1)(-D1)]

to P0, where Dk = s^k d^k P0 / ds^k and tau = T - t.

Both P0 formulas are sums of terms ``coef * (s/s_ref)^a * F(beta ln s + gamma)``
with F the standard normal CDF (or, in the zero-rate lookback limit, the
function psi(y) = n(y) + y N(y)).  Derivatives are taken exactly in
x = ln s with the Euler operator s d/ds and converted afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import ndtr

from .model import (
    ArrayLike,
    CorrectionCoeffs,
    DownAndOutPut,
    EffectiveParams,
    FloatingStrikeLookbackPut,
    OptionSpec,
)

SQRT_2PI = math.sqrt(2.0 * math.pi)
# Below this |k1| the lookback 1/k1 pair is replaced by its k1 -> 0 limit.
K1_LIMIT_THRESHOLD = 1e-8


def _npdf(y):
    return np.exp(-0.5 * y * y) / SQRT_2PI


def norm_cdf(y):
    """Standard normal CDF (erf based, double precision)."""
    return ndtr(y)


def _cdf_derivs(y):
    n = _npdf(y)
    return (ndtr(y), n, -y * n, (y * y - 1.0) * n)


def _psi_derivs(y):
    # psi = n + y N ;  psi' = N ;  psi'' = n ;  psi''' = -y n
    n, N = _npdf(y), ndtr(y)
    return (n + y * N, N, n, -y * n)


_KERNELS = {"cdf": _cdf_derivs, "psi": _psi_derivs}


@dataclass(frozen=True)
class _Term:
    coef: ArrayLike
    a: float
    x_ref: ArrayLike
    beta: ArrayLike
    gamma: ArrayLike
    kind: str = "cdf"

    def euler_derivs(self, x) -> list:
        """[T, D T, D^2 T, D^3 T] with D = d/dx = s d/ds."""
        y = self.beta * x + self.gamma
        F = _KERNELS[self.kind](y)
        scale = self.coef * np.exp(self.a * (x - self.x_ref))
        a, b = self.a, self.beta
        out = []
        for n in range(4):
            acc = 0.0
            for k in range(n + 1):
                acc = acc + math.comb(n, k) * a ** (n - k) * b**k * F[k]
            out.append(scale * acc)
        return out


def _sum_euler(terms: Sequence[_Term], x) -> list:
    total = [0.0, 0.0, 0.0, 0.0]
    for term in terms:
        for i, v in enumerate(term.euler_derivs(x)):
            total[i] = total[i] + v
    return total


def _scaled_from_euler(E) -> tuple:
    d1 = E[1]
    d2 = E[2] - E[1]
    d3 = E[3] - 3.0 * E[2] + 2.0 * E[1]
    return d1, d2, d3


# ---------------------------------------------------------------------------
# inputs / outputs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PricingInputs:
    """Valuation point and model constants.  ``t``, ``s`` and ``z`` may be arrays."""

    t: ArrayLike
    s: ArrayLike
    spec: OptionSpec
    eff: EffectiveParams
    coeffs: CorrectionCoeffs
    r: float
    eps: float = 0.0
    z: Optional[ArrayLike] = None

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        tau = self.spec.T - np.asarray(self.t, dtype=float)
        if np.any(~(s > 0)):
            raise ValueError("spot must be positive")
        if np.any(tau < 0):
            raise ValueError(f"valuation time exceeds expiry T={self.spec.T}")
        if not self.eps >= 0:
            raise ValueError(f"eps must be non-negative, got {self.eps!r}")
        if isinstance(self.spec, FloatingStrikeLookbackPut):
            if np.any(s > np.asarray(self.running_max)):
                raise ValueError("lookback requires running maximum z >= s")
        elif self.z is not None:
            raise ValueError("running maximum only applies to lookback options")

    @property
    def tau(self):
        return self.spec.T - np.asarray(self.t, dtype=float)

    @property
    def running_max(self):
        return self.s if self.z is None else self.z

    def replace(self, **changes) -> "PricingInputs":
        fields = dict(t=self.t, s=self.s, spec=self.spec, eff=self.eff,
                      coeffs=self.coeffs, r=self.r, eps=self.eps, z=self.z)
        fields.update(changes)
        return PricingInputs(**fields)


@dataclass(frozen=True)
class PriceBreakdown:
    p0: ArrayLike
    p1: ArrayLike
    sqrt_eps_p1: ArrayLike
    approx: ArrayLike
    knocked_out: Union[bool, np.ndarray] = False


def _scalarize(v):
    v = np.asarray(v, dtype=float)
    return float(v) if v.ndim == 0 else v


def delta_pm(x: ArrayLike, sign: int, eff: EffectiveParams, r: float, tau: ArrayLike):
    """Delta_{+/-}(x) = [ln x + (r +/- <f^2>/2) tau] / sqrt(<f^2> tau)."""
    if sign not in (1, -1):
        raise ValueError(f"sign must be +1 or -1, got {sign!r}")
    x = np.asarray(x, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("Delta argument must be positive")
    if np.any(~(tau > 0)):
        raise ValueError("time to expiry must be positive")
    v = np.sqrt(eff.f2bar * tau)
    return _scalarize((np.log(x) + (r + sign * 0.5 * eff.f2bar) * tau) / v)


# ---------------------------------------------------------------------------
# down-and-out put
# ---------------------------------------------------------------------------


def _dop_terms(K, B, tau, eff: EffectiveParams, r) -> list:
    f2, k1 = eff.f2bar, eff.k1
    v = np.sqrt(f2 * tau)
    mu_m, mu_p = (r - 0.5 * f2) * tau, (r + 0.5 * f2) * tau
    lnK, lnB = math.log(K), math.log(B)
    disc_K = K * np.exp(-r * tau)
    neg = -1.0 / v
    return [
        # K e^{-r tau} [N(-D-(s/K)) - N(-D-(s/B))]
        _Term(disc_K, 0.0, 0.0, neg, (lnK - mu_m) / v),
        _Term(-disc_K, 0.0, 0.0, neg, (lnB - mu_m) / v),
        # -s [N(-D+(s/K)) - N(-D+(s/B))]
        _Term(-1.0, 1.0, 0.0, neg, (lnK - mu_p) / v),
        _Term(1.0, 1.0, 0.0, neg, (lnB - mu_p) / v),
        # -K e^{-r tau} (B/s)^{k1-1} [N(D-(B/s)) - N(D-(B^2/(sK)))]
        _Term(-disc_K, 1.0 - k1, lnB, neg, (lnB + mu_m) / v),
        _Term(disc_K, 1.0 - k1, lnB, neg, (2 * lnB - lnK + mu_m) / v),
        # B (B/s)^{k1} [N(D+(B/s)) - N(D+(B^2/(sK)))]
        _Term(B, -k1, lnB, neg, (lnB + mu_p) / v),
        _Term(-B, -k1, lnB, neg, (2 * lnB - lnK + mu_p) / v),
    ]


def _require(inp: PricingInputs, kind) -> None:
    if not isinstance(inp.spec, kind):
        raise TypeError(f"expected a {kind.__name__} contract, got {type(inp.spec).__name__}")


def _dop_euler(inp: PricingInputs, extended: bool = False):
    _require(inp, DownAndOutPut)
    K, B = inp.spec.K, inp.spec.B
    s = np.asarray(inp.s, dtype=float)
    tau = inp.tau
    s, tau = np.broadcast_arrays(s, tau)
    # ``extended`` evaluates the image solution below the barrier as well
    alive = np.ones(s.shape, dtype=bool) if extended else s > B
    live_tau = tau > 0
    E = [np.zeros(s.shape) for _ in range(4)]
    # interior points
    mask = alive & live_tau
    if mask.any():
        vals = _sum_euler(_dop_terms(K, B, tau[mask], inp.eff, inp.r), np.log(s[mask]))
        for i in range(4):
            E[i][mask] = vals[i]
    # expiry: payoff (K - s)^+ on s > B, derivatives of the smooth pieces
    mask = alive & ~live_tau
    if mask.any():
        sm = s[mask]
        itm = sm < K
        E[0][mask] = np.where(itm, K - sm, 0.0)
        for i in (1, 2, 3):
            E[i][mask] = np.where(itm, -sm, 0.0)
    return E, alive


def dop_euler_derivs(inp: PricingInputs, extended: bool = False) -> list:
    """[P0, D P0, D^2 P0, D^3 P0] with D = s d/ds.

    With ``extended`` the image solution is continued below the barrier; this
    is the function the P1 operator acts on in the full-line problem.
    """
    E, _ = _dop_euler(inp, extended)
    return [_scalarize(e) for e in E]


def p0_dop(inp: PricingInputs):
    """Zero-order down-and-out put price; 0 on or below the barrier."""
    E, _ = _dop_euler(inp)
    return _scalarize(E[0])


def p0_dop_scaled_derivs(inp: PricingInputs) -> tuple:
    """(s dP0/ds, s^2 d2P0/ds2, s^3 d3P0/ds3) for the down-and-out put."""
    E, _ = _dop_euler(inp)
    return tuple(_scalarize(d) for d in _scaled_from_euler(E))


def _p1_from_scaled(d1, d2, d3, coeffs: CorrectionCoeffs, tau):
    c1, c2 = coeffs.c1, coeffs.c2
    return tau * (
        c1 * (-d1 - 3.0 * d2 - d3)
        - (c2 - 3.0 * c1) * (d1 + d2)
        - (c2 - 2.0 * c1) * (-d1)
    )


def p1_dop(inp: PricingInputs):
    E, _ = _dop_euler(inp)
    d1, d2, d3 = _scaled_from_euler(E)
    return _scalarize(_p1_from_scaled(d1, d2, d3, inp.coeffs, inp.tau))


# ---------------------------------------------------------------------------
# floating-strike lookback put
# ---------------------------------------------------------------------------


def _lookback_terms(z, tau, eff: EffectiveParams, r) -> list:
    f2, k1 = eff.f2bar, eff.k1
    v = np.sqrt(f2 * tau)
    mu_m, mu_p = (r - 0.5 * f2) * tau, (r + 0.5 * f2) * tau
    lnz = np.log(z)
    disc = np.exp(-r * tau)
    terms = [
        # z e^{-r tau} N(-D-(s/z)) - s N(-D+(s/z))
        _Term(z * disc, 0.0, 0.0, -1.0 / v, (lnz - mu_m) / v),
        _Term(-1.0, 1.0, 0.0, -1.0 / v, (lnz - mu_p) / v),
    ]
    if abs(k1) < K1_LIMIT_THRESHOLD:
        # -(z/k1)(s/z)^{1-k1} e^{-r tau} N(-D-(z/s)) + (s/k1) N(D+(s/z))
        #   -> s v psi(D+(s/z))  as k1 -> 0
        terms.append(_Term(v, 1.0, 0.0, 1.0 / v, (-lnz + mu_p) / v, kind="psi"))
    else:
        terms += [
            _Term(-z * disc / k1, 1.0 - k1, lnz, 1.0 / v, (-lnz - mu_m) / v),
            _Term(1.0 / k1, 1.0, 0.0, 1.0 / v, (-lnz + mu_p) / v),
        ]
    return terms


def lookback_euler_derivs(s, z, tau, eff: EffectiveParams, r: float) -> list:
    """[P0, D P0, D^2 P0, D^3 P0] of the lookback formula, D = s d/ds, tau > 0.

    No s <= z check is made, so this also evaluates the continuation of the
    formula into s > z used by the full-line P1 problem.
    """
    s, z, tau = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (s, z, tau)))
    return _sum_euler(_lookback_terms(z, tau, eff, r), np.log(s))


def _lookback_euler(inp: PricingInputs):
    _require(inp, FloatingStrikeLookbackPut)
    s = np.asarray(inp.s, dtype=float)
    z = np.asarray(inp.running_max, dtype=float)
    s, z, tau = np.broadcast_arrays(s, z, inp.tau)
    E = [np.zeros(s.shape) for _ in range(4)]
    live = tau > 0
    if live.any():
        vals = lookback_euler_derivs(s[live], z[live], tau[live], inp.eff, inp.r)
        for i in range(4):
            E[i][live] = vals[i]
    if (~live).any():
        sm, zm = s[~live], z[~live]
        E[0][~live] = zm - sm
        for i in (1, 2, 3):
            E[i][~live] = -sm
    return E


def p0_lookback(inp: PricingInputs):
    """Zero-order floating-strike lookback put price P0(t, s, z)."""
    return _scalarize(_lookback_euler(inp)[0])


def p0_lookback_scaled_derivs(inp: PricingInputs) -> tuple:
    """s-derivatives of P0(t, s, z) at fixed running maximum z."""
    return tuple(_scalarize(d) for d in _scaled_from_euler(_lookback_euler(inp)))


def p1_lookback(inp: PricingInputs):
    d1, d2, d3 = _scaled_from_euler(_lookback_euler(inp))
    return _scalarize(_p1_from_scaled(d1, d2, d3, inp.coeffs, inp.tau))


# ---------------------------------------------------------------------------
# assembled approximation
# ---------------------------------------------------------------------------


def approx_price(inp: PricingInputs) -> PriceBreakdown:
    if isinstance(inp.spec, DownAndOutPut):
        E, alive = _dop_euler(inp)
        knocked_out = ~alive
    elif isinstance(inp.spec, FloatingStrikeLookbackPut):
        E = _lookback_euler(inp)
        knocked_out = np.zeros(np.shape(E[0]), dtype=bool)
    else:
        raise TypeError(f"unsupported contract {type(inp.spec).__name__}")
    d1, d2, d3 = _scaled_from_euler(E)
    p0 = E[0]
    p1 = _p1_from_scaled(d1, d2, d3, inp.coeffs, inp.tau) * np.ones_like(p0)
    corr = math.sqrt(inp.eps) * p1
    ko = bool(knocked_out) if np.ndim(knocked_out) == 0 else knocked_out
    return PriceBreakdown(
        p0=_scalarize(p0),
        p1=_scalarize(p1),
        sqrt_eps_p1=_scalarize(corr),
        approx=_scalarize(p0 + corr),
        knocked_out=ko,
    )
