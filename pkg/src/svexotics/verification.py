"""Numerical cross-checks for the closed forms.

* Gaussian-convolution (Mellin) quadratures of both zero-order prices.
* Finite-difference residuals of the zero-order and first-correction PDEs.
* A Crank-Nicolson solver for the first-correction PDE in log coordinates,
  with either the full-line (extended) problem or explicit boundary data.
* Boundary-condition measurements.

The pricing operator throughout is

    L = d/dt + (1/2) <f^2> s^2 d^2/ds^2 + r s d/ds - r

and the first correction solves L P1 = c1 s^3 P0''' + c2 s^2 P0'' with P1 = 0
at expiry.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate
from scipy.linalg import solve_banded

from .closed_form import (
    PricingInputs,
    _p1_from_scaled,
    _scaled_from_euler,
    dop_euler_derivs,
    lookback_euler_derivs,
    p0_dop,
    p0_lookback,
    p1_dop,
    p1_lookback,
)
from .model import (
    CorrectionCoeffs,
    DownAndOutPut,
    EffectiveParams,
    FloatingStrikeLookbackPut,
    QuadratureError,
)

# Gaussian kernel is treated as zero beyond this many standard deviations.
KERNEL_WIDTH = 40.0


@dataclass
class ResidualReport:
    """Outcome of one check.  ``diagnostic`` reports are never failures."""

    name: str
    max_abs_residual: float
    grid: str
    tolerance: Optional[float]
    passed: bool
    diagnostic: bool = False
    details: dict = field(default_factory=dict)

    @classmethod
    def make(cls, name, residual, grid, tolerance, diagnostic=False, **details):
        residual = float(residual)
        passed = True if diagnostic else bool(residual <= tolerance)
        return cls(name, residual, grid, None if diagnostic else float(tolerance),
                   passed, diagnostic, details)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# ---------------------------------------------------------------------------
# convolution quadratures
# ---------------------------------------------------------------------------


def _quad(fn, a, b, label, points=None):
    if not a < b:
        return 0.0
    pts = None
    if points:
        pts = [p for p in points if a < p < b] or None
    val, err, info = integrate.quad(fn, a, b, points=pts, epsabs=0.0, epsrel=1e-12,
                                    limit=500, full_output=1)[:3]
    if err > 1e-9 * max(abs(val), 1.0):
        last = info["last"]
        elist = info["elist"][:last]
        worst = int(np.argmax(elist))
        raise QuadratureError(
            f"{label}: quadrature did not converge (estimated error {err:.3g}); "
            f"worst subinterval [{info['alist'][worst]:.6g}, {info['blist'][worst]:.6g}]"
        )
    return val


class _HeatKernel:
    """Density of ln S_T (times discount) in v = ln u, for spot s and horizon tau."""

    def __init__(self, s, tau, eff: EffectiveParams, r):
        if not tau > 0:
            raise ValueError("convolution needs a positive time to expiry")
        self.lam = 0.5 * eff.f2bar * tau
        self.eta = 0.5 * (1.0 - eff.k1)
        self.delta = -self.lam * self.eta**2 - r * tau
        self.x = math.log(s)
        self.norm = 1.0 / (2.0 * math.sqrt(self.lam * math.pi))
        # peak of the kernel in v and its standard deviation
        self.centre = self.x - 2.0 * self.lam * self.eta
        self.sd = math.sqrt(2.0 * self.lam)

    def __call__(self, v):
        w = self.x - v
        return self.norm * math.exp(self.delta + self.eta * w - w * w / (4.0 * self.lam))

    def clip(self, a, b):
        lo = self.centre - KERNEL_WIDTH * self.sd
        hi = self.centre + KERNEL_WIDTH * self.sd
        return max(a, lo), min(b, hi)


def mellin_p0_dop_quadrature(inp: PricingInputs) -> float:
    """Zero-order barrier price as two convolutions of the extended payoff.

    P0 = int_[B,K] k(s,u) (K - u) du/u
         - int_[B^2/K, B] k(s,u) (B/u)^(k1-1) (K - B^2/u) du/u
    """
    spec = inp.spec
    if not isinstance(spec, DownAndOutPut):
        raise TypeError("expected a DownAndOutPut contract")
    s = float(inp.s)
    if s <= spec.B:
        return 0.0
    K, B, k1 = spec.K, spec.B, inp.eff.k1
    ker = _HeatKernel(s, float(inp.tau), inp.eff, inp.r)
    lnB, lnK = math.log(B), math.log(K)

    a, b = ker.clip(lnB, lnK)
    direct = _quad(lambda v: ker(v) * (K - math.exp(v)), a, b, "payoff integral",
                   points=[ker.centre])
    a, b = ker.clip(2 * lnB - lnK, lnB)
    image = _quad(
        lambda v: ker(v) * math.exp((k1 - 1.0) * (lnB - v)) * (K - B * B * math.exp(-v)),
        a, b, "image integral", points=[ker.centre],
    )
    return direct - image


def mellin_q0_lookback_quadrature(t, u, eff: EffectiveParams, r, T, include_tail=True) -> float:
    """Reduced lookback price Q0(t, u), u = s/z, by convolution of the extended payoff.

    Terminal data is 1 - xi on (0, 1) and xi (1 - xi^-k1)/k1 on (1, inf).
    ``include_tail=False`` drops the second integral, which leaves an
    ordinary put struck at 1.
    """
    if not 0 < u <= 1:
        raise ValueError(f"u must lie in (0, 1], got {u!r}")
    ker = _HeatKernel(u, T - t, eff, r)
    k1 = eff.k1
    a, b = ker.clip(-math.inf, 0.0)
    body = _quad(lambda v: ker(v) * -math.expm1(v), a, b, "u < 1 integral",
                 points=[ker.centre])
    if not include_tail:
        return body

    if k1 == 0.0:
        tail_payoff = lambda v: math.exp(v) * v
    else:
        tail_payoff = lambda v: math.exp(v) * -math.expm1(-k1 * v) / k1
    a, b = ker.clip(0.0, math.inf)
    tail = _quad(lambda v: ker(v) * tail_payoff(v), a, b, "u > 1 integral",
                 points=[ker.centre])
    return body + tail


# ---------------------------------------------------------------------------
# finite-difference PDE residuals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FdGrid:
    """Tensor grid of valuation points with the domain the stencil must respect.

    ``lower``/``upper`` bound s (barrier, or u = 1 for the reduced lookback);
    the stencil reaches 2 steps of relative size ``rel_step`` in s and
    2 steps of ``dt`` in t.
    """

    t: Sequence[float]
    s: Sequence[float]
    T: float
    lower: float = 0.0
    upper: float = math.inf
    rel_step: float = 1e-3
    dt: float = 1e-5

    def points(self):
        tt, ss = np.meshgrid(np.asarray(self.t, float), np.asarray(self.s, float), indexing="ij")
        return tt.ravel(), ss.ravel()

    def check(self, rel_step=None, dt=None):
        rel_step = self.rel_step if rel_step is None else rel_step
        dt = self.dt if dt is None else dt
        t, s = self.points()
        if np.any(s * (1 - 2 * rel_step) <= self.lower) or np.any(s * (1 + 2 * rel_step) >= self.upper):
            raise ValueError("grid touches the domain boundary; move it inside")
        if np.any(t - 2 * dt < 0) or np.any(t + 2 * dt >= self.T):
            raise ValueError("time stencil leaves [0, T)")

    def describe(self) -> str:
        return (f"t in [{min(self.t):g}, {max(self.t):g}] x {len(self.t)}, "
                f"s in [{min(self.s):g}, {max(self.s):g}] x {len(self.s)}")


def _central(fn, t, s, hs, ht):
    f0 = fn(t, s)
    fp, fm = fn(t, s + hs), fn(t, s - hs)
    p_s = (fp - fm) / (2 * hs)
    p_ss = (fp - 2 * f0 + fm) / hs**2
    p_t = (fn(t + ht, s) - fn(t - ht, s)) / (2 * ht)
    return f0, p_t, p_s, p_ss


def _operator(fn, eff, r, t, s, rel_step, dt, richardson):
    def once(k):
        f0, p_t, p_s, p_ss = _central(fn, t, s, rel_step * s / k, dt / k)
        return p_t + r * s * p_s + 0.5 * eff.f2bar * s * s * p_ss - r * f0

    coarse = once(1.0)
    if not richardson:
        return coarse
    return (4.0 * once(2.0) - coarse) / 3.0


def _residual_report(name, fn, source, eff, r, grid: FdGrid, scale, tolerance,
                     order_steps=(1e-2, 1e-2)):
    grid.check()
    t, s = grid.points()
    src = source(t, s)
    res = np.abs(_operator(fn, eff, r, t, s, grid.rel_step, grid.dt, True) - src) / scale
    # convergence of the plain second-order stencil from a coarse start
    rel0, dt0 = order_steps
    dt0 = min(dt0, 0.2 * float(np.min(np.minimum(t, grid.T - t))))
    grid.check(rel0, dt0)
    errs = [
        float(np.max(np.abs(_operator(fn, eff, r, t, s, rel0 / k, dt0 / k, False) - src)) / scale)
        for k in (1, 2, 4, 8)
    ]
    orders = [math.log2(a / b) if b > 0 and a > 0 else math.inf for a, b in zip(errs, errs[1:])]
    return ResidualReport.make(
        name, float(np.max(res)), grid.describe(), tolerance,
        scale=scale, plain_residuals=errs, observed_orders=orders,
    )


def pde_residual_p0(price_fn: Callable, eff: EffectiveParams, r: float, grid: FdGrid,
                    scale: float = 1.0, tolerance: float = 1e-5) -> ResidualReport:
    """max |L P0| / scale over the grid; ``price_fn(t, s)`` must accept arrays."""
    zero = lambda t, s: np.zeros_like(s)
    return _residual_report("pde_p0", price_fn, zero, eff, r, grid, scale, tolerance)


def pde_residual_p1(p1_fn: Callable, p0_derivs_fn: Callable, eff: EffectiveParams, r: float,
                    coeffs: CorrectionCoeffs, grid: FdGrid, scale: float = 1.0,
                    tolerance: float = 1e-4) -> ResidualReport:
    """max |L P1 - (c1 s^3 P0''' + c2 s^2 P0'')| / scale.

    ``p0_derivs_fn(t, s)`` returns the analytic (s P0', s^2 P0'', s^3 P0''').
    """

    def source(t, s):
        _, d2, d3 = p0_derivs_fn(t, s)
        return coeffs.c1 * np.asarray(d3) + coeffs.c2 * np.asarray(d2)

    return _residual_report("pde_p1", p1_fn, source, eff, r, grid, scale, tolerance)


# ---------------------------------------------------------------------------
# Crank-Nicolson solve of the first-correction PDE
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CnSolution:
    """P1 on a log grid at time to expiry ``tau`` (x = ln s, or ln u for lookbacks)."""

    x: np.ndarray
    values: np.ndarray
    tau: float

    def at(self, x):
        return np.interp(x, self.x, self.values)


def _source_grid(kind, spec, eff, r, coeffs, x, tau):
    """c1 D3 + c2 D2 of the (extended) zero-order price on the log grid."""
    if kind == "dop":
        inp = PricingInputs(spec.T - tau, np.exp(x), spec, eff, coeffs, r)
        E = dop_euler_derivs(inp, extended=True)
    else:
        E = lookback_euler_derivs(np.exp(x), 1.0, tau, eff, r)
    _, d2, d3 = _scaled_from_euler(E)
    return coeffs.c1 * d3 + coeffs.c2 * d2


def _closed_form_p1(kind, spec, eff, r, coeffs, x, tau):
    if kind == "dop":
        inp = PricingInputs(spec.T - tau, np.exp(x), spec, eff, coeffs, r)
        E = dop_euler_derivs(inp, extended=True)
    else:
        E = lookback_euler_derivs(np.exp(x), 1.0, tau, eff, r)
    d1, d2, d3 = _scaled_from_euler(E)
    return _p1_from_scaled(d1, d2, d3, coeffs, tau)


def solve_p1_cn(
    spec,
    eff: EffectiveParams,
    r: float,
    coeffs: CorrectionCoeffs,
    boundary: str = "extended",
    tau: Optional[float] = None,
    n_x: int = 3000,
    n_t: int = 800,
    width: float = 14.0,
    rannacher_steps: int = 4,
) -> CnSolution:
    """Solve dP1/dtau = A P1 - (c1 D3 P0 + c2 D2 P0), P1(tau=0) = 0.

    ``boundary`` selects the problem:

    * ``"extended"``: full line, source from the continued zero-order formula,
      zero far-field values.  Its solution is the closed-form P1.
    * ``"trace"``: barrier or u = 1 side carries the closed-form P1 trace.
    * ``"zero"`` (barrier): P1 = 0 on s = B.
    * ``"neumann"`` (lookback): d/dz P1 = 0 at s = z, i.e. Q1 - u dQ1/du = 0.

    Lookbacks are solved for Q1(tau, u) = P1 / z.  The time grid is graded
    towards expiry, where the source is singular at the strike.
    """
    if isinstance(spec, DownAndOutPut):
        kind, edge = "dop", math.log(spec.B)
        centre = math.log(spec.K)
        valid = {"extended", "trace", "zero"}
    elif isinstance(spec, FloatingStrikeLookbackPut):
        kind, edge, centre = "lookback", 0.0, 0.0
        valid = {"extended", "trace", "neumann"}
    else:
        raise TypeError(f"unsupported contract {type(spec).__name__}")
    if boundary not in valid:
        raise ValueError(f"boundary must be one of {sorted(valid)} for this contract")
    tau_end = spec.T if tau is None else float(tau)
    sd = math.sqrt(eff.f2bar * tau_end)
    lo = min(edge, centre) - width * sd
    hi = max(edge, centre) + width * sd
    if boundary != "extended":
        if kind == "dop":
            lo = edge
        else:
            hi = edge
    x = np.linspace(lo, hi, n_x)
    h = x[1] - x[0]

    # A = 1/2 f2 (Dxx - Dx) + r Dx - r on interior nodes
    a2 = 0.5 * eff.f2bar
    a1 = r - a2
    lower = a2 / h**2 - a1 / (2 * h)
    diag = -2 * a2 / h**2 - r
    upper = a2 / h**2 + a1 / (2 * h)

    n = n_x
    robin = boundary == "neumann"
    # boundary values: index 0 (left) and n-1 (right)
    def edge_values(tt):
        if boundary != "trace":
            return 0.0, 0.0
        val = float(_closed_form_p1(kind, spec, eff, r, coeffs, np.array([edge]), tt)[0])
        return (val, 0.0) if kind == "dop" else (0.0, val)

    def apply_A(v):
        out = np.zeros_like(v)
        out[1:-1] = lower * v[:-2] + diag * v[1:-1] + upper * v[2:]
        if robin:
            # ghost node v[n] = v[n-2] + 2 h v[n-1]
            out[-1] = lower * v[-2] + diag * v[-1] + upper * (v[-2] + 2 * h * v[-1])
        return out

    def banded(theta, dt):
        ab = np.zeros((3, n))
        ab[0, 2:] = -theta * dt * upper
        ab[1, 1:-1] = 1 - theta * dt * diag
        ab[2, :-2] = -theta * dt * lower
        ab[1, 0] = 1.0
        if robin:
            ab[2, n - 2] = -theta * dt * (lower + upper)
            ab[1, n - 1] = 1 - theta * dt * (diag + 2 * h * upper)
        else:
            ab[1, n - 1] = 1.0
        return ab

    taus = tau_end * (np.arange(n_t + 1) / n_t) ** 2
    v = np.zeros(n)
    for i in range(n_t):
        t0, t1 = taus[i], taus[i + 1]
        if i < rannacher_steps:
            # two implicit half steps damp the singular start
            subs = [(t0, 0.5 * (t0 + t1)), (0.5 * (t0 + t1), t1)]
            theta = 1.0
        else:
            subs = [(t0, t1)]
            theta = 0.5
        for a, b in subs:
            dt = b - a
            g = _source_grid(kind, spec, eff, r, coeffs, x, 0.5 * (a + b))
            rhs = v + (1 - theta) * dt * apply_A(v) - dt * g
            left, right = edge_values(b)
            rhs[0] = left
            if not robin:
                rhs[-1] = right
            v = solve_banded((1, 1), banded(theta, dt), rhs)
    return CnSolution(x, v, tau_end)


# ---------------------------------------------------------------------------
# boundary measurements
# ---------------------------------------------------------------------------


def boundary_report(spec, eff: EffectiveParams, r: float, coeffs: CorrectionCoeffs,
                    eps: float = 0.0, t_grid: Optional[Sequence[float]] = None,
                    z: float = 2000.0, rel_step: float = 1e-4,
                    tolerance: float = 1e-10) -> list:
    """Boundary residuals on a t-grid.

    Barrier: |P0(t,B)|/K (asserted) and |P1(t,B)|/K (diagnostic).
    Lookback: |dP0/dz|, |dP1/dz| at s = z by central differences in z
    (P0 asserted at ``tolerance`` relative to z-scale 1e-6, P1 diagnostic).
    """
    if not isinstance(spec, (DownAndOutPut, FloatingStrikeLookbackPut)):
        raise TypeError(f"unsupported contract {type(spec).__name__}")
    if t_grid is None:
        t_grid = np.linspace(0.0, 0.9, 10) * spec.T
    t_grid = np.asarray(t_grid, dtype=float)
    desc = f"t in [{t_grid.min():g}, {t_grid.max():g}] x {t_grid.size}"
    sq = math.sqrt(eps)
    if isinstance(spec, DownAndOutPut):
        inp = PricingInputs(t_grid, spec.B, spec, eff, coeffs, r, eps)
        E = dop_euler_derivs(inp, extended=True)
        d1, d2, d3 = _scaled_from_euler(E)
        p0 = np.abs(np.asarray(E[0])) / spec.K
        p1 = np.abs(_p1_from_scaled(d1, d2, d3, coeffs, inp.tau)) / spec.K
        return [
            ResidualReport.make("barrier_p0", p0.max(), desc, tolerance,
                                values=p0.tolist()),
            ResidualReport.make("barrier_p1", p1.max(), desc, None, diagnostic=True,
                                values=p1.tolist(), sqrt_eps_scaled=(sq * p1).tolist()),
        ]
    if isinstance(spec, FloatingStrikeLookbackPut):
        dz = rel_step * z

        def dz_of(fn):
            up = fn(PricingInputs(t_grid, z, spec, eff, coeffs, r, eps, z=z + dz))
            dn_tau = spec.T - t_grid
            # below z the formula is continued past s <= z
            E = lookback_euler_derivs(z, z - dz, dn_tau, eff, r)
            d1, d2, d3 = _scaled_from_euler(E)
            dn = E[0] if fn is p0_lookback else _p1_from_scaled(d1, d2, d3, coeffs, dn_tau)
            return (np.asarray(up) - np.asarray(dn)) / (2 * dz)

        g0 = np.abs(dz_of(p0_lookback))
        g1 = np.abs(dz_of(p1_lookback))
        return [
            ResidualReport.make("lookback_dz_p0", g0.max(), desc, 1e-6,
                                values=g0.tolist()),
            ResidualReport.make("lookback_dz_p1", g1.max(), desc, None, diagnostic=True,
                                values=g1.tolist(), sqrt_eps_scaled=(sq * g1).tolist()),
        ]
    raise TypeError(f"unsupported contract {type(spec).__name__}")


def boundary_consistent_p1(spec, eff: EffectiveParams, r: float, coeffs: CorrectionCoeffs,
                           s, z=None, **cn_options):
    """First correction at t = 0 solved with the contract's own boundary condition.

    Barrier: P1 = 0 on s = B.  Lookback: dP1/dz = 0 at s = z (z defaults to s).
    Returned for comparison with the closed form, which satisfies neither.
    """
    s = np.asarray(s, dtype=float)
    if isinstance(spec, DownAndOutPut):
        sol = solve_p1_cn(spec, eff, r, coeffs, "zero", **cn_options)
        out = np.where(s > spec.B, sol.at(np.log(np.maximum(s, spec.B))), 0.0)
    else:
        z = s if z is None else np.asarray(z, dtype=float)
        sol = solve_p1_cn(spec, eff, r, coeffs, "neumann", **cn_options)
        out = z * sol.at(np.log(s / z))
    return float(out) if out.ndim == 0 else out
