"""Fast mean-reverting stochastic volatility model.

Under the pricing measure the asset and the volatility driver follow

    dS = r S dt + f(Y) S dW^s
    dY = [(m - Y)/eps - sqrt(2) nu / sqrt(eps) * Lambda(Y)] dt
         + sqrt(2) nu / sqrt(eps) * (rho dW^s + sqrt(1 - rho^2) dW^y)

so that Y has invariant law N(m, nu^2) and mean-reversion rate 1/eps.  This
module holds the parameter types, the invariant average <h>, the effective
Black-Scholes variance <f^2> and the structural correction coefficients
(c1, c2) built from phi', the derivative of the solution of the Poisson
equation nu^2 phi'' + (m - y) phi' = f^2 - <f^2>.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Union

import numpy as np
from scipy import integrate

ArrayLike = Union[float, np.ndarray]

DEFAULT_GH_NODES = 64
# Width (in units of nu) of the one-sided window used for phi'.  The weight
# exp(-(u - y)^2 / (2 nu^2)) at the far end is below 1e-30.
PHI_WINDOW = 12.0
# Beyond this distance from m the invariant density itself underflows a double.
PHI_TAIL_CUTOFF = 38.0


class QuadratureError(ArithmeticError):
    """A quadrature could not produce a finite value."""


class TailExtrapolationError(QuadratureError):
    """phi' was requested so far in the tail that the invariant density underflows."""

    def __init__(self, y: float, cutoff: float):
        self.y = y
        self.cutoff = cutoff
        super().__init__(
            f"phi'({y!r}) requested beyond the tail cutoff |y - m| <= {cutoff!r}"
        )


# ---------------------------------------------------------------------------
# volatility and market-price-of-risk functions
# ---------------------------------------------------------------------------


class VolFunction:
    """Base class for f(y).  Subclasses are vectorised callables."""

    lower: float
    upper: float

    def __call__(self, y: ArrayLike) -> ArrayLike:  # pragma: no cover - abstract
        raise NotImplementedError

    def to_config(self) -> str:
        raise ValueError(f"{type(self).__name__} has no config representation")


@dataclass(frozen=True)
class ArctanVol(VolFunction):
    """f(y) = 0.35 (arctan(y) + pi/2) / pi + 0.05, with range (0.05, 0.40)."""

    lower: float = field(default=0.05, init=False)
    upper: float = field(default=0.40, init=False)

    def __call__(self, y):
        return 0.35 * (np.arctan(y) + np.pi / 2) / np.pi + 0.05

    def antiderivative(self, y):
        """A primitive of f, used only by independent test oracles."""
        y = np.asarray(y, dtype=float)
        prim_atan = y * np.arctan(y) - 0.5 * np.log1p(y * y)
        return 0.35 / np.pi * (prim_atan + np.pi / 2 * y) + 0.05 * y

    def to_config(self) -> str:
        return "arctan"


@dataclass(frozen=True)
class ConstantVol(VolFunction):
    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError(f"constant volatility must be positive, got {self.sigma!r}")

    @property
    def lower(self) -> float:
        return self.sigma

    @property
    def upper(self) -> float:
        return self.sigma

    def __call__(self, y):
        if np.ndim(y) == 0:
            return self.sigma
        return np.full(np.shape(y), self.sigma)

    def to_config(self) -> str:
        return f"const:{self.sigma!r}"


@dataclass(frozen=True)
class CustomVol(VolFunction):
    """User supplied f with declared bounds 0 < lower <= f <= upper."""

    fn: Callable[[ArrayLike], ArrayLike]
    lower: float
    upper: float

    def __post_init__(self):
        if not (0 < self.lower <= self.upper < math.inf):
            raise ValueError(f"invalid bounds for custom f: ({self.lower}, {self.upper})")

    def __call__(self, y):
        return self.fn(y)


class MarketPriceFn:
    """Base class for the combined market price of volatility risk Lambda(y)."""

    def __call__(self, y: ArrayLike) -> ArrayLike:  # pragma: no cover - abstract
        raise NotImplementedError

    @property
    def is_zero(self) -> bool:
        return False

    def to_config(self) -> str:
        raise ValueError(f"{type(self).__name__} has no config representation")


@dataclass(frozen=True)
class ConstantMarketPrice(MarketPriceFn):
    value: float = 0.0

    def __call__(self, y):
        if np.ndim(y) == 0:
            return self.value
        return np.full(np.shape(y), self.value)

    @property
    def is_zero(self) -> bool:
        return self.value == 0.0

    def to_config(self) -> str:
        return "zero" if self.is_zero else f"const:{self.value!r}"


ZERO_MARKET_PRICE = ConstantMarketPrice(0.0)


@dataclass(frozen=True)
class CustomMarketPrice(MarketPriceFn):
    fn: Callable[[ArrayLike], ArrayLike]

    def __call__(self, y):
        return self.fn(y)


def vol_from_config(text: str) -> VolFunction:
    text = text.strip()
    if text == "arctan":
        return ArctanVol()
    if text.startswith("const:"):
        return ConstantVol(float(text[len("const:"):]))
    raise ValueError(f"unknown volatility function {text!r} (expected 'arctan' or 'const:<sigma>')")


def market_price_from_config(text: str) -> MarketPriceFn:
    text = text.strip()
    if text == "zero":
        return ZERO_MARKET_PRICE
    if text.startswith("const:"):
        return ConstantMarketPrice(float(text[len("const:"):]))
    raise ValueError(f"unknown market price of risk {text!r} (expected 'zero' or 'const:<value>')")


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SvModelParams:
    r: float
    eps: float
    m: float
    nu: float
    rho: float
    f: VolFunction
    lam: MarketPriceFn = ZERO_MARKET_PRICE

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps!r}")
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu!r}")
        if not -1 < self.rho < 1:
            raise ValueError(f"rho must lie in (-1, 1), got {self.rho!r}")
        if not (self.f.lower > 0 and math.isfinite(self.f.upper)):
            raise ValueError("f must be bounded above and away from zero")

    @property
    def alpha(self) -> float:
        """Mean-reversion rate 1/eps."""
        return 1.0 / self.eps

    def with_eps(self, eps: float) -> "SvModelParams":
        return SvModelParams(self.r, eps, self.m, self.nu, self.rho, self.f, self.lam)

    def to_config(self) -> dict[str, Any]:
        return {
            "r": self.r,
            "eps": self.eps,
            "m": self.m,
            "nu": self.nu,
            "rho": self.rho,
            "f": self.f.to_config(),
            "lambda": self.lam.to_config(),
        }

    @classmethod
    def from_config(cls, cfg: dict[str, Any]) -> "SvModelParams":
        missing = [k for k in ("r", "eps", "m", "nu", "rho", "f") if k not in cfg]
        if missing:
            raise ValueError(f"model config missing fields: {', '.join(missing)}")
        return cls(
            r=float(cfg["r"]),
            eps=float(cfg["eps"]),
            m=float(cfg["m"]),
            nu=float(cfg["nu"]),
            rho=float(cfg["rho"]),
            f=vol_from_config(str(cfg["f"])),
            lam=market_price_from_config(str(cfg.get("lambda", "zero"))),
        )


def demo_model(eps: float = 0.001, rho: float = -0.4, r: float = 0.035) -> SvModelParams:
    """Arctan volatility with m = -0.8, nu = 0.6 and zero risk premium."""
    return SvModelParams(r=r, eps=eps, m=-0.8, nu=0.6, rho=rho, f=ArctanVol())


@dataclass(frozen=True)
class EffectiveParams:
    f2bar: float
    k1: float
    sigma_eff: float

    def __post_init__(self):
        if not self.f2bar > 0:
            raise ValueError(f"effective variance must be positive, got {self.f2bar!r}")
        if abs(self.sigma_eff**2 - self.f2bar) > 1e-12 * self.f2bar:
            raise ValueError("sigma_eff must equal sqrt(f2bar)")

    @classmethod
    def from_variance(cls, f2bar: float, r: float) -> "EffectiveParams":
        return cls(f2bar=f2bar, k1=2.0 * r / f2bar, sigma_eff=math.sqrt(f2bar))


class Provenance(str, Enum):
    CALIBRATED = "calibrated"
    STRUCTURAL = "structural"


@dataclass(frozen=True)
class CorrectionCoeffs:
    c1: float
    c2: float
    provenance: Provenance = Provenance.CALIBRATED

    def __post_init__(self):
        if not (math.isfinite(self.c1) and math.isfinite(self.c2)):
            raise ValueError(f"correction coefficients must be finite: ({self.c1}, {self.c2})")


ZERO_COEFFS = CorrectionCoeffs(0.0, 0.0)


@dataclass(frozen=True)
class DownAndOutPut:
    K: float
    B: float
    T: float

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"expiry must be positive, got {self.T!r}")
        if not 0 < self.B < self.K:
            raise ValueError(f"need 0 < B < K, got B={self.B!r}, K={self.K!r}")


@dataclass(frozen=True)
class FloatingStrikeLookbackPut:
    T: float

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"expiry must be positive, got {self.T!r}")


OptionSpec = Union[DownAndOutPut, FloatingStrikeLookbackPut]


# ---------------------------------------------------------------------------
# invariant averages
# ---------------------------------------------------------------------------


def _hermite_rule(n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.hermite.hermgauss(n_nodes)
    return x, w / math.sqrt(math.pi)


def _evaluate(h: Callable, y: np.ndarray) -> np.ndarray:
    values = np.asarray(h(y), dtype=float)
    if values.shape != y.shape:
        values = np.broadcast_to(values, y.shape) if values.ndim == 0 else np.array(
            [float(h(v)) for v in y]
        )
    bad = ~np.isfinite(values)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise QuadratureError(f"non-finite integrand at node y={y[i]!r}: {values[i]!r}")
    return values


def invariant_average(h: Callable, m: float, nu: float, n_nodes: int = DEFAULT_GH_NODES) -> float:
    """Gauss-Hermite approximation of <h> = E[h(Y)], Y ~ N(m, nu^2)."""
    if not nu > 0:
        raise ValueError(f"nu must be positive, got {nu!r}")
    x, w = _hermite_rule(n_nodes)
    y = m + math.sqrt(2.0) * nu * x
    return float(np.dot(w, _evaluate(h, y)))


def effective_params(model: SvModelParams, n_nodes: int = DEFAULT_GH_NODES) -> EffectiveParams:
    f2bar = invariant_average(lambda y: model.f(y) ** 2, model.m, model.nu, n_nodes)
    return EffectiveParams.from_variance(f2bar, model.r)


# ---------------------------------------------------------------------------
# phi' and structural (c1, c2)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhiPrime:
    """phi'(y) = (1 / (nu^2 Phi(y))) * int_{-inf}^{y} (f^2 - <f^2>) Phi du.

    The density ratio Phi(u)/Phi(y) is evaluated in one exponent, and the
    integral is taken from whichever tail is nearer (the full-line integral
    vanishes), so nothing underflows within the cutoff.
    """

    f: VolFunction
    m: float
    nu: float
    f2bar: float
    epsabs: float = 1e-13
    epsrel: float = 1e-12
    window: float = PHI_WINDOW
    cutoff: float = PHI_TAIL_CUTOFF

    def _scalar(self, y: float) -> float:
        m, nu = self.m, self.nu
        if abs(y - m) > self.cutoff * nu:
            raise TailExtrapolationError(y, m + math.copysign(self.cutoff * nu, y - m))
        f, f2bar, two_var = self.f, self.f2bar, 2.0 * nu * nu
        dy2 = (y - m) ** 2

        def integrand(u: float) -> float:
            return (f(u) ** 2 - f2bar) * math.exp((dy2 - (u - m) ** 2) / two_var)

        if y <= m:
            val, _ = integrate.quad(integrand, y - self.window * nu, y,
                                    epsabs=self.epsabs, epsrel=self.epsrel, limit=200)
        else:
            val, _ = integrate.quad(integrand, y, y + self.window * nu,
                                    epsabs=self.epsabs, epsrel=self.epsrel, limit=200)
            val = -val
        return val / (nu * nu)

    def __call__(self, y: ArrayLike) -> ArrayLike:
        if np.ndim(y) == 0:
            return self._scalar(float(y))
        arr = np.asarray(y, dtype=float)
        return np.array([self._scalar(v) for v in arr.ravel()]).reshape(arr.shape)


def phi_prime(model: SvModelParams, n_nodes: int = DEFAULT_GH_NODES) -> PhiPrime:
    eff = effective_params(model, n_nodes)
    return PhiPrime(model.f, model.m, model.nu, eff.f2bar)


def structural_c1_c2(model: SvModelParams, n_nodes: int = DEFAULT_GH_NODES) -> CorrectionCoeffs:
    """c1 = (sqrt2/2) rho nu <f phi'>,  c2 = (sqrt2/2) nu (2 rho <f phi'> - <Lambda phi'>)."""
    if isinstance(model.f, ConstantVol):
        return CorrectionCoeffs(0.0, 0.0, Provenance.STRUCTURAL)
    dphi = phi_prime(model, n_nodes)
    x, w = _hermite_rule(n_nodes)
    y = model.m + math.sqrt(2.0) * model.nu * x
    # nodes past the cutoff carry weights far below double resolution
    keep = np.abs(y - model.m) <= dphi.cutoff * model.nu
    y, w = y[keep], w[keep]
    dp = dphi(y)
    f_dphi = float(np.dot(w, _evaluate(model.f, y) * dp))
    lam_dphi = 0.0 if model.lam.is_zero else float(np.dot(w, _evaluate(model.lam, y) * dp))
    half_root2 = math.sqrt(2.0) / 2.0
    c1 = half_root2 * f_dphi * model.rho * model.nu
    c2 = half_root2 * (2.0 * model.rho * f_dphi - lam_dphi) * model.nu
    return CorrectionCoeffs(c1, c2, Provenance.STRUCTURAL)
