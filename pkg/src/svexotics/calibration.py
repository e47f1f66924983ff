"""Implied-volatility smile fit and its link to (c1, c2).

The first-order smile is affine in the log-moneyness-to-maturity ratio
LMMR = ln(K/s) / (T - t):

    I ~ a * LMMR + b,
    a = -c1 / <f^2>^{3/2},
    b = sqrt<f^2> + (c1 / <f^2>^{3/2}) (r + 3/2 <f^2>) - c2 / sqrt<f^2>.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

from .model import CorrectionCoeffs, EffectiveParams, Provenance

SMILE_COLUMNS = ("strike", "expiry", "spot", "t", "implied_vol")
VOL_BRACKET = (1e-6, 5.0)


class ArbitrageBoundError(ValueError):
    """Option price outside the no-arbitrage interval."""


class RankDeficientError(ValueError):
    """Smile regression has no spread in the regressor."""


class SmileFormatError(ValueError):
    """Malformed smile CSV row."""


def _require_positive(**values):
    for name, v in values.items():
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v!r}")


def bs_call_price(s: float, K: float, r: float, sigma: float, tau: float) -> float:
    """Black-Scholes call s N(d+) - K e^{-r tau} N(d-)."""
    _require_positive(s=s, K=K, sigma=sigma, tau=tau)
    if not math.isfinite(r):
        raise ValueError(f"rate must be finite, got {r!r}")
    v = sigma * math.sqrt(tau)
    d_plus = (math.log(s / K) + (r + 0.5 * sigma * sigma) * tau) / v
    return float(s * ndtr(d_plus) - K * math.exp(-r * tau) * ndtr(d_plus - v))


def implied_vol(price: float, s: float, K: float, r: float, tau: float) -> float:
    """Black-Scholes implied volatility of a call by bracketed Brent search."""
    _require_positive(s=s, K=K, tau=tau)
    lower = max(s - K * math.exp(-r * tau), 0.0)
    if not price > lower:
        raise ArbitrageBoundError(
            f"price {price!r} is not above the lower bound max(s - K e^(-r tau), 0) = {lower!r}")
    if not price < s:
        raise ArbitrageBoundError(f"price {price!r} is not below the upper bound s = {s!r}")

    target = lambda sig: bs_call_price(s, K, r, sig, tau) - price
    lo, hi = VOL_BRACKET
    while target(lo) > 0 and lo > 1e-300:
        lo *= 1e-3
    while target(hi) < 0:
        hi *= 2.0
        if hi > 1e6:
            raise ArbitrageBoundError(f"no volatility reproduces price {price!r}")
    if target(lo) >= 0:
        return lo
    sigma = brentq(target, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    resid = abs(target(sigma))
    if resid > 1e-12 * s:
        raise ArithmeticError(f"implied vol residual {resid:.3g} exceeds 1e-12 * s")
    return sigma


@dataclass(frozen=True)
class SmilePoint:
    strike: float
    expiry: float
    spot: float
    t: float
    implied_vol: float

    def __post_init__(self):
        _require_positive(strike=self.strike, spot=self.spot, implied_vol=self.implied_vol)
        if not self.expiry > self.t:
            raise ValueError(f"expiry {self.expiry!r} must exceed valuation time {self.t!r}")

    @property
    def lmmr(self) -> float:
        return math.log(self.strike / self.spot) / (self.expiry - self.t)


@dataclass(frozen=True)
class SmileFit:
    a: float
    b: float
    residual_rms: float
    n_points: int

    def to_record(self, coeffs: CorrectionCoeffs) -> dict:
        return {"a": self.a, "b": self.b, "residual_rms": self.residual_rms,
                "c1": coeffs.c1, "c2": coeffs.c2}


def fit_smile(points: Sequence[SmilePoint]) -> SmileFit:
    """Unweighted least squares of implied vol on LMMR."""
    points = tuple(points)
    if len(points) < 2:
        raise RankDeficientError(f"need at least 2 smile points, got {len(points)}")
    x = np.array([p.lmmr for p in points])
    y = np.array([p.implied_vol for p in points])
    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx <= (1e-14 * max(1.0, float(np.abs(x).max()))) ** 2 * len(x):
        raise RankDeficientError("all points share one log-moneyness-to-maturity ratio")
    a = float(dx @ (y - y.mean())) / sxx
    b = float(y.mean() - a * x.mean())
    resid = y - (a * x + b)
    return SmileFit(a, b, float(np.sqrt(np.mean(resid**2))), len(points))


def ab_from_c1_c2(coeffs: CorrectionCoeffs, eff: EffectiveParams, r: float) -> tuple:
    root = math.sqrt(eff.f2bar)
    scale = eff.f2bar * root
    a = -coeffs.c1 / scale
    b = root + (coeffs.c1 / scale) * (r + 1.5 * eff.f2bar) - coeffs.c2 / root
    return a, b


def c1_c2_from_ab(a: float, b: float, eff: EffectiveParams, r: float) -> CorrectionCoeffs:
    root = math.sqrt(eff.f2bar)
    c1 = -a * eff.f2bar * root
    c2 = root * ((root - b) - a * (r + 1.5 * eff.f2bar))
    return CorrectionCoeffs(c1, c2, Provenance.CALIBRATED)


def synthetic_smile(coeffs: CorrectionCoeffs, eff: EffectiveParams, r: float, spot: float,
                    strikes: Iterable[float], expiries: Iterable[float], t: float = 0.0) -> list:
    """Points lying exactly on the affine smile implied by (c1, c2)."""
    a, b = ab_from_c1_c2(coeffs, eff, r)
    out = []
    for T in expiries:
        for K in strikes:
            lm = math.log(K / spot) / (T - t)
            out.append(SmilePoint(K, T, spot, t, a * lm + b))
    return out


def read_smile_csv(source: Union[str, Path, io.TextIOBase]) -> list:
    """Parse ``strike,expiry,spot,t,implied_vol`` rows; errors carry line numbers."""
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            return read_smile_csv(fh)
    reader = csv.reader(source)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != SMILE_COLUMNS:
        raise SmileFormatError(f"line 1: expected header {','.join(SMILE_COLUMNS)}, got {header!r}")
    points = []
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(SMILE_COLUMNS):
            raise SmileFormatError(f"line {line}: expected {len(SMILE_COLUMNS)} fields, got {len(row)}")
        try:
            values = [float(c) for c in row]
        except ValueError as exc:
            raise SmileFormatError(f"line {line}: {exc}") from None
        try:
            points.append(SmilePoint(*values))
        except ValueError as exc:
            raise SmileFormatError(f"line {line}: {exc}") from None
    return points


def write_smile_csv(points: Sequence[SmilePoint], fh: io.TextIOBase) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(SMILE_COLUMNS)
    for p in points:
        w.writerow([repr(p.strike), repr(p.expiry), repr(p.spot), repr(p.t), repr(p.implied_vol)])
