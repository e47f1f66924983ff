import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import bs_call, bs_put
from svexotics.calibration import (
    ArbitrageBoundError,
    RankDeficientError,
    SmileFormatError,
    SmilePoint,
    ab_from_c1_c2,
    bs_call_price,
    c1_c2_from_ab,
    fit_smile,
    implied_vol,
    read_smile_csv,
    synthetic_smile,
    write_smile_csv,
)
from svexotics.model import CorrectionCoeffs, EffectiveParams, Provenance

R = 0.035
EFF = EffectiveParams.from_variance(0.04, R)
BASE_COEFFS = CorrectionCoeffs(-0.004, -0.018)


def test_call_limits():
    assert bs_call_price(100.0, 1e-12, R, 0.2, 1.0) == pytest.approx(100.0, rel=1e-12)
    assert bs_call_price(100.0, 90.0, R, 1e-9, 1.0) == pytest.approx(100 - 90 * math.exp(-R), rel=1e-12)


def test_put_call_parity():
    c = bs_call_price(100.0, 100.0, R, 0.2, 1.0)
    p = bs_put(100.0, 100.0, R, 0.2, 1.0)
    assert c - p == pytest.approx(100.0 - 100.0 * math.exp(-R), abs=1e-12)
    assert c == pytest.approx(bs_call(100.0, 100.0, R, 0.2, 1.0), rel=1e-13)


@pytest.mark.parametrize("args", [(0, 100, 0.2, 1), (100, 0, 0.2, 1), (100, 100, 0, 1), (100, 100, 0.2, 0)])
def test_call_domain_errors(args):
    s, K, sig, tau = args
    with pytest.raises(ValueError):
        bs_call_price(s, K, R, sig, tau)


@settings(max_examples=80, deadline=None)
@given(sigma=st.floats(0.01, 2.0), K=st.floats(50, 200), tau=st.floats(0.05, 5))
def test_implied_vol_round_trip(sigma, K, tau):
    price = bs_call_price(100.0, K, R, sigma, tau)
    lower = max(100.0 - K * math.exp(-R * tau), 0.0)
    # skip prices indistinguishable from the bound in double precision
    if price - lower < 1e-9 * 100:
        return
    assert implied_vol(price, 100.0, K, R, tau) == pytest.approx(sigma, abs=1e-10)


def test_implied_vol_near_lower_bound():
    lower = 100.0 - 100.0 * math.exp(-R)
    sig = implied_vol(lower + 1e-13, 100.0, 100.0, R, 1.0)
    assert 0 < sig < 0.05 and math.isfinite(sig)
    assert abs(bs_call_price(100.0, 100.0, R, sig, 1.0) - (lower + 1e-13)) < 1e-12 * 100


def test_implied_vol_bound_errors():
    lower = 100.0 - 100.0 * math.exp(-R)
    with pytest.raises(ArbitrageBoundError, match="lower bound"):
        implied_vol(lower, 100.0, 100.0, R, 1.0)
    with pytest.raises(ArbitrageBoundError, match="upper bound"):
        implied_vol(100.0, 100.0, 100.0, R, 1.0)


def test_vega_positive():
    sig = np.linspace(0.01, 2.0, 60)
    prices = [bs_call_price(100.0, 110.0, R, s, 0.5) for s in sig]
    assert np.all(np.diff(prices) > 0)


def test_fit_exact_line():
    pts = [SmilePoint(K, T, 100.0, 0.0, 0.03 * math.log(K / 100.0) / T + 0.21)
           for K in (80, 90, 100, 110, 120) for T in (0.5, 1.0)]
    fit = fit_smile(pts)
    assert fit.a == pytest.approx(0.03, abs=1e-12)
    assert fit.b == pytest.approx(0.21, abs=1e-12)
    assert fit.residual_rms < 1e-14 and fit.n_points == 10


def test_fit_duplicates_do_not_move_the_line():
    rng = np.random.default_rng(3)
    pts = [SmilePoint(K, 1.0, 100.0, 0.0, 0.2 + 0.01 * rng.standard_normal())
           for K in (80, 90, 100, 110, 120)]
    a = fit_smile(pts)
    b = fit_smile(pts + pts)
    assert (a.a, a.b) == pytest.approx((b.a, b.b), rel=1e-13)


def test_fit_rank_deficient():
    pts = [SmilePoint(100.0, 1.0, 100.0, 0.0, v) for v in (0.2, 0.21, 0.22)]
    with pytest.raises(RankDeficientError):
        fit_smile(pts)
    with pytest.raises(RankDeficientError):
        fit_smile(pts[:1])


def test_base_coefficients_forward_and_inverse():
    a, b = ab_from_c1_c2(BASE_COEFFS, EFF, R)
    assert a == pytest.approx(0.5, abs=1e-14)
    assert b == pytest.approx(0.2425, abs=1e-14)
    back = c1_c2_from_ab(0.5, 0.2425, EFF, R)
    assert back.c1 == pytest.approx(-0.004, abs=1e-14)
    assert back.c2 == pytest.approx(-0.018, abs=1e-14)
    assert back.provenance is Provenance.CALIBRATED


def test_flat_smile_means_zero_coefficients():
    assert ab_from_c1_c2(CorrectionCoeffs(0.0, 0.0), EFF, R) == (0.0, pytest.approx(0.2))
    c = c1_c2_from_ab(0.0, 0.2, EFF, R)
    assert c.c1 == 0.0 and c.c2 == pytest.approx(0.0, abs=1e-16)


@settings(max_examples=100, deadline=None)
@given(c1=st.floats(-0.1, 0.1), c2=st.floats(-0.1, 0.1), f2bar=st.floats(0.001, 1.0),
       r=st.floats(-0.05, 0.2))
def test_maps_are_mutual_inverses(c1, c2, f2bar, r):
    eff = EffectiveParams.from_variance(f2bar, r)
    a, b = ab_from_c1_c2(CorrectionCoeffs(c1, c2), eff, r)
    back = c1_c2_from_ab(a, b, eff, r)
    assert back.c1 == pytest.approx(c1, abs=1e-14)
    assert back.c2 == pytest.approx(c2, abs=1e-14)


def test_synthetic_smile_recovers_base_coefficients():
    pts = synthetic_smile(BASE_COEFFS, EFF, R, 2000.0, [1900, 2000, 2200, 2400, 2700], [0.5, 1.0, 2.0])
    fit = fit_smile(pts)
    assert fit.a == pytest.approx(0.5, abs=1e-12)
    assert fit.b == pytest.approx(0.2425, abs=1e-12)
    c = c1_c2_from_ab(fit.a, fit.b, EFF, R)
    assert c.c1 == pytest.approx(-0.004, abs=1e-10)
    assert c.c2 == pytest.approx(-0.018, abs=1e-10)


def test_csv_round_trip_and_errors():
    pts = synthetic_smile(BASE_COEFFS, EFF, R, 2000.0, [1800, 2200], [1.0])
    buf = io.StringIO()
    write_smile_csv(pts, buf)
    assert read_smile_csv(io.StringIO(buf.getvalue())) == pts
    bad = "strike,expiry,spot,t,implied_vol\n1800,1,2000,0,0.2\n1900,1,2000,zero,0.2\n"
    with pytest.raises(SmileFormatError, match="line 3"):
        read_smile_csv(io.StringIO(bad))
    with pytest.raises(SmileFormatError, match="line 1"):
        read_smile_csv(io.StringIO("K,T\n1,2\n"))
    with pytest.raises(SmileFormatError, match="line 2"):
        read_smile_csv(io.StringIO("strike,expiry,spot,t,implied_vol\n1800,1,2000\n"))
    with pytest.raises(SmileFormatError, match="line 2"):
        read_smile_csv(io.StringIO("strike,expiry,spot,t,implied_vol\n1800,0,2000,0,0.2\n"))
