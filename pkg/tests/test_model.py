import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import gaussian_average
from svexotics.model import (
    ArctanVol,
    ConstantMarketPrice,
    ConstantVol,
    CorrectionCoeffs,
    CustomVol,
    DownAndOutPut,
    EffectiveParams,
    FloatingStrikeLookbackPut,
    PhiPrime,
    Provenance,
    QuadratureError,
    SvModelParams,
    TailExtrapolationError,
    demo_model,
    effective_params,
    invariant_average,
    phi_prime,
    structural_c1_c2,
    vol_from_config,
)

ARCTAN = ArctanVol()


def test_average_of_one_and_identity():
    assert invariant_average(lambda y: np.ones_like(y), 1.7, 0.3) == pytest.approx(1.0, abs=1e-14)
    assert invariant_average(lambda y: y, 0.3, 0.5) == pytest.approx(0.3, abs=1e-14)


def test_average_f2_matches_adaptive_quadrature():
    oracle = gaussian_average(lambda y: float(ARCTAN(y)) ** 2, -0.8, 0.6)
    got = invariant_average(lambda y: ARCTAN(y) ** 2, -0.8, 0.6)
    assert abs(got / oracle - 1) < 1e-10


def test_average_rejects_non_finite_node():
    with pytest.raises(QuadratureError, match="node"):
        invariant_average(lambda y: np.where(y > 0, np.inf, 0.0), 0.0, 1.0)


def test_node_doubling_is_stable():
    h = lambda y: ARCTAN(y) ** 2
    assert abs(invariant_average(h, -0.8, 0.6, 64) - invariant_average(h, -0.8, 0.6, 128)) < 1e-10


@settings(max_examples=40, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), m=st.floats(-2, 2), nu=st.floats(0.1, 2))
def test_average_is_linear(a, b, m, nu):
    h1 = lambda y: y**3 - y
    h2 = lambda y: y**2 + 1
    lhs = invariant_average(lambda y: a * h1(y) + b * h2(y), m, nu)
    rhs = a * invariant_average(h1, m, nu) + b * invariant_average(h2, m, nu)
    assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs), abs(a) * 50, abs(b) * 50)


def test_effective_params_constant_vol():
    model = SvModelParams(0.035, 0.01, 0.0, 1.0, 0.0, ConstantVol(0.2))
    eff = effective_params(model)
    assert eff.f2bar == pytest.approx(0.04, rel=1e-14)
    assert eff.k1 == pytest.approx(1.75, rel=1e-13)
    assert eff.sigma_eff == pytest.approx(0.2, rel=1e-14)
    zero = effective_params(SvModelParams(0.0, 0.01, 0.0, 1.0, 0.0, ConstantVol(0.3)))
    assert zero.k1 == 0.0


def test_effective_params_demo_model():
    eff = effective_params(demo_model())
    oracle = gaussian_average(lambda y: float(ARCTAN(y)) ** 2, -0.8, 0.6)
    assert abs(eff.f2bar / oracle - 1) < 1e-10
    assert eff.k1 == 2 * 0.035 / eff.f2bar
    assert 0.16 < eff.sigma_eff < 0.23


@settings(max_examples=30, deadline=None)
@given(m=st.floats(-3, 3), nu=st.floats(0.05, 3))
def test_f2bar_within_range_of_f2(m, nu):
    eff = effective_params(SvModelParams(0.01, 0.01, m, nu, 0.0, ARCTAN))
    assert 0.05**2 <= eff.f2bar <= 0.40**2


def test_phi_prime_zero_for_constant_vol():
    model = SvModelParams(0.03, 0.01, 0.0, 1.0, -0.5, ConstantVol(0.25))
    dphi = phi_prime(model)
    assert np.allclose(dphi(np.linspace(-2, 2, 9)), 0.0, atol=1e-14)


@pytest.mark.parametrize("y", np.linspace(-0.8 - 3 * 0.6, -0.8 + 3 * 0.6, 13))
def test_phi_prime_ode_residual(y):
    # nu^2 phi'' + (m - y) phi' = f^2 - <f^2>
    model = demo_model()
    dphi = phi_prime(model)
    f2bar = effective_params(model).f2bar
    h = 1e-4
    d2 = (dphi(y + h) - dphi(y - h)) / (2 * h)
    resid = model.nu**2 * d2 + (model.m - y) * dphi(y) - (ARCTAN(y) ** 2 - f2bar)
    assert abs(resid) < 1e-6


def test_phi_prime_ode_with_quadratic_custom_f():
    # f^2 = (y - m)^2 + 0.01 on the relevant range
    m, nu = 0.2, 0.5
    f = CustomVol(lambda y: np.sqrt((np.asarray(y) - m) ** 2 + 0.01), 0.1, 10.0)
    f2bar = nu**2 + 0.01
    dphi = PhiPrime(f, m, nu, f2bar)
    for y in (m - nu, m, m + nu):
        h = 1e-4
        d2 = (dphi(y + h) - dphi(y - h)) / (2 * h)
        resid = nu**2 * d2 + (m - y) * dphi(y) - ((y - m) ** 2 + 0.01 - f2bar)
        assert abs(resid) < 1e-6


def test_phi_prime_tail_error_reports_cutoff():
    dphi = phi_prime(demo_model())
    with pytest.raises(TailExtrapolationError) as info:
        dphi(-0.8 - 50 * 0.6)
    assert info.value.cutoff == pytest.approx(-0.8 - 38 * 0.6)


def test_structural_trivial_cases():
    const = SvModelParams(0.035, 0.01, -0.8, 0.6, -0.4, ConstantVol(0.2))
    c = structural_c1_c2(const)
    assert (c.c1, c.c2) == (0.0, 0.0) and c.provenance is Provenance.STRUCTURAL
    c = structural_c1_c2(demo_model(rho=0.0))
    assert c.c1 == 0.0 and c.c2 == 0.0


def test_structural_demo_matches_covariance_oracle():
    # <f phi'> = -(1/nu^2) Cov(F(Y), f^2(Y)) with F a primitive of f
    m, nu = -0.8, 0.6
    f2 = lambda y: float(ARCTAN(y)) ** 2
    F = lambda y: float(ARCTAN.antiderivative(y))
    f2bar = gaussian_average(f2, m, nu)
    cov = gaussian_average(lambda y: F(y) * f2(y), m, nu) - gaussian_average(F, m, nu) * f2bar
    f_dphi = -cov / nu**2
    c1 = math.sqrt(2) / 2 * -0.4 * nu * f_dphi
    got = structural_c1_c2(demo_model())
    assert abs(got.c1 / c1 - 1) < 1e-8
    assert got.c2 == 2 * got.c1
    assert got.c1 > 0


def test_structural_with_constant_market_price():
    base = structural_c1_c2(demo_model())
    model = SvModelParams(0.035, 0.001, -0.8, 0.6, -0.4, ARCTAN, ConstantMarketPrice(0.3))
    c = structural_c1_c2(model)
    # <Lambda phi'> = 0.3 <phi'> and <phi'> = -(1/nu^2) Cov(Y, f^2)
    m, nu = -0.8, 0.6
    f2 = lambda y: float(ARCTAN(y)) ** 2
    cov = gaussian_average(lambda y: y * f2(y), m, nu) - m * gaussian_average(f2, m, nu)
    lam_dphi = 0.3 * -cov / nu**2
    assert c.c1 == pytest.approx(base.c1, rel=1e-14)
    assert c.c2 - 2 * c.c1 == pytest.approx(-math.sqrt(2) / 2 * nu * lam_dphi, rel=1e-8)


@pytest.mark.parametrize("kwargs", [
    dict(eps=0.0), dict(nu=0.0), dict(rho=1.0), dict(rho=-1.0),
])
def test_model_validation(kwargs):
    base = dict(r=0.03, eps=0.01, m=0.0, nu=1.0, rho=0.0, f=ARCTAN)
    base.update(kwargs)
    with pytest.raises(ValueError):
        SvModelParams(**base)


def test_contract_and_vol_validation():
    with pytest.raises(ValueError):
        DownAndOutPut(K=100, B=120, T=1)
    with pytest.raises(ValueError):
        DownAndOutPut(K=100, B=80, T=0)
    with pytest.raises(ValueError):
        FloatingStrikeLookbackPut(T=-1)
    with pytest.raises(ValueError):
        ConstantVol(0.0)
    with pytest.raises(ValueError):
        EffectiveParams(0.04, 1.75, 0.3)
    with pytest.raises(ValueError):
        CorrectionCoeffs(math.nan, 0.0)


def test_arctan_range():
    y = np.linspace(-1e6, 1e6, 10001)
    v = ARCTAN(y)
    assert np.all(v > 0.05) and np.all(v < 0.40)


def test_config_round_trip():
    model = SvModelParams(0.02, 0.005, 0.1, 0.4, 0.3, ConstantVol(0.25), ConstantMarketPrice(0.1))
    cfg = model.to_config()
    assert SvModelParams.from_config(cfg) == model
    assert SvModelParams.from_config(demo_model().to_config()) == demo_model()
    assert vol_from_config("const:0.3") == ConstantVol(0.3)
    with pytest.raises(ValueError):
        vol_from_config("spline")
    with pytest.raises(ValueError, match="missing"):
        SvModelParams.from_config({"r": 0.1})
