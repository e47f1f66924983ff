"""Fast mean-reverting stochastic-volatility pricing of barrier and lookback puts."""

from .closed_form import (
    PriceBreakdown,
    PricingInputs,
    approx_price,
    p0_dop,
    p0_lookback,
    p1_dop,
    p1_lookback,
)
from .model import (
    ArctanVol,
    ConstantVol,
    CorrectionCoeffs,
    DownAndOutPut,
    EffectiveParams,
    FloatingStrikeLookbackPut,
    SvModelParams,
    demo_model,
    effective_params,
    structural_c1_c2,
)

__all__ = [
    "ArctanVol",
    "ConstantVol",
    "CorrectionCoeffs",
    "DownAndOutPut",
    "EffectiveParams",
    "FloatingStrikeLookbackPut",
    "PriceBreakdown",
    "PricingInputs",
    "SvModelParams",
    "approx_price",
    "demo_model",
    "effective_params",
    "p0_dop",
    "p0_lookback",
    "p1_dop",
    "p1_lookback",
    "structural_c1_c2",
]
