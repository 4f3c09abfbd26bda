"""Equilibrium mean-variance asset-liability management with liability-dependent risk aversion."""

from .market import (
    CoefficientCurve,
    DomainError,
    MarketModel,
    RiskPreferences,
    StatePoint,
    reference_market,
    reference_preferences,
    validate,
)

__all__ = [
    "CoefficientCurve",
    "DomainError",
    "MarketModel",
    "RiskPreferences",
    "StatePoint",
    "reference_market",
    "reference_preferences",
    "validate",
]
