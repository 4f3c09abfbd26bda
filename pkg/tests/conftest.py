from __future__ import annotations

import numpy as np
import pytest

from mvalm import CoefficientCurve, MarketModel, reference_market, reference_preferences


def piecewise_market() -> MarketModel:
    return MarketModel(
        horizon=10.0,
        r=CoefficientCurve(np.array([0.0, 4.0, 7.0, 10.0]), np.array([0.05, 0.12, 0.08])),
        mu=0.5,
        sigma=0.3,
        alpha=CoefficientCurve(np.array([0.0, 5.0, 10.0]), np.array([0.1, 0.06])),
        beta=0.2,
        rho=CoefficientCurve(np.array([0.0, 3.0, 10.0]), np.array([0.6, 0.4])),
    )


@pytest.fixture(scope="session")
def market():
    return reference_market()


@pytest.fixture(scope="session")
def prefs():
    return reference_preferences()


@pytest.fixture(scope="session")
def pw_market():
    return piecewise_market()
