import numpy as np
import pytest

from upliftemm import (
    ContinuousJumpSpec,
    Density,
    DiscreteJumpSpec,
    DiscretePlan,
    MarketSpec,
    TimeFunction,
)

# The canonical worked instance used throughout: three stocks, one
# Brownian driver, three Poisson drivers.  Reducing away driver 2 leaves
# a 3x3 system constructed to have the solution
# (theta, lam~_0, lam~_1) = (0.5, 1.5, 1.2).
RATE = 0.02
EXCESS = np.array([0.19, 0.155, -0.06])
SIGMA = [0.2, 0.3, 0.1]
LOADINGS = [
    [0.1, -0.2, 0.2],
    [0.05, 0.1, -0.15],
    [-0.1, 0.3, 0.25],
]
INTENSITIES = [2.0, 1.0, 3.0]
TARGET_SOLUTION = np.array([0.5, 1.5, 1.2])


def make_three_stock_market(horizon: float = 1.0) -> MarketSpec:
    return MarketSpec(
        horizon=horizon,
        s0=[100.0, 50.0, 25.0],
        alpha=list(EXCESS + RATE),
        rate=RATE,
        sigma=[[s] for s in SIGMA],
        jumps=DiscreteJumpSpec(intensities=INTENSITIES, loadings=LOADINGS),
    )


@pytest.fixture
def three_stock_market() -> MarketSpec:
    return make_three_stock_market()


@pytest.fixture
def neglect_plan() -> DiscretePlan:
    return DiscretePlan(retain=(0, 1), neglect=(2,))


@pytest.fixture
def batch_plan() -> DiscretePlan:
    return DiscretePlan(retain=(0,), batches=((1, 2),))


def make_uniform_mark_market() -> MarketSpec:
    """Two stocks, one Brownian, uniform marks on (-0.5, 0.5) at rate 4."""
    return MarketSpec(
        horizon=1.0,
        s0=[100.0, 80.0],
        alpha=[0.08, 0.03],
        rate=RATE,
        sigma=[[0.25], [0.4]],
        jumps=ContinuousJumpSpec(
            density=Density("uniform", (-0.5, 0.5), {}),
            total_intensity=4.0,
        ),
    )


@pytest.fixture
def uniform_mark_market() -> MarketSpec:
    return make_uniform_mark_market()


def make_time_varying_market() -> MarketSpec:
    """The three-stock market with lambda_2(t) = 1 + t and matching drift.

    The drift is constructed so the batched reduction (batch drivers 1
    and 2) solves to theta* = 0.5, lam~*_0 = 1.5, gamma* = 0.8 * gamma(t)
    at every grid time.
    """
    grid = np.linspace(0.0, 1.0, 256)
    lam2 = TimeFunction.samples([0.0, 1.0], [1.0, 2.0])
    lam = [TimeFunction.constant(2.0), TimeFunction.constant(1.0), lam2]
    theta, lam0_star = 0.5, 1.5
    gamma = 1.0 + (1.0 + grid)
    gamma_star = 0.8 * gamma
    alphas = []
    for i in range(3):
        ybar = (1.0 * LOADINGS[i][1] + (1.0 + grid) * LOADINGS[i][2]) / gamma
        a = (
            RATE
            + SIGMA[i] * theta
            + (2.0 - lam0_star) * LOADINGS[i][0]
            + (gamma - gamma_star) * ybar
        )
        alphas.append(TimeFunction.samples(grid, a))
    return MarketSpec(
        horizon=1.0,
        s0=[100.0, 50.0, 25.0],
        alpha=alphas,
        rate=RATE,
        sigma=[[s] for s in SIGMA],
        jumps=DiscreteJumpSpec(intensities=lam, loadings=LOADINGS),
    )


@pytest.fixture
def time_varying_market() -> MarketSpec:
    return make_time_varying_market()
