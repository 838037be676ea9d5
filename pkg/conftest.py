"""
测试公共构造
"""

import numpy as np
import pytest

from core.market_model import (
    AgentSpec, CoefficientProcess, Constant, MarketBounds, MarketSpec, NodeFunction, validate_market,
)
from core.tree import build_driver


def _coef(value):
    return value if isinstance(value, CoefficientProcess) else Constant(float(value))


def build_game(r=0.03, mu=(0.08, 0.08), sigma=(0.25, 0.25), theta=(0.5, 0.5), gamma=(2.0, 3.0),
               x0=(1.0, 1.5), steps=10, mode="recombining", horizon=1.0, r_max=1.0, sigma_c=10.0):
    """默认参数即基准博弈: r、ρ 为常数且两人 ρ 相同，Ψ = 2/3"""
    n = len(theta)
    spec = MarketSpec(n, horizon, _coef(r), [_coef(m) for m in mu], [_coef(s) for s in sigma],
                      MarketBounds(r_max, sigma_c))
    agents = [AgentSpec(t, g, x) for t, g, x in zip(theta, gamma, x0)]
    return validate_market(spec, agents, build_driver(horizon, steps, mode))


def path_cancellation_game(theta=(1.0, 1.0), gamma=(2.0, 3.0), x0=(1.0, 1.5), sigma=0.25, rho0=0.2):
    """
    两步重组树，T = 1
    第 0 步 ρ = rho0、r = 0；第 1 步 ρ = 0，上行节点 r = 0，下行节点 r 取值使
    Σ[log(1 + r dt) - log(1 - ρΔW)] 在两条分支上相同
    """
    dt = 0.5
    x = rho0 * np.sqrt(dt)
    r_down = 2.0 * x / ((1.0 - x) * dt)
    r = NodeFunction.from_table([[0.0], [r_down, 0.0]], "r")
    mu = NodeFunction.from_table([[sigma * rho0], [r_down, 0.0]], "mu")
    n = len(theta)
    spec = MarketSpec(n, 1.0, r, [mu] * n, [Constant(sigma)] * n, MarketBounds(1.0, 10.0))
    agents = [AgentSpec(t, g, x0_) for t, g, x0_ in zip(theta, gamma, x0)]
    return validate_market(spec, agents, build_driver(1.0, 2, "recombining"))


@pytest.fixture
def baseline_game():
    return build_game()


@pytest.fixture
def distinct_game():
    return build_game(mu=(0.07, 0.10), sigma=(0.20, 0.30), theta=(0.5, 0.3), gamma=(2.0, 4.0), x0=(1.0, 2.0))
