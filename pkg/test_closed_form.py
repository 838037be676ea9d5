#!/usr/bin/env python3
"""
闭式解测试
确定系数积分、可行性证书、拉格朗日乘子与前沿
"""

import numpy as np
import pytest

from conftest import build_game
from core.closed_form import (
    decoupled_shift, feasibility_check, frontier_minimizer, frontier_table, frontier_variance,
    h_check_closed, integrate_deterministic, lagrange_and_mean, p_closed,
)
from core.exceptions import DenominatorDegenerate
from core.market_model import Constant, NodeFunction, PiecewiseDeterministic

# 一组典型的 t=0 量: p0·ȟ0² < 1
P0, HC0, HT0, Z, GAMMA = 1.02, -0.97, 0.05, 0.25, 2.0


def test_integrate_constant_piecewise_and_callable():
    assert integrate_deterministic(0.03, 0.0, 2.0) == pytest.approx(0.06)
    assert integrate_deterministic(Constant(0.2), 0.0, 1.0, power=2) == pytest.approx(0.04)
    pw = PiecewiseDeterministic((0.25, 0.75), (0.01, 0.02, 0.05))
    assert integrate_deterministic(pw, 0.0, 1.0) == pytest.approx(0.25 * 0.01 + 0.5 * 0.02 + 0.25 * 0.05)
    assert integrate_deterministic(pw, 0.5, 0.6) == pytest.approx(0.1 * 0.02)
    assert integrate_deterministic(lambda t: t, 0.0, 1.0, power=2) == pytest.approx(1.0 / 3.0, rel=1e-12)
    assert integrate_deterministic(0.03, 1.0, 0.5) == 0.0


def test_closed_forms_with_piecewise_rate():
    r = PiecewiseDeterministic((0.5,), (0.02, 0.04))
    assert p_closed(r, 0.3, 0.0, 1.0) == pytest.approx(np.exp(2 * 0.03 - 0.09))
    assert h_check_closed(r, 0.5, 1.0) == pytest.approx(-np.exp(-0.02))
    # ȟ 与 ρ 无关
    assert h_check_closed(r, 0.0, 1.0) == pytest.approx(-np.exp(-0.03))


def test_lagrange_multiplier_is_minus_inverse_gamma():
    sol = lagrange_and_mean(P0, HC0, HT0, Z, GAMMA)
    product = P0 * HC0 ** 2
    assert sol.lambda_star == pytest.approx(-1.0 / GAMMA, rel=1e-12)
    assert sol.bound_product == pytest.approx(product)
    assert sol.variance == pytest.approx((1.0 - product) / (GAMMA ** 2 * product), rel=1e-10)
    assert sol.value == pytest.approx(sol.d_star - 0.5 * GAMMA * sol.variance)
    assert sol.shift == pytest.approx(decoupled_shift(P0, HC0, HT0, Z, GAMMA), rel=1e-12)


def test_optimal_mean_maximizes_frontier_objective():
    sol = lagrange_and_mean(P0, HC0, HT0, Z, GAMMA)
    grid = np.linspace(sol.d_star - 1.0, sol.d_star + 1.0, 401)
    values = grid - 0.5 * GAMMA * frontier_variance(P0, HC0, HT0, Z, grid)
    assert grid[np.argmax(values)] == pytest.approx(sol.d_star, abs=5e-3)
    assert np.max(values) <= sol.value + 1e-12


def test_frontier_minimizer_has_zero_variance():
    d0 = frontier_minimizer(HC0, HT0, Z)
    assert frontier_variance(P0, HC0, HT0, Z, d0) == pytest.approx(0.0, abs=1e-20)
    table = frontier_table(P0, HC0, HT0, Z, np.array([d0 - 1.0, d0, d0 + 1.0]))
    assert table.shape == (3, 2)
    assert table[0, 1] == pytest.approx(table[2, 1])
    assert table[1, 1] < table[0, 1]


def test_degenerate_denominator():
    with pytest.raises(DenominatorDegenerate):
        lagrange_and_mean(1.0, -1.0, 0.0, Z, GAMMA)
    with pytest.raises(DenominatorDegenerate):
        frontier_variance(1.2, -1.0, 0.0, Z, 0.0)


def test_feasibility_closed_form_for_deterministic_rate():
    game = build_game(steps=10)
    cert = feasibility_check(game)
    assert cert.closed_form
    assert all(cert.feasible)
    # E Σ ρ² ψ² dt 与 ∫ρ² e^{2r(T-t)} dt 同阶
    expected = 0.04 * (np.exp(0.06) - 1.0) / 0.06
    assert cert.integrals == pytest.approx([expected, expected], rel=0.05)


def test_feasibility_by_bsde_for_stochastic_rate():
    r = NodeFunction(lambda k, j: 0.02 + 0.01 * j / (k + 1))
    game = build_game(r=r, mu=(0.10, 0.12), sigma=(0.25, 0.3), steps=6)
    cert = feasibility_check(game)
    assert not cert.closed_form
    assert all(cert.feasible)
    assert cert.to_dict()["threshold"] == pytest.approx(1e-12)
