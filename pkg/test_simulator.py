#!/usr/bin/env python3
"""
财富模拟与纳什验证测试
TreeExact 与手算/闭式结果一致、EulerMC 的标准误与线程数无关性、单边偏离检验
"""

import numpy as np
import pytest

from conftest import build_game, path_cancellation_game
from core.exceptions import ConfigurationError, NashViolation
from core.nash_engine import NashEngine
from core.simulator import (
    SimConfig, SimScheme, deviation_family, enumerate_paths, relative_wealth, simulate_profile, verify_nash,
)
from core.single_agent import StrategyProfile, best_response
from core.tree import TreeProcess


def _constant_profile(game, amounts):
    driver = game.driver
    return StrategyProfile(TreeProcess.from_function(
        driver, lambda k: np.tile(np.asarray(amounts, dtype=float), (driver.n_nodes(k), 1))
    ), "constant")


@pytest.fixture(scope="module")
def hand_game():
    # ρ = 0.2，dt = 0.5，r = 0
    return build_game(r=0.0, mu=(0.05, 0.05), sigma=(0.25, 0.25), steps=2)


@pytest.fixture(scope="module")
def baseline_report():
    game = build_game()
    return game, NashEngine(game).classify()


# ---------------------------------------------------------------- TreeExact

def test_zero_strategies_keep_relative_wealth():
    game = build_game(r=0.0, steps=4)
    result = simulate_profile(game, StrategyProfile.zeros(game))
    assert result.paths == 16
    for est, z in zip(result.estimates, game.z):
        assert est.mean == pytest.approx(z, abs=1e-14)
        assert est.variance == pytest.approx(0.0, abs=1e-28)
        assert est.J_hat == pytest.approx(z, abs=1e-14)
        assert est.mean_se == 0.0


def test_two_step_hand_computed(hand_game):
    # 参与者 1 投入 0.4，σπ = 0.1: X_1(T) = 1 + 0.1 (0.2 + W_T)，Var W_T = 1
    result = simulate_profile(hand_game, _constant_profile(hand_game, [0.4, 0.0]))
    first, second = result.estimates
    assert first.mean == pytest.approx(0.25 + 0.02, abs=1e-14)
    assert first.variance == pytest.approx(0.01, abs=1e-14)
    assert first.J_hat == pytest.approx(0.27 - 0.01, abs=1e-14)
    assert second.mean == pytest.approx(0.99, abs=1e-14)
    assert second.variance == pytest.approx(0.0025, abs=1e-14)


def test_tree_exact_reproduces_single_agent_optimum():
    game = build_game()
    zeros = StrategyProfile.zeros(game)
    sol = best_response(game, 0, zeros)
    result = simulate_profile(game, zeros.replace_agent(0, sol.control))
    assert result.estimates[0].mean == pytest.approx(sol.d_star, abs=1e-10)
    assert result.estimates[0].variance == pytest.approx(sol.variance, rel=1e-8)
    assert result.estimates[0].J_hat == pytest.approx(sol.value, abs=1e-10)


def test_relative_wealth_and_table(hand_game):
    wealth = np.array([[1.0, 1.5], [2.0, 0.0]])
    assert np.allclose(relative_wealth(hand_game, wealth), [[0.25, 1.0], [2.0, -1.0]])

    result = simulate_profile(hand_game, StrategyProfile.zeros(hand_game))
    assert result.columns() == ["path_id", "weight", "Z_1", "Z_2"]
    table = result.per_path_table()
    assert table.shape == (4, 4)
    assert table[:, 1].sum() == pytest.approx(1.0)


def test_enumeration_limit():
    game = build_game(steps=26)
    with pytest.raises(ConfigurationError):
        enumerate_paths(game.driver, 24)


# ---------------------------------------------------------------- EulerMC

def _euler(paths, workers=1, antithetic=False):
    return SimConfig(paths=paths, seed=7, scheme="euler_mc", antithetic=antithetic, block_size=1000, workers=workers)


def test_euler_mean_within_standard_errors(hand_game):
    profile = _constant_profile(hand_game, [0.4, 0.0])
    small = simulate_profile(hand_game, profile, _euler(4000)).estimates[0]
    large = simulate_profile(hand_game, profile, _euler(8000)).estimates[0]
    assert abs(small.mean - 0.27) <= 4.0 * small.mean_se
    assert abs(large.mean - 0.27) <= 4.0 * large.mean_se
    assert 0.6 <= large.mean_se / small.mean_se <= 0.85


def test_euler_independent_of_worker_count(hand_game):
    profile = _constant_profile(hand_game, [0.4, 0.2])
    single = simulate_profile(hand_game, profile, _euler(10000, workers=1, antithetic=True))
    many = simulate_profile(hand_game, profile, _euler(10000, workers=8, antithetic=True))
    assert np.array_equal(single.terminal, many.terminal)
    assert single.to_dict() == many.to_dict()


def test_sim_config_validation():
    assert SimConfig(scheme="EULER_MC").scheme is SimScheme.EULER_MC
    with pytest.raises(ConfigurationError):
        SimConfig(scheme="milstein")
    with pytest.raises(ConfigurationError):
        SimConfig(paths=0)
    with pytest.raises(ConfigurationError):
        SimConfig(block_size=0)


# ---------------------------------------------------------------- 偏离族

def test_deviation_family_normalized_and_reproducible():
    driver = build_game().driver.expand()
    family = deviation_family(driver, 16, seed=3)
    assert len(family) == 16
    assert [d.ident for d in family[:2]] == ["bump[0]+", "bump[0]-"]
    for dev in family:
        norm2 = sum(float(driver.expectation(dev.direction.at(k) ** 2, k)) for k in range(driver.steps)) * driver.dt
        assert norm2 == pytest.approx(1.0, rel=1e-12)
        assert np.all(dev.direction.terminal == 0.0)

    again = deviation_family(driver, 16, seed=3)
    for a, b in zip(family, again):
        assert all(np.array_equal(a.direction.at(k), b.direction.at(k)) for k in range(driver.steps + 1))


# ---------------------------------------------------------------- 纳什验证

def test_equilibrium_passes_verification(baseline_report):
    game, report = baseline_report
    check = verify_nash(game, report.profile)
    assert check.passed
    assert max(check.best_response_gaps) <= 1e-6
    low, high = check.exponent_range()
    assert 1.9 <= low and high <= 2.1
    assert check.to_dict()["label"] == "sampled certificate"


def test_perturbed_profile_is_rejected(baseline_report):
    game, report = baseline_report
    scaled = report.profile.replace_agent(0, report.profile.agent(0) * 1.5, "scaled")
    with pytest.raises(NashViolation) as exc:
        verify_nash(game, scaled)
    assert exc.value.agent == 0
    assert exc.value.gap > 0.0
    assert not exc.value.report.passed


def test_path_cancellation_family_members_pass():
    game = path_cancellation_game()
    profiles = NashEngine(game).classify().profiles
    for profile in profiles[:2]:
        check = verify_nash(game, profile)
        assert check.passed
        assert max(check.best_response_gaps) <= 1e-8
        # 终端相对财富为常数
        assert all(o.variance == pytest.approx(0.0, abs=1e-20) for o in check.objectives)
