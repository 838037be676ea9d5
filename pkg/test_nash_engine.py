#!/usr/bin/env python3
"""
纳什均衡引擎测试
通常情形的系数组装与分类、均衡策略的不动点性质、边际情形的三种判定
"""

from dataclasses import replace

import numpy as np
import pytest

import core.nash_engine as engine_module
from conftest import build_game, path_cancellation_game
from core.exceptions import DriverMismatch, MarginalCase, NotInvertible, NotMarginal
from core.lattice_bsde import BsdeSolution
from core.market_model import NodeFunction
from core.nash_engine import Classification, NashEngine, chi_samples
from core.settings import DEFAULT_SOLVER
from core.single_agent import StrategyProfile, best_response
from core.tree import TreeProcess


# ---------------------------------------------------------------- 通常情形

def test_hand_computed_coefficients_two_agents():
    game = build_game(mu=(0.07, 0.10), sigma=(0.20, 0.30), theta=(0.5, 0.5))
    rho0, rho1 = 0.2, 0.07 / 0.3
    delta = rho1 - rho0
    system = NashEngine(game).assemble_usual()

    # w = 1/3，Ψ = 2/3: M_00 = Δ/1.5，M_01 = 2Δ/1.5
    expected_B = np.array([[delta / 3.0 - rho0, 2.0 * delta / 3.0],
                           [-2.0 * delta / 3.0, -delta / 3.0 - rho1]])
    assert np.allclose(system.B.at(0)[0], expected_B, atol=1e-14)
    assert np.allclose(system.A.at(4)[2], -0.03 * np.eye(2))

    comps = NashEngine(game).components()
    f0 = comps.f.at(2)[1]
    expected_F0 = 0.5 * (delta / 1.5) * f0[0] + 0.5 * (2.0 * delta / 1.5) * f0[1]
    assert system.F.at(2)[1][0] == pytest.approx(expected_F0, rel=1e-12)


def test_identical_sharpe_decouples_the_system():
    engine = NashEngine(build_game())
    system = engine.assemble_usual()
    rho = 0.2
    assert np.allclose(system.B.at(3), -rho * np.eye(2))
    assert system.C.sup_norm() <= 1e-15
    assert system.F.sup_norm() <= 1e-15


def test_assemble_usual_rejects_marginal_case():
    with pytest.raises(MarginalCase):
        NashEngine(build_game(theta=(1.0, 1.0))).assemble_usual()
    with pytest.raises(NotMarginal):
        NashEngine(build_game()).assemble_marginal()


def test_equilibrium_exposures_solve_best_response_system():
    game = build_game(theta=(0.2, 0.5, 0.9), mu=(0.08,) * 3, sigma=(0.25,) * 3,
                      gamma=(2.0, 3.0, 4.0), x0=(1.0, 1.5, 2.0), steps=4)
    rng = np.random.default_rng(11)
    phi = TreeProcess.from_function(game.driver, lambda k: rng.standard_normal((k + 1, 3)))
    exposures = NashEngine.equilibrium_exposures(game, phi)

    # s_i = θ_i/(n-1) Σ_{j≠i} s_j - φ_i
    T = game.theta[:, None] / 2.0 * (1.0 - np.eye(3))
    for k in range(5):
        expected = np.linalg.solve(np.eye(3) - T, -phi.at(k).T).T
        assert np.allclose(exposures.at(k), expected, atol=1e-12)


def test_baseline_unique_matches_closed_form():
    game = build_game()
    report = NashEngine(game).classify()
    assert report.classification is Classification.UNIQUE
    assert report.psi == pytest.approx(2.0 / 3.0)
    assert len(report.profiles) == 1

    rho, r = 0.2, 0.03
    phi = -rho * np.exp(rho ** 2 - r) / game.gamma
    T = np.array([[0.0, 0.5], [0.5, 0.0]])
    expected = np.linalg.solve(np.eye(2) - T, -phi)
    assert report.profile.exposures(game).initial == pytest.approx(expected, rel=5e-3)
    assert max(report.diagnostics["fixed_point_residuals"]) <= 1e-8


def test_distinct_sharpe_correspondence(distinct_game):
    engine = NashEngine(distinct_game)
    report = engine.classify()
    assert report.classification is Classification.UNIQUE
    assert report.htilde.h.sup_norm() > 0.0
    assert report.diagnostics["correspondence_residual"] <= 1e-8
    scale = max(1.0, report.profile.amounts.sup_norm())
    assert max(report.diagnostics["fixed_point_residuals"]) <= 1e-8 * scale
    assert report.diagnostics["anticipated"]["kd_method"] in ("gamma-flow", "backward-dual")


def test_zero_competition_gives_classical_solutions():
    game = build_game(mu=(0.07, 0.10), sigma=(0.20, 0.30), theta=(0.0, 0.0))
    report = NashEngine(game).classify()
    assert report.classification is Classification.UNIQUE
    zeros = StrategyProfile.zeros(game)
    for i in range(game.n):
        classical = best_response(game, i, zeros)
        gap = (report.profile.agent(i) - classical.control).sup_norm(game.driver.steps - 1)
        assert gap <= 1e-10


# ---------------------------------------------------------------- 边际情形

def test_marginal_equal_sharpe_has_no_equilibrium():
    report = NashEngine(build_game(theta=(1.0, 1.0))).classify()
    assert report.classification is Classification.NONE
    assert report.witness["kind"] == "xi_nonzero"
    assert report.diagnostics["xi_norm"] > report.witness["threshold"]
    assert not report.profiles


def test_path_cancellation_market_has_a_family():
    game = path_cancellation_game()
    engine = NashEngine(game)
    assert engine.log_weight_spread(0)[1]
    assert engine.l_process_residual(0) <= 1e-12
    assert engine.xi_process(0).sup_norm(1) <= 1e-12

    report = engine.classify()
    assert report.classification is Classification.INFINITELY_MANY
    assert report.family["samples"] == ["chi=0", "chi=1", "chi=W"]
    assert [p.label for p in report.profiles] == ["chi=0", "chi=1", "chi=W"]
    assert max(report.diagnostics["marginal_sum_residuals"]) <= 1e-10
    assert "一个选择" in report.representative


def test_path_cancellation_relative_wealth_sums_to_zero():
    game = path_cancellation_game()
    assert game.z.sum() == pytest.approx(0.0, abs=1e-15)
    profile = NashEngine(game).classify().profiles[0]
    states = [best_response(game, i, profile, strict=False).state for i in range(game.n)]
    total = states[0] + states[1]
    assert total.sup_norm() <= 1e-10


def test_xi_vanishes_without_risk_premium():
    # ρ ≡ 0 不是合法市场，只用于检查 Ξ 的计算
    game = build_game(theta=(1.0, 1.0))
    flat = replace(game, rho=game.rho * 0.0)
    assert NashEngine(flat).xi_process(0).sup_norm() <= 1e-14


def test_marginal_coefficients_hand_computed():
    game = build_game(mu=(0.07, 0.10), sigma=(0.20, 0.30), theta=(1.0, 1.0))
    engine = NashEngine(game)
    chi = TreeProcess.constant(game.driver, 1.0)
    system = engine.assemble_marginal(chi)
    rho0, rho1 = 0.2, 0.07 / 0.3
    delta = rho1 - rho0
    assert np.allclose(system.B.at(0)[0], [[-rho0, delta / 2.0], [-delta / 2.0, -rho1]], atol=1e-14)

    f = engine.components().f.at(3)[2]
    assert system.F.at(3)[2][0] == pytest.approx(delta * f[1] / 2.0 - delta, rel=1e-12)
    assert system.F.at(3)[2][1] == pytest.approx(-delta * f[0] / 2.0 + delta, rel=1e-12)


def test_marginal_deterministic_distinct_sharpe_fails_criterion():
    game = build_game(mu=(0.07, 0.10), sigma=(0.20, 0.30), theta=(1.0, 1.0))
    report = NashEngine(game).classify()
    assert report.classification is Classification.NONE
    assert report.witness["kind"] == "criterion_fails"
    assert not report.diagnostics["criterion_holds"]
    assert not report.diagnostics["phi_vanishes"]


def test_marginal_general_coefficients_undecided():
    r = NodeFunction(lambda k, j: 0.02 + 0.01 * j / (k + 1))
    game = build_game(r=r, mu=(0.07, 0.10), sigma=(0.20, 0.30), theta=(1.0, 1.0), steps=4, mode="fullbinary")
    report = NashEngine(game).classify()
    assert report.classification is Classification.UNDECIDED
    assert report.witness["kind"] == "undecided"
    assert "phi_residual" in report.diagnostics


def test_chi_samples():
    rec = chi_samples(build_game(steps=4))
    assert [label for label, _ in rec] == ["chi=0", "chi=1", "chi=W"]
    full = chi_samples(build_game(steps=4, mode="fullbinary"))
    label, running_max = full[2]
    assert label == "chi=max(W)"
    assert np.all(running_max.at(4) >= 0.0)
    assert running_max.at(4).max() == pytest.approx(4 * np.sqrt(0.25))


def test_deterministic_marginal_verdict_follows_criterion(monkeypatch):
    game = build_game(mu=(0.07, 0.10), sigma=(0.20, 0.30), theta=(1.0, 1.0))
    engine = NashEngine(game)
    eta_prime = TreeProcess.stack(
        [fac.p.gain * fac.ystar / fac.p.h for fac in engine.factors()]
    ).map(lambda level: np.sum(level, axis=1))
    real_solve = engine_module.solve_linear_bsde

    # 标量 BSDE 的 η̂ 恰好抵消 η̂'，使 Φ ≡ 0 而判据仍不成立
    def cancelling(*args, **kwargs):
        sol = real_solve(*args, **kwargs)
        return BsdeSolution(sol.h, -eta_prime)
    monkeypatch.setattr(engine_module, "solve_linear_bsde", cancelling)

    report = engine.classify()
    assert report.diagnostics["phi_vanishes"]
    assert not report.diagnostics["criterion_holds"]
    assert report.classification is Classification.NONE
    assert report.witness["kind"] == "criterion_fails"


def test_general_marginal_solver_failure_is_undecided(monkeypatch):
    r = NodeFunction(lambda k, j: 0.02 + 0.01 * j / (k + 1))
    game = build_game(r=r, mu=(0.07, 0.10), sigma=(0.20, 0.30), theta=(1.0, 1.0), steps=4, mode="fullbinary")

    def singular(self, chi):
        raise NotInvertible(np.eye(2), False, 1.0)
    monkeypatch.setattr(NashEngine, "_marginal_phi", singular)
    report = NashEngine(game).classify()
    assert report.classification is Classification.UNDECIDED
    assert report.diagnostics["phi_residual"] is None
    assert "I - K 奇异" in report.diagnostics["note"]

    def broken(self, chi):
        raise TypeError("unsupported operand")
    monkeypatch.setattr(NashEngine, "_marginal_phi", broken)
    with pytest.raises(TypeError):
        NashEngine(game).classify()


# ---------------------------------------------------------------- 注入的 K、D

def _inject_kd(monkeypatch, D):
    real_complete = engine_module.complete_system

    def injected(system, settings=None):
        done = real_complete(system, settings)
        return replace(done, K=np.eye(done.n), D=np.asarray(D, dtype=float), kd_method="injected")
    monkeypatch.setattr(engine_module, "complete_system", injected)


def test_identity_k_with_zero_d_gives_kernel_family(monkeypatch):
    game = build_game(steps=6)
    reference = NashEngine(game).classify().profile
    _inject_kd(monkeypatch, np.zeros(2))

    report = NashEngine(game).classify()
    assert report.classification is Classification.INFINITELY_MANY
    assert report.diagnostics["kd_method"] == "injected"
    assert np.allclose(report.family["kernel_basis"], np.eye(2))
    assert np.allclose(report.family["particular"], 0.0)
    assert report.family["samples"] == [
        "pseudoinverse", "kernel[0]*1", "kernel[0]*-1", "kernel[1]*1", "kernel[1]*-1",
    ]
    assert [p.label for p in report.profiles] == report.family["samples"]
    # ρ 全相同时 c ≡ 0，核方向不改变策略
    for profile in report.profiles:
        assert (profile.amounts - reference.amounts).sup_norm() <= 1e-12


def test_identity_k_with_nonzero_d_has_no_equilibrium(monkeypatch):
    _inject_kd(monkeypatch, np.ones(2))
    report = NashEngine(build_game(steps=6)).classify()
    assert report.classification is Classification.NONE
    assert report.witness["kind"] == "D_not_in_image"
    assert report.witness["least_squares_residual"] == pytest.approx(np.sqrt(2.0))
    assert not report.profiles


# ---------------------------------------------------------------- 随节点变化的系数

def _node_rate_game(steps=4):
    r = NodeFunction(lambda k, j: 0.02 + 0.01 * j / (k + 1))
    return build_game(r=r, mu=(0.07, 0.10), sigma=(0.20, 0.30), theta=(0.5, 0.3), steps=steps)


def test_node_dependent_rate_lifts_to_full_binary():
    game = _node_rate_game()
    assert not game.driver.is_full_binary
    engine = NashEngine(game)
    assert engine.game.driver.is_full_binary

    report = engine.classify()
    assert report.classification is Classification.UNIQUE
    assert report.profile.amounts.driver.is_full_binary
    scale = max(1.0, report.profile.amounts.sup_norm())
    assert max(report.diagnostics["fixed_point_residuals"]) <= 1e-8 * scale

    sol = best_response(game, 0, StrategyProfile.zeros(game))
    assert sol.control.driver.is_full_binary
    assert sol.lambda_star == pytest.approx(-0.5)


def test_node_dependent_rate_beyond_full_binary_cap():
    settings = replace(DEFAULT_SOLVER, max_full_binary_steps=3)
    with pytest.raises(DriverMismatch):
        NashEngine(_node_rate_game(), settings)
    # 路径抵消市场的 Y* 在重组树上一致，不需要提升
    assert not NashEngine(path_cancellation_game()).game.driver.is_full_binary
