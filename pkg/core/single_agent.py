"""
单个参与者的均值-方差问题
给定对手策略，求分解 BSDE、拉格朗日乘子、最优反馈控制与最优值
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .closed_form import (
    LagrangeSolution, decoupled_shift, feasibility_check, lagrange_and_mean, lq_value,
)
from .exceptions import (
    ConsistencyViolation, DenominatorDegenerate, DriverMismatch, Infeasible, PathDependenceError,
)
from .lattice_bsde import (
    BsdeSolution, HCheckSolution, RiccatiSolution, scheme_residual, solve_h_check,
    solve_linear_bsde, solve_p_bsde,
)
from .market_model import ValidatedGame
from .settings import DEFAULT_SOLVER, SolverSettings
from .tree import TreeProcess

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------- 策略组合

@dataclass(frozen=True, eq=False)
class StrategyProfile:
    """各参与者投资于自身资产的金额 π_i，向量过程 (n,)"""
    amounts: TreeProcess
    label: str = ""

    @classmethod
    def zeros(cls, game: ValidatedGame, label: str = "zero") -> "StrategyProfile":
        return cls(TreeProcess.zeros(game.driver, (game.n,)), label)

    @classmethod
    def from_exposures(cls, game: ValidatedGame, exposures: TreeProcess, label: str = "") -> "StrategyProfile":
        """由 σ_i π_i 得到 π_i"""
        return cls(exposures / game.sigma, label)

    @property
    def n(self) -> int:
        return self.amounts.value_shape[0]

    def exposures(self, game: ValidatedGame) -> TreeProcess:
        return self.amounts * game.sigma

    def agent(self, i: int) -> TreeProcess:
        return self.amounts.component(i)

    def replace_agent(self, i: int, control: TreeProcess, label: Optional[str] = None) -> "StrategyProfile":
        levels = []
        for level, own in zip(self.amounts.levels, control.levels):
            level = level.copy()
            level[:, i] = own
            levels.append(level)
        return StrategyProfile(TreeProcess(self.amounts.driver, tuple(levels)),
                               self.label if label is None else label)

    def expand(self) -> "StrategyProfile":
        return StrategyProfile(self.amounts.expand(), self.label)


def opponent_terms(game: ValidatedGame, i: int, profile: StrategyProfile):
    """
    对手项
        a_i = θ_i (σπ)̂_i = θ_i/(n-1) Σ_{k≠i} σ_k π_k
        b_i = θ_i (ρσπ)̂_i
    """
    n = game.n
    theta = game.theta[i]
    s = profile.exposures(game)
    mask = np.ones(n)
    mask[i] = 0.0
    weight = theta / (n - 1)
    a_hat = s.map(lambda level: weight * (level @ mask))
    b_hat = TreeProcess(game.driver, tuple(
        weight * ((rho * level) @ mask) for rho, level in zip(game.rho.levels, s.levels)
    ))
    return a_hat, b_hat


# ---------------------------------------------------------------- 市场因子

@dataclass(frozen=True, eq=False)
class MarketFactors:
    """只依赖市场与参与者参数的量: (p, Λ)、(ȟ, η̌)、Y*"""
    agent: int
    p: RiccatiSolution
    hcheck: HCheckSolution
    ystar: TreeProcess

    @property
    def p0(self) -> float:
        return float(self.p.h0)

    @property
    def hcheck0(self) -> float:
        return float(self.hcheck.h0)

    @property
    def bound_product(self) -> float:
        return self.hcheck.bound_product


def decoupled_wealth(game: ValidatedGame, i: int, y0: float,
                     settings: Optional[SolverSettings] = None) -> TreeProcess:
    """Y(k+1) = Y(k)(1 - ρΔW)/(1 + r dt)"""
    settings = settings or DEFAULT_SOLVER
    driver = game.driver
    rho = game.rho_of(i)
    sq, dt = driver.sqrt_dt, driver.dt

    def step(k: int, y: np.ndarray, sign: int) -> np.ndarray:
        return y * (1.0 - rho.at(k) * sign * sq) / (1.0 + game.r.at(k) * dt)
    return driver.forward(y0, step, settings.node_consistency_tol)


def lift_if_path_dependent(game: ValidatedGame, settings: Optional[SolverSettings] = None) -> ValidatedGame:
    """
    重组树上 r 或 ρ 随节点变化时 Y* 的前向递推可能依赖路径，此时在完全二叉树上重新取值

    Raises:
        DriverMismatch: 需要完全二叉树但步数超过上限
    """
    settings = settings or DEFAULT_SOLVER
    if game.driver.is_full_binary or game.deterministic_coefficients(settings.marginal_tol):
        return game
    try:
        for i in range(game.n):
            decoupled_wealth(game, i, 1.0, settings)
        return game
    except PathDependenceError as e:
        steps = game.driver.steps
        if steps > settings.max_full_binary_steps:
            raise DriverMismatch(
                f"Y* 在重组树第 {e.step} 步依赖路径，需要完全二叉树，但步数 {steps} "
                f"超过上限 {settings.max_full_binary_steps}"
            )
        logger.info("Y* 在重组树第 %d 步依赖路径，提升到完全二叉树 (N=%d)", e.step, steps)
        return game.expanded()


def market_factors(game: ValidatedGame, i: int, strict: bool = True,
                   settings: Optional[SolverSettings] = None) -> MarketFactors:
    """
    Args:
        strict: 为 False 时允许 p(0)ȟ(0)² = 1 的退化前沿
    """
    rho = game.rho_of(i)
    p = solve_p_bsde(game.r, rho, scheme="product")
    hcheck = solve_h_check(game.r, rho, p0=p.h0, agent=i, strict=strict)
    y0 = 1.0 / (game.gamma[i] * hcheck.h0)
    return MarketFactors(i, p, hcheck, decoupled_wealth(game, i, y0, settings))


# ---------------------------------------------------------------- 最优反应

def _source(game: ValidatedGame, i: int, a_hat: TreeProcess, b_hat: TreeProcess) -> TreeProcess:
    """h̃ 方程的源项 -(θ(ρσπ)̂ - θρ(σπ)̂)"""
    return -(b_hat - game.rho_of(i) * a_hat)


def solve_htilde(game: ValidatedGame, i: int, opponents: StrategyProfile) -> BsdeSolution:
    """
    dh̃ = [r h̃ + θ(ρσπ)̂ - θρ(σπ)̂ + ρ η̃] dt + η̃ dW, h̃(T) = 0
    """
    a_hat, b_hat = opponent_terms(game, i, opponents)
    return solve_linear_bsde(-game.r, -game.rho_of(i), _source(game, i, a_hat, b_hat), 0.0)


@dataclass(frozen=True, eq=False)
class AgentSolution:
    """参与者 i 的最优解"""
    agent: int
    htilde: BsdeSolution
    hcheck: HCheckSolution
    p: RiccatiSolution
    lagrange: Optional[LagrangeSolution]
    shift: float                 # d* - λ*
    control: TreeProcess         # π*_i 沿最优路径
    exposure: TreeProcess        # σ_i π*_i
    ystar: TreeProcess
    state: TreeProcess           # Z*_i = Y*/p - h
    source: TreeProcess          # h̃ 方程源项
    offset: TreeProcess          # θ_i (σπ)̂_i
    feedback: Callable[[int, np.ndarray], np.ndarray]

    @property
    def lambda_star(self) -> Optional[float]:
        return None if self.lagrange is None else self.lagrange.lambda_star

    @property
    def d_star(self) -> Optional[float]:
        return None if self.lagrange is None else self.lagrange.d_star

    @property
    def value(self) -> Optional[float]:
        return None if self.lagrange is None else self.lagrange.value

    @property
    def variance(self) -> Optional[float]:
        return None if self.lagrange is None else self.lagrange.variance

    @property
    def h(self) -> TreeProcess:
        return self.htilde.h + self.hcheck.h * self.shift

    @property
    def eta(self) -> TreeProcess:
        return self.htilde.eta + self.hcheck.eta * self.shift

    def summary(self) -> dict:
        return {
            "agent": self.agent,
            "lambda_star": self.lambda_star,
            "d_star": self.d_star,
            "variance": self.variance,
            "value": self.value,
            "shift": self.shift,
            "p0": float(self.p.h0),
            "hcheck0": float(self.hcheck.h0),
            "htilde0": float(self.htilde.h0),
            "bound_product": self.hcheck.bound_product,
            "initial_control": float(self.control.initial),
        }


def best_response(game: ValidatedGame, i: int, opponents: StrategyProfile,
                  factors: Optional[MarketFactors] = None, strict: bool = True,
                  settings: Optional[SolverSettings] = None) -> AgentSolution:
    """
    参与者 i 对给定对手策略的最优反应

    控制 σ_i π*_i = θ_i(σπ)̂_i - [η̃ + (d*-λ*) η̌ + κ Y*/p]，
    其中 κ 为离散反馈系数 (连续极限为 Λ/p + ρ)

    Args:
        strict: 为 True 时先做可行性检查并要求前沿非退化；
            为 False 时前沿退化也按 d*-λ* 恒等式给出控制

    Raises:
        Infeasible, DenominatorDegenerate, DriverMismatch
    """
    settings = settings or DEFAULT_SOLVER
    if factors is None:
        lifted = lift_if_path_dependent(game, settings)
        if lifted is not game:
            game, opponents = lifted, opponents.expand()
    if strict:
        cert = feasibility_check(game, settings)
        if not cert.feasible[i]:
            raise Infeasible(i, float(cert.integrals[i]))
    factors = factors or market_factors(game, i, strict, settings)
    driver = game.driver
    N = driver.steps

    a_hat, b_hat = opponent_terms(game, i, opponents)
    source = _source(game, i, a_hat, b_hat)
    htilde = solve_linear_bsde(-game.r, -game.rho_of(i), source, 0.0)

    p0, hc0, ht0 = factors.p0, factors.hcheck0, float(htilde.h0)
    z, gamma = float(game.z[i]), float(game.gamma[i])
    try:
        lagrange = lagrange_and_mean(p0, hc0, ht0, z, gamma)
        shift = lagrange.shift
    except DenominatorDegenerate:
        if strict:
            raise
        lagrange = None
        shift = decoupled_shift(p0, hc0, ht0, z, gamma)

    H = htilde.h + factors.hcheck.h * shift
    eta_h = htilde.eta + factors.hcheck.eta * shift
    kappa = factors.p.gain
    p = factors.p.h
    sigma = game.sigma_of(i)

    exposure = a_hat - (eta_h + kappa * factors.ystar / p)
    exposure = exposure.with_level(N, np.zeros(driver.terminal_count))
    control = exposure / sigma
    state = factors.ystar / p - H

    def feedback(k: int, z_values: np.ndarray) -> np.ndarray:
        u = a_hat.at(k) - eta_h.at(k) - kappa.at(k) * (z_values + H.at(k))
        return u / sigma.at(k)

    if lagrange is not None:
        logger.debug("参与者 %d: λ*=%.8f d*=%.8f 最优值=%.8f", i, lagrange.lambda_star,
                     lagrange.d_star, lagrange.value)
    return AgentSolution(
        agent=i, htilde=htilde, hcheck=factors.hcheck, p=factors.p, lagrange=lagrange, shift=shift,
        control=control, exposure=exposure, ystar=factors.ystar, state=state, source=source,
        offset=a_hat, feedback=feedback,
    )


def reassemble_h(game: ValidatedGame, solution: AgentSolution,
                 settings: Optional[SolverSettings] = None) -> BsdeSolution:
    """
    h = h̃ + (d*-λ*) ȟ，校验其满足终端值为 -(d*-λ*) 的 BSDE

    Raises:
        ConsistencyViolation: 格式恒等式残差超出容差
    """
    settings = settings or DEFAULT_SOLVER
    i = solution.agent
    combined = BsdeSolution(solution.h, solution.eta)
    residual = scheme_residual(combined, -game.r, -game.rho_of(i), solution.source)
    terminal = float(np.max(np.abs(combined.h.terminal + solution.shift)))
    scale = max(1.0, abs(solution.shift), combined.h.sup_norm())
    if max(residual, terminal) > settings.consistency_tol * scale:
        raise ConsistencyViolation(f"参与者 {i} 的 h", max(residual, terminal))
    return combined


# ---------------------------------------------------------------- 配方恒等式

def evolve_relative_wealth(game: ValidatedGame, i: int, own_exposure,
                           a_hat: TreeProcess, b_hat: TreeProcess,
                           settings: Optional[SolverSettings] = None) -> TreeProcess:
    """
    Z(k+1) = (1 + r dt) Z + (ρ u - b̂) dt + (u - â) ΔW

    own_exposure 为 u = σ_i π_i 的过程，或反馈函数 (k, Z) -> u
    """
    settings = settings or DEFAULT_SOLVER
    driver = game.driver
    rho = game.rho_of(i)
    dt, sq = driver.dt, driver.sqrt_dt

    def exposure_at(k: int, z_values: np.ndarray) -> np.ndarray:
        if callable(own_exposure):
            return own_exposure(k, z_values)
        return own_exposure.at(k)

    def step(k: int, z_values: np.ndarray, sign: int) -> np.ndarray:
        u = exposure_at(k, z_values)
        return ((1.0 + game.r.at(k) * dt) * z_values + (rho.at(k) * u - b_hat.at(k)) * dt
                + (u - a_hat.at(k)) * sign * sq)
    return driver.forward(float(game.z[i]), step, settings.node_consistency_tol)


@dataclass(frozen=True)
class CompletionCheck:
    cost: float          # E|Z(T) - (d*-λ*)|²
    optimum: float       # p0 (z + h(0))²
    square_sum: float    # Σ E[q (u - u*(Z))²]
    residual: float      # |cost - optimum - square_sum| 的相对值

    @property
    def gap(self) -> float:
        return self.cost - self.optimum


def completion_of_squares(game: ValidatedGame, solution: AgentSolution, trial_exposure: TreeProcess,
                          opponents: StrategyProfile) -> CompletionCheck:
    """
    𝒥(u) - 𝒥(u*) = Σ_k E[q_k (u_k - u*(Z_k))²]，q = E_k[p'(ρdt+ΔW)²]，
    其中 u*(Z) 为在试验路径状态上取值的最优反馈
    """
    i = solution.agent
    driver = game.driver
    a_hat, b_hat = opponent_terms(game, i, opponents)
    Z = evolve_relative_wealth(game, i, trial_exposure, a_hat, b_hat)
    shift = solution.shift
    cost = float(driver.expectation((Z.terminal - shift) ** 2, driver.steps))

    H = solution.h
    eta_h = solution.eta
    kappa = solution.p.gain
    q = solution.p.curvature
    square_sum = 0.0
    for k in range(driver.steps):
        u_star = a_hat.at(k) - eta_h.at(k) - kappa.at(k) * (Z.at(k) + H.at(k))
        square_sum += float(driver.expectation(q.at(k) * (trial_exposure.at(k) - u_star) ** 2, k))
    optimum = lq_value(float(solution.p.h0), float(solution.hcheck.h0), float(solution.htilde.h0),
                       float(game.z[i]), shift)
    residual = abs(cost - optimum - square_sum) / max(1.0, cost)
    return CompletionCheck(cost, optimum, square_sum, residual)


def mean_variance(game: ValidatedGame, i: int, terminal: np.ndarray) -> tuple:
    """终端相对财富的 (均值, 方差, Ĵ)"""
    driver = game.driver
    mean = float(driver.expectation(terminal, driver.steps))
    variance = float(driver.expectation((terminal - mean) ** 2, driver.steps))
    return mean, variance, mean - 0.5 * float(game.gamma[i]) * variance
