"""
闭式解
确定系数下的 p、ȟ，可行性证书，拉格朗日乘子与均值-方差前沿
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy.integrate import simpson

from .exceptions import DenominatorDegenerate
from .lattice_bsde import BsdeSolution, solve_linear_bsde
from .market_model import ValidatedGame
from .settings import DEFAULT_SOLVER, SolverSettings
from .tree import TreeProcess

logger = logging.getLogger(__name__)

Deterministic = Union[float, Callable[[float], float], object]

_DEGENERATE_EPS = 1e-12


def integrate_deterministic(coef: Deterministic, a: float, b: float, power: int = 1,
                            cells: int = 256) -> float:
    """
    ∫_a^b f(s)^power ds

    常数与分段常数系数逐段精确求和；一般可调用对象用复合 Simpson
    """
    if b <= a:
        return 0.0
    if isinstance(coef, (int, float)):
        return float(coef) ** power * (b - a)
    if hasattr(coef, "integrate"):
        return float(coef.integrate(a, b, power))
    if callable(coef):
        cells = max(2, cells + (cells % 2))
        grid = np.linspace(a, b, cells + 1)
        values = np.array([float(coef(t)) ** power for t in grid])
        return float(simpson(values, x=grid))
    raise TypeError(f"不支持的确定系数类型: {type(coef).__name__}")


def _cells(steps: int, settings: SolverSettings) -> int:
    return max(2, settings.simpson_cells_per_step * steps)


def p_closed(r: Deterministic, rho: Deterministic, t: float, horizon: float, steps: int = 64,
             settings: Optional[SolverSettings] = None) -> float:
    """p(t) = exp(∫_t^T (2r - ρ²) ds)"""
    settings = settings or DEFAULT_SOLVER
    cells = _cells(steps, settings)
    exponent = 2.0 * integrate_deterministic(r, t, horizon, 1, cells) \
        - integrate_deterministic(rho, t, horizon, 2, cells)
    return float(np.exp(exponent))


def h_check_closed(r: Deterministic, t: float, horizon: float, steps: int = 64,
                   settings: Optional[SolverSettings] = None) -> float:
    """ȟ(t) = -exp(-∫_t^T r ds)，与 ρ 无关"""
    settings = settings or DEFAULT_SOLVER
    return -float(np.exp(-integrate_deterministic(r, t, horizon, 1, _cells(steps, settings))))


# ---------------------------------------------------------------- 可行性

@dataclass(frozen=True, eq=False)
class FeasibilityCertificate:
    """ψ BSDE 与每个参与者的 E Σ |ρ_i ψ + ξ|² dt"""
    psi: BsdeSolution
    integrals: np.ndarray
    feasible: Tuple[bool, ...]
    threshold: float
    closed_form: bool

    def to_dict(self):
        return {
            "integrals": [float(v) for v in self.integrals],
            "feasible": list(self.feasible),
            "threshold": self.threshold,
            "closed_form": self.closed_form,
        }


def feasibility_check(game: ValidatedGame, settings: Optional[SolverSettings] = None) -> FeasibilityCertificate:
    """
    可行性证书: dψ = -rψ dt + ξ dW, ψ(T) = 1

    r 为确定函数时 ψ(t) = exp(∫_t^T r ds)，ξ = 0
    """
    settings = settings or DEFAULT_SOLVER
    driver = game.driver
    r_coef = game.market.r
    if r_coef.is_deterministic:
        horizon = driver.horizon
        psi = TreeProcess.from_function(driver, lambda k: np.full(
            driver.n_nodes(k), np.exp(integrate_deterministic(r_coef, k * driver.dt, horizon))
        ))
        sol = BsdeSolution(psi, TreeProcess.zeros(driver))
        closed = True
    else:
        sol = solve_linear_bsde(game.r, None, TreeProcess.zeros(driver), 1.0)
        closed = False

    integrals = np.zeros(game.n)
    for k in range(driver.steps):
        psi_k, xi_k = sol.h.at(k), sol.eta.at(k)
        integrand = (game.rho.at(k) * psi_k[:, None] + xi_k[:, None]) ** 2
        integrals += driver.expectation(integrand, k) * driver.dt
    feasible = tuple(bool(v > settings.feasibility_threshold) for v in integrals)
    logger.debug("可行性积分: %s", integrals)
    return FeasibilityCertificate(sol, integrals, feasible, settings.feasibility_threshold, closed)


# ---------------------------------------------------------------- 拉格朗日与前沿

@dataclass(frozen=True)
class LagrangeSolution:
    lambda_star: float
    d_star: float
    variance: float        # d* 处的最小方差
    shift: float           # d* - λ*
    value: float           # d* - γ/2·variance
    bound_product: float   # p0·ȟ0²


def _check_denominator(p0: float, hcheck0: float) -> float:
    product = float(p0 * hcheck0 ** 2)
    if product >= 1.0 - _DEGENERATE_EPS:
        raise DenominatorDegenerate(product)
    return product


def frontier_variance(p0: float, hcheck0: float, htilde0: float, z: float, d):
    """均值为 d 时的最小方差 p0 |z + h̃0 + ȟ0 d|² / (1 - p0 ȟ0²)"""
    product = _check_denominator(p0, hcheck0)
    d = np.asarray(d, dtype=float)
    value = p0 * (z + htilde0 + hcheck0 * d) ** 2 / (1.0 - product)
    return float(value) if value.ndim == 0 else value


def frontier_minimizer(hcheck0: float, htilde0: float, z: float) -> float:
    """方差为零的均值 -(z + h̃0)/ȟ0"""
    return -(z + htilde0) / hcheck0


def decoupled_shift(p0: float, hcheck0: float, htilde0: float, z: float, gamma: float) -> float:
    """d* - λ* = -(z + h̃0)/ȟ0 + 1/(γ p0 ȟ0²)；前沿退化时仍有定义"""
    return -(z + htilde0) / hcheck0 + 1.0 / (gamma * p0 * hcheck0 ** 2)


def lq_value(p0: float, hcheck0: float, htilde0: float, z: float, shift: float) -> float:
    """min E|Z(T) - (d-λ)|² = p0 (z + h̃0 + (d-λ) ȟ0)²"""
    return float(p0 * (z + htilde0 + shift * hcheck0) ** 2)


def lagrange_and_mean(p0: float, hcheck0: float, htilde0: float, z: float, gamma: float) -> LagrangeSolution:
    """
    最优拉格朗日乘子与最优均值

    d* = (1/γ)(1/(p0 ȟ0²) - 1) - (z + h̃0)/ȟ0
    λ* = p0 ȟ0 (z + h̃0 + ȟ0 d*) / (p0 ȟ0² - 1)

    Raises:
        DenominatorDegenerate: p0·ȟ0² ≥ 1
    """
    product = _check_denominator(p0, hcheck0)
    d_star = (1.0 / gamma) * (1.0 / product - 1.0) - (z + htilde0) / hcheck0
    lambda_star = p0 * hcheck0 * (z + htilde0 + hcheck0 * d_star) / (product - 1.0)
    variance = frontier_variance(p0, hcheck0, htilde0, z, d_star)
    return LagrangeSolution(
        lambda_star=float(lambda_star),
        d_star=float(d_star),
        variance=float(variance),
        shift=float(d_star - lambda_star),
        value=float(d_star - 0.5 * gamma * variance),
        bound_product=product,
    )


def frontier_table(p0: float, hcheck0: float, htilde0: float, z: float, grid: np.ndarray) -> np.ndarray:
    """两列表格 (d, 最小方差)"""
    grid = np.asarray(grid, dtype=float)
    return np.column_stack([grid, frontier_variance(p0, hcheck0, htilde0, z, grid)])
