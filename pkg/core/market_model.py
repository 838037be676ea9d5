"""
市场模型
市场与参与者参数、系数过程、树驱动上的校验
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .constraints import (
    CoefficientBoundConstraint, ConstraintSolver, DriverConstraint,
    ParameterBoundConstraint, SharpeConstraint, raise_for,
)
from .exceptions import DriverMismatch
from .tree import DriverMode, TreeDriver, TreeProcess, build_driver

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------- 系数过程

class CoefficientProcess(ABC):
    """树上的系数过程"""

    @abstractmethod
    def evaluate(self, driver: TreeDriver) -> TreeProcess:
        """在驱动的每个节点上取值"""

    @property
    def is_deterministic(self) -> bool:
        return False

    @property
    def requires_full_binary(self) -> bool:
        return False

    @abstractmethod
    def describe(self) -> Dict:
        """用于报告的描述"""


@dataclass(frozen=True)
class Constant(CoefficientProcess):
    value: float

    def evaluate(self, driver: TreeDriver) -> TreeProcess:
        return TreeProcess.constant(driver, float(self.value))

    @property
    def is_deterministic(self) -> bool:
        return True

    def value_at(self, t: float) -> float:
        return float(self.value)

    def integrate(self, a: float, b: float, power: int = 1) -> float:
        return float(self.value) ** power * (b - a)

    def describe(self) -> Dict:
        return {"kind": "constant", "value": float(self.value)}


@dataclass(frozen=True)
class PiecewiseDeterministic(CoefficientProcess):
    """
    分段常数确定函数

    breakpoints 严格递增；values 比 breakpoints 多一个，
    values[j] 作用于 [breakpoints[j-1], breakpoints[j])
    """
    breakpoints: Tuple[float, ...]
    values: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "breakpoints", tuple(float(b) for b in self.breakpoints))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.values) != len(self.breakpoints) + 1:
            raise ValueError("分段函数的取值个数必须比断点多一个")
        if any(b2 <= b1 for b1, b2 in zip(self.breakpoints, self.breakpoints[1:])):
            raise ValueError("断点必须严格递增")

    @property
    def is_deterministic(self) -> bool:
        return True

    def value_at(self, t: float) -> float:
        return self.values[int(np.searchsorted(self.breakpoints, t, side="right"))]

    def evaluate(self, driver: TreeDriver) -> TreeProcess:
        return TreeProcess.from_function(
            driver, lambda k: np.full(driver.n_nodes(k), self.value_at(k * driver.dt))
        )

    def integrate(self, a: float, b: float, power: int = 1) -> float:
        """∫_a^b f^power，逐段精确求和"""
        if b <= a:
            return 0.0
        edges = [a] + [bp for bp in self.breakpoints if a < bp < b] + [b]
        total = 0.0
        for lo, hi in zip(edges, edges[1:]):
            total += self.value_at(0.5 * (lo + hi)) ** power * (hi - lo)
        return total

    def describe(self) -> Dict:
        return {"kind": "piecewise", "breakpoints": list(self.breakpoints), "values": list(self.values)}


@dataclass(frozen=True)
class NodeFunction(CoefficientProcess):
    """按 (步号, 上行次数) 取值，对重组树节点可测"""
    rule: Callable[[int, int], float]
    label: str = "node-function"

    def evaluate(self, driver: TreeDriver) -> TreeProcess:
        def level(k: int) -> np.ndarray:
            by_ups = np.array([float(self.rule(k, j)) for j in range(k + 1)])
            return by_ups[driver.up_counts(k)]
        return TreeProcess.from_function(driver, level)

    def describe(self) -> Dict:
        return {"kind": "node", "label": self.label}

    @classmethod
    def from_table(cls, table: Sequence[Sequence[float]], label: str = "node-table") -> "NodeFunction":
        """table[k][j] 为第 k 步 j 次上行的取值；超出表格的步沿用最后一行"""
        rows = [tuple(float(v) for v in row) for row in table]

        def rule(k: int, ups: int) -> float:
            row = rows[min(k, len(rows) - 1)]
            return row[min(ups, len(row) - 1)]
        return cls(rule, label)


@dataclass(frozen=True)
class PathFunction(CoefficientProcess):
    """按 (步号, 路径前缀) 取值，前缀为 ±1 元组；只能用于完全二叉树"""
    rule: Callable[[int, Tuple[int, ...]], float]
    label: str = "path-function"

    @property
    def requires_full_binary(self) -> bool:
        return True

    def evaluate(self, driver: TreeDriver) -> TreeProcess:
        if not driver.is_full_binary:
            raise DriverMismatch(f"{self.label} 是路径函数，需要完全二叉树")

        def level(k: int) -> np.ndarray:
            signs = driver.path_signs(k)
            return np.array([float(self.rule(k, tuple(int(s) for s in row))) for row in signs])
        return TreeProcess.from_function(driver, level)

    def describe(self) -> Dict:
        return {"kind": "path", "label": self.label}

    @classmethod
    def from_table(cls, table: Sequence[Sequence[float]], label: str = "path-table") -> "PathFunction":
        """table[k][路径编号]；超出表格的步取最后一行中祖先路径的值"""
        rows = [tuple(float(v) for v in row) for row in table]

        def rule(k: int, prefix: Tuple[int, ...]) -> float:
            last = min(k, len(rows) - 1)
            index = 0
            for s in prefix[:last]:
                index = 2 * index + (1 if s > 0 else 0)
            return rows[last][index]
        return cls(rule, label)


# ---------------------------------------------------------------- 参数

@dataclass(frozen=True)
class MarketBounds:
    """用户声明的系数界: r ∈ [0, r_max]，σ ∈ [1/c, c]"""
    r_max: float = 1.0
    sigma_c: float = 10.0


@dataclass(frozen=True)
class MarketSpec:
    n: int
    horizon: float
    r: CoefficientProcess
    mu: Tuple[CoefficientProcess, ...]
    sigma: Tuple[CoefficientProcess, ...]
    bounds: MarketBounds = field(default_factory=MarketBounds)

    def __post_init__(self):
        object.__setattr__(self, "mu", tuple(self.mu))
        object.__setattr__(self, "sigma", tuple(self.sigma))
        if len(self.mu) != self.n or len(self.sigma) != self.n:
            raise ValueError(f"μ 与 σ 的个数必须等于 n={self.n}")

    def coefficients(self) -> Dict[str, CoefficientProcess]:
        coefs = {"market.r": self.r}
        for i in range(self.n):
            coefs[f"market.mu[{i}]"] = self.mu[i]
            coefs[f"market.sigma[{i}]"] = self.sigma[i]
        return coefs

    @property
    def is_deterministic(self) -> bool:
        return all(c.is_deterministic for c in self.coefficients().values())


@dataclass(frozen=True)
class AgentSpec:
    theta: float
    gamma: float
    x0: float


def competition_index(agents: Sequence[AgentSpec]) -> Tuple[float, float]:
    """
    竞争指数

    Returns:
        (Ψ = Σ θ_i/(n-1+θ_i), γ̂ = Σ 1/γ_i)
    """
    n = len(agents)
    theta = np.array([a.theta for a in agents], dtype=float)
    gamma = np.array([a.gamma for a in agents], dtype=float)
    psi = float(np.sum(theta / (n - 1 + theta)))
    gamma_hat = float(np.sum(1.0 / gamma))
    return psi, gamma_hat


def relative_initial_wealth(agents: Sequence[AgentSpec]) -> Tuple[np.ndarray, np.ndarray]:
    """z_i = x_i - θ_i x̂_i，x̂_i 为其他人财富的平均"""
    n = len(agents)
    x = np.array([a.x0 for a in agents], dtype=float)
    theta = np.array([a.theta for a in agents], dtype=float)
    x_hat = (np.sum(x) - x) / (n - 1)
    return x - theta * x_hat, x_hat


@dataclass(frozen=True, eq=False)
class ValidatedGame:
    """校验通过的博弈: 系数已在树上取值"""
    market: MarketSpec
    agents: Tuple[AgentSpec, ...]
    driver: TreeDriver
    r: TreeProcess          # 标量
    mu: TreeProcess         # (n,)
    sigma: TreeProcess      # (n,)
    rho: TreeProcess        # (n,)
    z: np.ndarray
    x_hat: np.ndarray
    psi: float
    gamma_hat: float

    @property
    def n(self) -> int:
        return self.market.n

    @property
    def theta(self) -> np.ndarray:
        return np.array([a.theta for a in self.agents], dtype=float)

    @property
    def gamma(self) -> np.ndarray:
        return np.array([a.gamma for a in self.agents], dtype=float)

    @property
    def x0(self) -> np.ndarray:
        return np.array([a.x0 for a in self.agents], dtype=float)

    def rho_of(self, i: int) -> TreeProcess:
        return self.rho.component(i)

    def sigma_of(self, i: int) -> TreeProcess:
        return self.sigma.component(i)

    def is_marginal(self, tol: float = 1e-12) -> bool:
        return abs(self.psi - 1.0) <= tol

    def identical_sharpe(self, tol: float = 1e-12) -> bool:
        """假设 4.1: 所有 ρ_i 相同"""
        for k in range(self.driver.steps):
            level = self.rho.at(k)
            if np.max(np.ptp(level, axis=1)) > tol:
                return False
        return True

    def deterministic_coefficients(self, tol: float = 1e-12) -> bool:
        """假设 4.2: r 与 ρ 为确定函数 (按树上取值判断)"""
        for k in range(self.driver.steps):
            if np.ptp(self.r.at(k)) > tol or np.max(np.ptp(self.rho.at(k), axis=0)) > tol:
                return False
        return True

    def expanded(self) -> "ValidatedGame":
        """在同步数的完全二叉树上重新取值"""
        if self.driver.is_full_binary:
            return self
        full = self.driver.expand()
        return replace(
            self, driver=full, r=self.r.expand(full), mu=self.mu.expand(full),
            sigma=self.sigma.expand(full), rho=self.rho.expand(full),
        )

    def summary(self) -> Dict:
        return {
            "n": self.n,
            "horizon": self.driver.horizon,
            "steps": self.driver.steps,
            "mode": self.driver.mode.value,
            "psi": self.psi,
            "gamma_hat": self.gamma_hat,
            "z": [float(v) for v in self.z],
            "theta": [float(v) for v in self.theta],
            "gamma": [float(v) for v in self.gamma],
            "x0": [float(v) for v in self.x0],
        }


MARKET_CONSTRAINTS = ConstraintSolver([ParameterBoundConstraint(), DriverConstraint()])
NODE_CONSTRAINTS = ConstraintSolver([CoefficientBoundConstraint(), SharpeConstraint()])


def validate_market(spec: MarketSpec, agents: Sequence[AgentSpec], driver: TreeDriver) -> ValidatedGame:
    """
    校验市场并在树上预计算 ρ_i = (μ_i - r)/σ_i

    Args:
        spec: 市场参数
        agents: 参与者参数
        driver: 树驱动

    Returns:
        ValidatedGame

    Raises:
        DegenerateSharpe / BoundViolation / DriverMismatch，附带全部违反项
    """
    agents = tuple(agents)
    context = {"spec": spec, "agents": agents, "driver": driver, "coefficients": spec.coefficients()}
    raise_for(MARKET_CONSTRAINTS.validate(context))

    r = spec.r.evaluate(driver)
    mu = TreeProcess.stack([m.evaluate(driver) for m in spec.mu])
    sigma = TreeProcess.stack([s.evaluate(driver) for s in spec.sigma])
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = (mu - r) / sigma
    context.update({"r": r, "sigma": sigma, "rho": rho})
    raise_for(NODE_CONSTRAINTS.validate(context))

    psi, gamma_hat = competition_index(agents)
    z, x_hat = relative_initial_wealth(agents)
    logger.info("市场校验通过: n=%d, N=%d, Ψ=%.6f", spec.n, driver.steps, psi)
    return ValidatedGame(
        market=spec, agents=agents, driver=driver, r=r, mu=mu, sigma=sigma, rho=rho,
        z=z, x_hat=x_hat, psi=psi, gamma_hat=gamma_hat,
    )


__all__ = [
    "CoefficientProcess", "Constant", "PiecewiseDeterministic", "NodeFunction", "PathFunction",
    "MarketBounds", "MarketSpec", "AgentSpec", "ValidatedGame", "DriverMode", "TreeDriver",
    "build_driver", "competition_index", "relative_initial_wealth", "validate_market",
]
