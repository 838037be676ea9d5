"""
财富模拟与纳什验证
树上穷举 (TreeExact) 或欧拉蒙特卡洛 (EulerMC) 演化相对财富，估计 Ĵ_i，并做单边偏离检验
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np

from .exceptions import ConfigurationError, NashViolation
from .market_model import ValidatedGame
from .parallel import map_ordered, performance_monitor
from .settings import DEFAULT_SOLVER, SimulationSettings, SolverSettings
from .single_agent import StrategyProfile, best_response
from .tree import TreeDriver, TreeProcess

logger = logging.getLogger(__name__)

# 二次律拟合使用的 ε
FIT_EPSILONS = (0.02, 0.04, 0.08)

_DEVIATION_STREAM = 0x5EED


class SimScheme(Enum):
    """模拟格式"""
    TREE_EXACT = "tree_exact"   # 穷举全部 2^N 条路径
    EULER_MC = "euler_mc"       # 高斯增量，按符号投影到树节点


@dataclass(frozen=True)
class SimConfig:
    """模拟参数"""
    paths: int = 20000
    seed: int = 20240601
    scheme: SimScheme = SimScheme.TREE_EXACT
    antithetic: bool = True
    block_size: int = 4096
    workers: int = 4
    max_full_binary_steps: int = 24

    def __post_init__(self):
        if isinstance(self.scheme, str):
            try:
                object.__setattr__(self, "scheme", SimScheme(self.scheme.lower()))
            except ValueError:
                raise ConfigurationError(f"未知的模拟格式 '{self.scheme}'，可选 tree_exact / euler_mc")
        if self.paths < 1:
            raise ConfigurationError(f"路径数必须 ≥ 1，当前为 {self.paths}")
        if self.block_size < 1:
            raise ConfigurationError(f"块大小必须 ≥ 1，当前为 {self.block_size}")

    @classmethod
    def from_settings(cls, settings: SimulationSettings, solver: Optional[SolverSettings] = None,
                      **overrides) -> "SimConfig":
        solver = solver or DEFAULT_SOLVER
        values = {
            "paths": settings.paths,
            "seed": settings.seed,
            "scheme": settings.scheme,
            "antithetic": settings.antithetic,
            "block_size": settings.block_size,
            "workers": settings.workers,
            "max_full_binary_steps": solver.max_full_binary_steps,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def to_dict(self) -> Dict:
        return {
            "paths": self.paths,
            "seed": self.seed,
            "scheme": self.scheme.value,
            "antithetic": self.antithetic,
            "block_size": self.block_size,
        }


@dataclass(frozen=True)
class ObjectiveEstimate:
    """Ĵ_i = 均值 - γ/2·方差，以及标准误 (TreeExact 为 0)"""
    agent: int
    mean: float
    variance: float
    J_hat: float
    mean_se: float = 0.0
    variance_se: float = 0.0
    J_se: float = 0.0

    def to_dict(self) -> Dict:
        return {
            "agent": self.agent + 1,
            "mean": self.mean,
            "variance": self.variance,
            "J_hat": self.J_hat,
            "mean_se": self.mean_se,
            "variance_se": self.variance_se,
            "J_se": self.J_se,
        }


# ---------------------------------------------------------------- 路径样本

@dataclass(frozen=True, eq=False)
class PathSample:
    """
    increments (P, N) 为每步 ΔW，nodes (P, N+1) 为各层所在节点；
    groups 为对偶配对编号 (标准误按组计算)，穷举时为 None
    """
    driver: TreeDriver
    increments: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    groups: Optional[np.ndarray]
    scheme: SimScheme

    @property
    def paths(self) -> int:
        return self.increments.shape[0]


def _node_step(driver: TreeDriver, node: np.ndarray, up: np.ndarray) -> np.ndarray:
    return 2 * node + up if driver.is_full_binary else node + up


def enumerate_paths(driver: TreeDriver, max_full_binary_steps: int = 24) -> PathSample:
    """穷举全部 2^N 条路径，权重 2^-N"""
    N = driver.steps
    if N > max_full_binary_steps:
        raise ConfigurationError(f"TreeExact 需要穷举 2^{N} 条路径，超过上限 2^{max_full_binary_steps}")
    full = driver.expand()
    signs = full.path_signs(N) if N > 0 else np.zeros((1, 0), dtype=int)
    up = (signs > 0).astype(int)
    nodes = np.zeros((2 ** N, N + 1), dtype=int)
    for k in range(N):
        nodes[:, k + 1] = _node_step(driver, nodes[:, k], up[:, k])
    weights = np.full(2 ** N, 0.5 ** N)
    return PathSample(driver, signs * driver.sqrt_dt, nodes, weights, None, SimScheme.TREE_EXACT)


def _euler_block(driver: TreeDriver, seed_seq: np.random.SeedSequence, size: int, antithetic: bool):
    rng = np.random.Generator(np.random.Philox(seed_seq))
    N = driver.steps
    if antithetic:
        half = (size + 1) // 2
        draws = rng.standard_normal((half, N)) * driver.sqrt_dt
        increments = np.concatenate([draws, -draws])[:size]
        pairs = np.concatenate([np.arange(half), np.arange(half)])[:size]
    else:
        increments = rng.standard_normal((size, N)) * driver.sqrt_dt
        pairs = np.arange(size)
    nodes = np.zeros((size, N + 1), dtype=int)
    for k in range(N):
        nodes[:, k + 1] = _node_step(driver, nodes[:, k], (increments[:, k] >= 0.0).astype(int))
    return increments, nodes, pairs


def sample_paths(driver: TreeDriver, config: SimConfig) -> PathSample:
    """
    欧拉样本

    每块使用 SeedSequence(seed).spawn 得到的独立 Philox 流；块大小固定，
    按块序拼接，因此结果与线程数无关
    """
    n_blocks = -(-config.paths // config.block_size)
    children = np.random.SeedSequence(config.seed).spawn(n_blocks)
    sizes = [min(config.block_size, config.paths - b * config.block_size) for b in range(n_blocks)]

    blocks = map_ordered(
        lambda b: _euler_block(driver, children[b], sizes[b], config.antithetic),
        range(n_blocks), config.workers,
    )
    increments = np.concatenate([blk[0] for blk in blocks])
    nodes = np.concatenate([blk[1] for blk in blocks])
    groups = np.concatenate([blk[2] + b * config.block_size for b, blk in enumerate(blocks)])
    weights = np.full(config.paths, 1.0 / config.paths)
    logger.info("欧拉样本: %d 条路径, %d 块, 对偶=%s", config.paths, n_blocks, config.antithetic)
    return PathSample(driver, increments, nodes, weights, groups, SimScheme.EULER_MC)


def draw_paths(driver: TreeDriver, config: SimConfig) -> PathSample:
    if config.scheme is SimScheme.TREE_EXACT:
        return enumerate_paths(driver, config.max_full_binary_steps)
    return sample_paths(driver, config)


# ---------------------------------------------------------------- 财富演化

def relative_wealth(game: ValidatedGame, wealth: np.ndarray) -> np.ndarray:
    """Z_i = X_i - θ_i/(n-1) Σ_{k≠i} X_k"""
    n = game.n
    others = (np.sum(wealth, axis=-1, keepdims=True) - wealth) / (n - 1)
    return wealth - game.theta * others


def evolve_wealth(game: ValidatedGame, sample: PathSample, exposures: TreeProcess,
                  start: Optional[np.ndarray] = None) -> np.ndarray:
    """
    沿样本路径演化 X(k+1) = (1 + r dt) X + σπ (ρ dt + ΔW)

    Args:
        exposures: (n,) 向量过程 σ_i π_i，或标量过程 (对全部分量同时作用)
        start: 初始财富，默认 x0

    Returns:
        终端财富 (P, n)
    """
    driver = sample.driver
    dt = driver.dt
    start = game.x0 if start is None else np.asarray(start, dtype=float)
    X = np.tile(start, (sample.paths, 1))
    for k in range(driver.steps):
        idx = sample.nodes[:, k]
        u = exposures.at(k)[idx]
        if u.ndim == 1:
            u = u[:, None]
        r_k = game.r.at(k)[idx]
        rho_k = game.rho.at(k)[idx]
        X = (1.0 + r_k * dt)[:, None] * X + u * (rho_k * dt + sample.increments[:, k:k + 1])
    return X


def _group_se(values: np.ndarray, groups: Optional[np.ndarray]) -> float:
    if groups is None:
        return 0.0
    counts = np.bincount(groups)
    mask = counts > 0
    means = np.bincount(groups, weights=values)[mask] / counts[mask]
    if means.size < 2:
        return 0.0
    return float(np.std(means, ddof=1) / np.sqrt(means.size))


def estimate_objective(agent: int, gamma: float, terminal: np.ndarray, sample: PathSample) -> ObjectiveEstimate:
    """单个参与者的均值、方差与 Ĵ"""
    w = sample.weights
    mean = float(w @ terminal)
    centered = terminal - mean
    variance = float(w @ centered ** 2)
    return ObjectiveEstimate(
        agent=agent,
        mean=mean,
        variance=variance,
        J_hat=mean - 0.5 * gamma * variance,
        mean_se=_group_se(terminal, sample.groups),
        variance_se=_group_se(centered ** 2, sample.groups),
        J_se=_group_se(terminal - 0.5 * gamma * centered ** 2, sample.groups),
    )


@dataclass
class SimulationResult:
    """模拟结果: 每个参与者的估计与逐路径终端相对财富"""
    estimates: List[ObjectiveEstimate]
    terminal: np.ndarray
    weights: np.ndarray
    config: SimConfig

    @property
    def paths(self) -> int:
        return self.terminal.shape[0]

    def columns(self) -> List[str]:
        return ["path_id", "weight"] + [f"Z_{i + 1}" for i in range(self.terminal.shape[1])]

    def per_path_table(self) -> np.ndarray:
        return np.column_stack([np.arange(self.paths), self.weights, self.terminal])

    def to_dict(self) -> Dict:
        return {
            "config": self.config.to_dict(),
            "paths": self.paths,
            "estimates": [e.to_dict() for e in self.estimates],
        }


@performance_monitor
def simulate_profile(game: ValidatedGame, profile: StrategyProfile,
                     config: Optional[SimConfig] = None) -> SimulationResult:
    """
    在给定策略组合下模拟全部参与者的财富并构造相对财富

    TreeExact 的期望是精确加权和，没有抽样误差
    """
    config = config or SimConfig()
    sample = draw_paths(game.driver, config)
    terminal = relative_wealth(game, evolve_wealth(game, sample, profile.exposures(game)))
    estimates = [estimate_objective(i, float(game.gamma[i]), terminal[:, i], sample) for i in range(game.n)]
    for e in estimates:
        logger.debug("参与者 %d: 均值=%.8f 方差=%.8f Ĵ=%.8f", e.agent, e.mean, e.variance, e.J_hat)
    return SimulationResult(estimates, terminal, sample.weights, config)


# ---------------------------------------------------------------- 偏离族

@dataclass(frozen=True, eq=False)
class Deviation:
    """单位化的偏离方向 δ (金额)，E Σ δ² dt = 1"""
    ident: str
    direction: TreeProcess


def _normalize(driver: TreeDriver, levels: List[np.ndarray]) -> List[np.ndarray]:
    norm2 = sum(float(driver.expectation(levels[k] ** 2, k)) for k in range(driver.steps)) * driver.dt
    scale = 1.0 / np.sqrt(norm2) if norm2 > 0.0 else 0.0
    return [level * scale for level in levels]


def deviation_family(driver: TreeDriver, count: int = 16, seed: int = 20240601) -> List[Deviation]:
    """
    偏离族: 前一半为时间窗上的 ±1 (4 个时段 × 正负)，后一半为随机节点取值
    (完全二叉树上即依赖路径的偏离)
    """
    N = driver.steps
    n_bumps = count // 2
    epochs = [w for w in np.array_split(np.arange(N), max(1, n_bumps // 2)) if w.size]
    family: List[Deviation] = []
    for e, window in enumerate(epochs):
        for sign in (1.0, -1.0):
            levels = [np.full(driver.n_nodes(k), sign if k in window else 0.0) for k in range(N)]
            levels.append(np.zeros(driver.terminal_count))
            tag = "+" if sign > 0 else "-"
            family.append(Deviation(f"bump[{e}]{tag}", TreeProcess(driver, tuple(_normalize(driver, levels)))))

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, _DEVIATION_STREAM])))
    for j in range(count - len(family)):
        levels = [rng.standard_normal(driver.n_nodes(k)) for k in range(N)]
        levels.append(np.zeros(driver.terminal_count))
        family.append(Deviation(f"random[{j}]", TreeProcess(driver, tuple(_normalize(driver, levels)))))
    return family


# ---------------------------------------------------------------- 纳什验证

@dataclass(frozen=True)
class DeviationCheck:
    agent: int
    deviation: str
    epsilon: float
    gap: float       # Ĵ(π + εδ) - Ĵ(π)
    slack: float

    @property
    def passed(self) -> bool:
        return self.gap <= self.slack

    def to_dict(self) -> Dict:
        return {"agent": self.agent + 1, "deviation": self.deviation, "epsilon": self.epsilon,
                "gap": self.gap, "slack": self.slack, "passed": self.passed}


@dataclass
class VerificationReport:
    """有限偏离族上的检验，只是抽样证书"""
    scheme: str
    checks: List[DeviationCheck]
    best_response_gaps: List[float]
    exponents: Dict[int, List[float]]
    objectives: List[ObjectiveEstimate]
    config: Dict = field(default_factory=dict)
    best_response_tol: float = 1e-6
    label: str = "sampled certificate"

    @property
    def violations(self) -> List[DeviationCheck]:
        return [c for c in self.checks if not c.passed]

    @property
    def passed(self) -> bool:
        return not self.violations

    @property
    def worst_gap(self) -> float:
        return max((c.gap - c.slack for c in self.checks), default=0.0)

    def exponent_range(self, agent: Optional[int] = None):
        values = [e for a, es in self.exponents.items() if agent is None or a == agent for e in es]
        return (min(values), max(values)) if values else (float("nan"), float("nan"))

    def to_dict(self) -> Dict:
        low, high = self.exponent_range()
        return {
            "label": self.label,
            "scheme": self.scheme,
            "passed": self.passed,
            "checks": len(self.checks),
            "violations": [c.to_dict() for c in self.violations],
            "worst_gap": self.worst_gap,
            "best_response_gaps": self.best_response_gaps,
            "best_response_tol": self.best_response_tol,
            "quadratic_exponent": {"min": low, "max": high},
            "objectives": [o.to_dict() for o in self.objectives],
            "config": self.config,
        }


def _objective(terminal: np.ndarray, weights: np.ndarray, gamma: float) -> float:
    mean = weights @ terminal
    return float(mean - 0.5 * gamma * (weights @ (terminal - mean) ** 2))


def _deviation_paths(game: ValidatedGame, sample: PathSample, deviation: Deviation) -> np.ndarray:
    """单位 ε 下自身财富的改变 D(k+1) = (1 + r dt) D + σ_i δ (ρ_i dt + ΔW)，各列对应各参与者"""
    exposures = game.sigma * deviation.direction
    return evolve_wealth(game, sample, exposures, start=np.zeros(game.n))


@performance_monitor
def verify_nash(game: ValidatedGame, profile: StrategyProfile, config: Optional[SimConfig] = None,
                deviations: int = 16, epsilons: Sequence[float] = (0.01, 0.1, -0.01, -0.1),
                slack_tol: float = 1e-9, best_response_tol: float = 1e-6,
                solver: Optional[SolverSettings] = None,
                raise_on_violation: bool = True) -> VerificationReport:
    """
    单边偏离检验: 对每个参与者 i、偏离 δ 与 ε 检查 Ĵ_i(π) ≥ Ĵ_i(π_i + εδ) - slack，
    并重算最优反应报告与 π_i 的上确界偏差

    完全二叉树步数在上限以内时先提升到完全二叉树，使随机偏离依赖路径

    Raises:
        NashViolation: 第一个未通过的检验
    """
    config = config or SimConfig()
    solver = solver or DEFAULT_SOLVER
    check_game, check_profile = game, profile
    if not game.driver.is_full_binary and game.driver.steps <= config.max_full_binary_steps:
        check_game, check_profile = game.expanded(), profile.expand()

    sample = draw_paths(check_game.driver, config)
    terminal = relative_wealth(check_game, evolve_wealth(check_game, sample, check_profile.exposures(check_game)))
    objectives = [estimate_objective(i, float(game.gamma[i]), terminal[:, i], sample) for i in range(game.n)]
    family = deviation_family(check_game.driver, deviations, config.seed)
    shifts = [(dev, _deviation_paths(check_game, sample, dev)) for dev in family]
    w = sample.weights

    def agent_checks(i: int):
        gamma = float(game.gamma[i])
        Z = terminal[:, i]
        base = objectives[i].J_hat
        checks, exps = [], []
        for dev, D in shifts:
            Di = D[:, i]
            for eps in epsilons:
                moved = Z + eps * Di
                gap = _objective(moved, w, gamma) - base
                slack = slack_tol * max(1.0, abs(base))
                if sample.groups is not None:
                    centered = Z - w @ Z
                    contribution = eps * (Di - gamma * centered * (Di - w @ Di))
                    slack += 3.0 * _group_se(contribution, sample.groups)
                checks.append(DeviationCheck(i, dev.ident, float(eps), float(gap), float(slack)))
            gaps = np.array([abs(_objective(Z + e * Di, w, gamma) - base) for e in FIT_EPSILONS])
            if np.all(gaps > 0.0):
                exps.append(float(np.polyfit(np.log(FIT_EPSILONS), np.log(gaps), 1)[0]))
        br = best_response(game, i, profile, strict=False, settings=solver)
        br_gap = (br.control - profile.agent(i)).sup_norm(game.driver.steps - 1)
        return checks, exps, br_gap

    results = map_ordered(agent_checks, range(game.n), config.workers)
    report = VerificationReport(
        scheme=config.scheme.value,
        checks=[c for res in results for c in res[0]],
        best_response_gaps=[res[2] for res in results],
        exponents={i: res[1] for i, res in enumerate(results)},
        objectives=objectives,
        config=dict(config.to_dict(), deviations=len(family), epsilons=list(epsilons), slack_tol=slack_tol),
        best_response_tol=best_response_tol,
    )
    logger.info("纳什验证 (%s): %d 项检验, %d 项未通过, 最优反应偏差 %s",
                report.label, len(report.checks), len(report.violations),
                ", ".join(f"{g:.2e}" for g in report.best_response_gaps))
    if raise_on_violation and report.violations:
        first = report.violations[0]
        raise NashViolation(first.agent, first.deviation, first.epsilon, first.gap - first.slack, report)
    return report
