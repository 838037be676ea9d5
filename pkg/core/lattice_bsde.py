"""
树上倒向随机微分方程求解器
线性 BSDE、Riccati 型 BSDE (倒数变换)、Γ 流、K/D 矩阵与依赖初值的多维线性 BSDE
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.linalg import null_space, pinv, svdvals

from .exceptions import (
    BoundCheckFailed, ConfigurationError, NotInvertible, PathDependenceError, PicardDiverged, SingularGamma,
    SingularStep,
)
from .parallel import performance_monitor
from .settings import DEFAULT_SOLVER, SolverSettings
from .tree import TreeDriver, TreeProcess

logger = logging.getLogger(__name__)

_SINGULAR_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class BsdeSolution:
    """BSDE 的解 (h, η)"""
    h: TreeProcess
    eta: TreeProcess

    @property
    def h0(self):
        return self.h.initial

    @property
    def driver(self) -> TreeDriver:
        return self.h.driver

    def __add__(self, other: "BsdeSolution") -> "BsdeSolution":
        return BsdeSolution(self.h + other.h, self.eta + other.eta)

    def scaled(self, s: float) -> "BsdeSolution":
        return BsdeSolution(self.h * s, self.eta * s)


@dataclass(frozen=True, eq=False)
class RiccatiSolution(BsdeSolution):
    """
    (p, Λ) 以及倒数 (p̌, Λ̌)

    gain 为离散反馈系数 κ = (1+r dt)·E_k[p'(ρdt+ΔW)] / E_k[p'(ρdt+ΔW)²]，
    curvature 为 q = E_k[p'(ρdt+ΔW)²]
    """
    reciprocal: BsdeSolution
    gain: TreeProcess
    curvature: TreeProcess
    scheme: str = "exponential"


@dataclass(frozen=True, eq=False)
class HCheckSolution(BsdeSolution):
    bound_product: float


# ---------------------------------------------------------------- 线性 BSDE

def _apply(coef: np.ndarray, values: np.ndarray) -> np.ndarray:
    """标量或矩阵系数作用在节点取值上"""
    if coef.ndim == 1:
        return coef * values if values.ndim == 1 else coef[:, None] * values
    return np.einsum("mij,mj->mi", coef, values)


def _implicit_solve(a_level: Optional[np.ndarray], rhs: np.ndarray, dt: float, k: int) -> np.ndarray:
    """解 (I - a dt) h = rhs"""
    if a_level is None:
        return rhs
    if a_level.ndim == 1:
        denom = 1.0 - a_level * dt
        bad = np.abs(denom) <= _SINGULAR_EPS
        if np.any(bad):
            raise SingularStep(k, int(np.argmax(bad)))
        return rhs / denom if rhs.ndim == 1 else rhs / denom[:, None]
    n = a_level.shape[-1]
    mat = np.eye(n)[None, :, :] - a_level * dt
    cond = np.linalg.cond(mat)
    bad = ~np.isfinite(cond) | (cond > 1.0 / _SINGULAR_EPS)
    if np.any(bad):
        raise SingularStep(k, int(np.argmax(bad)))
    return np.linalg.solve(mat, rhs[..., None])[..., 0]


def _terminal_values(driver: TreeDriver, terminal, shape: Tuple[int, ...]) -> np.ndarray:
    if isinstance(terminal, TreeProcess):
        terminal = terminal.terminal
    values = np.asarray(terminal, dtype=float)
    return np.array(np.broadcast_to(values, (driver.terminal_count,) + shape))


def solve_linear_bsde(a: Optional[TreeProcess], b: Optional[TreeProcess], g: TreeProcess,
                      terminal) -> BsdeSolution:
    """
    求解 dh = -(a·h + b·η + g) dt + η dW, h(T) = terminal

    每步 η(k) = (h_up - h_down)/(2√dt)，h(k) 满足
    (I - a dt) h(k) = E_k[h(k+1)] + (b η(k) + g(k)) dt

    Args:
        a: 标量或 (n, n) 矩阵过程，None 表示零
        b: 同上
        g: 源项，标量或 (n,) 向量过程；决定解的维度
        terminal: 终端取值 (标量、终端层数组或过程)

    Returns:
        BsdeSolution
    """
    driver = g.driver
    for coef in (a, b):
        if coef is not None and coef.driver != driver:
            raise ValueError("系数过程与源项不在同一驱动上")
    shape = g.value_shape
    N, dt = driver.steps, driver.dt

    h_levels: List[np.ndarray] = [None] * (N + 1)
    eta_levels: List[np.ndarray] = [None] * (N + 1)
    h_levels[N] = _terminal_values(driver, terminal, shape)
    eta_levels[N] = np.zeros_like(h_levels[N])
    for k in range(N - 1, -1, -1):
        nxt = h_levels[k + 1]
        eta = driver.martingale_integrand(nxt, k)
        rhs = driver.cond_mean(nxt, k) + g.at(k) * dt
        if b is not None:
            rhs = rhs + _apply(b.at(k), eta) * dt
        h_levels[k] = _implicit_solve(None if a is None else a.at(k), rhs, dt, k)
        eta_levels[k] = eta
    return BsdeSolution(TreeProcess(driver, tuple(h_levels)), TreeProcess(driver, tuple(eta_levels)))


def scheme_residual(solution: BsdeSolution, a: Optional[TreeProcess], b: Optional[TreeProcess],
                    g: TreeProcess) -> float:
    """h(k) - (a h + b η + g)(k) dt - E_k[h(k+1)] 与 η 定义式的最大偏差"""
    driver = solution.driver
    dt = driver.dt
    worst = 0.0
    for k in range(driver.steps):
        h_k, eta_k, nxt = solution.h.at(k), solution.eta.at(k), solution.h.at(k + 1)
        drift = g.at(k)
        if a is not None:
            drift = drift + _apply(a.at(k), h_k)
        if b is not None:
            drift = drift + _apply(b.at(k), eta_k)
        res = h_k - drift * dt - driver.cond_mean(nxt, k)
        jump = eta_k * driver.sqrt_dt - 0.5 * (nxt[driver.up_index(k)] - nxt[driver.down_index(k)])
        worst = max(worst, float(np.max(np.abs(res))), float(np.max(np.abs(jump))))
    return worst


# ---------------------------------------------------------------- Riccati 型 BSDE

P_SCHEMES = ("exponential", "product")


def _p_weights(r_k: np.ndarray, rho_k: np.ndarray, dt: float, sq: float, scheme: str):
    """p̌ 一步倒推的 (上行, 下行) 权重"""
    if scheme == "product":
        alpha = (1.0 + r_k * dt) ** 2
        return (1.0 - rho_k * sq) ** 2 / alpha, (1.0 + rho_k * sq) ** 2 / alpha
    drift = np.exp(-(2.0 * r_k + rho_k ** 2) * dt)
    return np.exp(-2.0 * rho_k * sq) * drift, np.exp(2.0 * rho_k * sq) * drift


def solve_p_bsde(r: TreeProcess, rho: TreeProcess, scheme: str = "exponential") -> RiccatiSolution:
    """
    (p, Λ)，经倒数 p̌ = 1/p 精确倒推，p̌(N) = 1，Λ = -Λ̌ p²

    scheme:
        exponential: p̌(k) = E_k[exp(-2ρΔW - (2r + ρ²)dt) p̌(k+1)]，
            即 exp(∫-2ρdW + ∫(-2r-ρ²)ds) 的条件期望
        product: p̌(k) = E_k[(1 - ρΔW)² p̌(k+1)] / (1 + r dt)²，
            离散随机指数；最优反应、配方恒等式与不动点在树上精确成立
    """
    if scheme not in P_SCHEMES:
        raise ConfigurationError(f"未知的 p 方程格式 '{scheme}'，可选 {' / '.join(P_SCHEMES)}")
    driver = r.driver
    N, dt, sq = driver.steps, driver.dt, driver.sqrt_dt

    pc: List[np.ndarray] = [None] * (N + 1)
    lc: List[np.ndarray] = [None] * (N + 1)
    pc[N] = np.ones(driver.terminal_count)
    lc[N] = np.zeros(driver.terminal_count)
    for k in range(N - 1, -1, -1):
        nxt = pc[k + 1]
        up, down = nxt[driver.up_index(k)], nxt[driver.down_index(k)]
        w_up, w_down = _p_weights(r.at(k), rho.at(k), dt, sq, scheme)
        pc[k] = 0.5 * (w_up * up + w_down * down)
        lc[k] = (up - down) / (2.0 * sq)

    p_levels = [1.0 / level for level in pc]
    lam_levels = [-lc[k] * p_levels[k] ** 2 for k in range(N + 1)]

    gain: List[np.ndarray] = []
    curvature: List[np.ndarray] = []
    for k in range(N):
        nxt = p_levels[k + 1]
        pu, pd = nxt[driver.up_index(k)], nxt[driver.down_index(k)]
        rho_k = rho.at(k)
        gu, gd = rho_k * dt + sq, rho_k * dt - sq
        first = 0.5 * (pu * gu + pd * gd)
        second = 0.5 * (pu * gu ** 2 + pd * gd ** 2)
        gain.append((1.0 + r.at(k) * dt) * first / second)
        curvature.append(second)
    gain.append(np.zeros(driver.terminal_count))
    curvature.append(np.zeros(driver.terminal_count))

    return RiccatiSolution(
        h=TreeProcess(driver, tuple(p_levels)),
        eta=TreeProcess(driver, tuple(lam_levels)),
        reciprocal=BsdeSolution(TreeProcess(driver, tuple(pc)), TreeProcess(driver, tuple(lc))),
        gain=TreeProcess(driver, tuple(gain)),
        curvature=TreeProcess(driver, tuple(curvature)),
        scheme=scheme,
    )


def riccati_residual(solution: RiccatiSolution, r: TreeProcess, rho: TreeProcess) -> float:
    """
    倒数方程的格式恒等式
        product: p̌(k)(1 + r dt)² - (1 + ρ² dt) E_k[p̌(k+1)] + 2ρ Λ̌(k) dt = 0
        exponential: p̌(k) e^{(2r+ρ²)dt} - cosh(2ρ√dt) E_k[p̌(k+1)] + sinh(2ρ√dt) √dt Λ̌(k) = 0
    """
    driver = r.driver
    dt, sq = driver.dt, driver.sqrt_dt
    pc, lc = solution.reciprocal.h, solution.reciprocal.eta
    worst = 0.0
    for k in range(driver.steps):
        rho_k, r_k = rho.at(k), r.at(k)
        mean = driver.cond_mean(pc.at(k + 1), k)
        if solution.scheme == "product":
            res = (pc.at(k) * (1.0 + r_k * dt) ** 2 - (1.0 + rho_k ** 2 * dt) * mean
                   + 2.0 * rho_k * lc.at(k) * dt)
        else:
            x = 2.0 * rho_k * sq
            res = (pc.at(k) * np.exp((2.0 * r_k + rho_k ** 2) * dt) - np.cosh(x) * mean
                   + np.sinh(x) * sq * lc.at(k))
        worst = max(worst, float(np.max(np.abs(res))))
    return worst


def solve_h_check(r: TreeProcess, rho: TreeProcess, p0: Optional[float] = None,
                  agent: Optional[int] = None, strict: bool = True) -> HCheckSolution:
    """
    (ȟ, η̌): dȟ = (r ȟ + ρ η̌) dt + η̌ dW，ȟ(T) = -1

    即 a = -r, b = -ρ 的线性 BSDE，ȟ(k) = E_k[(1 - ρΔW) ȟ(k+1)] / (1 + r dt)

    Args:
        p0: p(0)，省略时重新求解
        agent: 报错时使用的参与者编号
        strict: 为 True 时 p(0)ȟ(0)² ≥ 1 抛出 BoundCheckFailed
    """
    driver = r.driver
    sol = solve_linear_bsde(-r, -rho, TreeProcess.zeros(driver), -1.0)
    if p0 is None:
        p0 = solve_p_bsde(r, rho, scheme="product").h0
    product = float(p0 * sol.h0 ** 2)
    if strict and product >= 1.0:
        raise BoundCheckFailed(agent, product)
    logger.debug("ȟ(0)=%.10f, p(0)ȟ(0)²=%.12f", sol.h0, product)
    return HCheckSolution(sol.h, sol.eta, product)


# ---------------------------------------------------------------- 多维系统

class SystemVariant(Enum):
    USUAL = "usual"
    MARGINAL = "marginal"


@dataclass(frozen=True, eq=False)
class GammaFlow:
    """
    Γ 及其逐节点逆

    step_factor 为隐式格式的 (I - A dt)⁻¹；显式流为 None
    """
    gamma: TreeProcess
    gamma_inv: TreeProcess
    step_factor: Optional[TreeProcess] = None

    @property
    def scheme(self) -> str:
        return "explicit" if self.step_factor is None else "implicit"

    def weight(self, k: int) -> np.ndarray:
        """K、D 求积与 Γ 表示中第 k 步的权重 Γ(k)，隐式流再乘 (I - A dt)⁻¹"""
        if self.step_factor is None:
            return self.gamma.at(k)
        return self.gamma.at(k) @ self.step_factor.at(k)


@dataclass(frozen=True, eq=False)
class SystemMatrices:
    """
    dh̃ = -(A h̃ + B η̃ + C h̃(0) + F) dt + η̃ dW, h̃(T) = 0 的系数
    """
    variant: SystemVariant
    A: TreeProcess
    B: TreeProcess
    C: TreeProcess
    F: TreeProcess
    flow: Optional[GammaFlow] = None
    K: Optional[np.ndarray] = None
    D: Optional[np.ndarray] = None
    kd_method: str = ""

    @property
    def n(self) -> int:
        return self.F.value_shape[0]

    @property
    def driver(self) -> TreeDriver:
        return self.F.driver

    @property
    def Gamma(self) -> Optional[TreeProcess]:
        return None if self.flow is None else self.flow.gamma

    @property
    def GammaInv(self) -> Optional[TreeProcess]:
        return None if self.flow is None else self.flow.gamma_inv

    def has_anticipation(self) -> bool:
        return self.C.sup_norm() > 0.0

    def source(self, v: np.ndarray) -> TreeProcess:
        """C v + F"""
        v = np.asarray(v, dtype=float)
        return TreeProcess(self.driver, tuple(
            np.einsum("mij,j->mi", c, v) + f for c, f in zip(self.C.levels, self.F.levels)
        ))


GAMMA_SCHEMES = ("explicit", "implicit")


def gamma_flow(A: TreeProcess, B: TreeProcess, settings: Optional[SolverSettings] = None,
               scheme: str = "explicit") -> GammaFlow:
    """
    Γ 流，Γ(0) = I，Γ⁻¹ 逐节点直接求逆

    scheme:
        explicit: Γ(k+1) = Γ(k)(I + A dt + B ΔW)
        implicit: Γ(k+1) = Γ(k)(I - A dt)⁻¹(I + B ΔW)，隐式倒推格式的离散伴随，
            使 Γ h̃ 加上累积源项成为鞅，Γ 表示与 Picard 迭代在树上一致

    Raises:
        SingularGamma: 某节点条件数超过阈值
        PathDependenceError: 重组树上 Γ 依赖路径
    """
    if scheme not in GAMMA_SCHEMES:
        raise ConfigurationError(f"未知的 Γ 流格式 '{scheme}'，可选 {' / '.join(GAMMA_SCHEMES)}")
    settings = settings or DEFAULT_SOLVER
    driver = A.driver
    n = A.value_shape[-1]
    eye = np.eye(n)
    dt, sq = driver.dt, driver.sqrt_dt

    def factor(k: int) -> np.ndarray:
        mat = eye[None, :, :] - A.at(k) * dt
        cond = np.linalg.cond(mat)
        if np.any(~np.isfinite(cond) | (cond > 1.0 / _SINGULAR_EPS)):
            raise SingularStep(k, int(np.argmax(cond)))
        return np.linalg.inv(mat)

    step_factor = TreeProcess.from_function(driver, factor) if scheme == "implicit" else None

    def step(k: int, gam: np.ndarray, sign: int) -> np.ndarray:
        if step_factor is None:
            return gam @ (eye[None, :, :] + A.at(k) * dt + B.at(k) * (sign * sq))
        return gam @ step_factor.at(k) @ (eye[None, :, :] + B.at(k) * (sign * sq))

    gamma = driver.forward(eye, step, settings.node_consistency_tol)

    inv_levels = []
    for k, level in enumerate(gamma.levels):
        cond = np.linalg.cond(level)
        worst = float(np.max(cond)) if np.all(np.isfinite(cond)) else float("inf")
        if worst > settings.gamma_cond_max:
            raise SingularGamma(k, worst)
        inv_levels.append(np.linalg.inv(level))
    return GammaFlow(gamma, TreeProcess(driver, tuple(inv_levels)), step_factor)


def kd_matrices(flow: GammaFlow, C: TreeProcess, F: TreeProcess) -> Tuple[np.ndarray, np.ndarray]:
    """K = E Σ Γ(k) C(k) dt，D = E Σ Γ(k) F(k) dt (左端点求积；隐式流的权重见 GammaFlow.weight)"""
    driver = C.driver
    n = F.value_shape[0]
    K = np.zeros((n, n))
    D = np.zeros(n)
    for k in range(driver.steps):
        w = driver.node_weights(k)
        gm = flow.weight(k)
        K += driver.dt * np.einsum("m,mij,mjl->il", w, gm, C.at(k))
        D += driver.dt * np.einsum("m,mij,mj->i", w, gm, F.at(k))
    return K, D


def kd_matrices_backward(A: TreeProcess, B: TreeProcess, C: TreeProcess,
                         F: TreeProcess) -> Tuple[np.ndarray, np.ndarray]:
    """不经 Γ 的对偶算法: K 的第 j 列为源项 C e_j 的线性 BSDE 初值"""
    n = F.value_shape[0]
    D = np.asarray(solve_linear_bsde(A, B, F, 0.0).h0, dtype=float)
    K = np.zeros((n, n))
    for j in range(n):
        column = C.map(lambda level, j=j: level[:, :, j])
        K[:, j] = solve_linear_bsde(A, B, column, 0.0).h0
    return K, D


def complete_system(system: SystemMatrices, settings: Optional[SolverSettings] = None) -> SystemMatrices:
    """补上 Γ 流与 K、D；重组树上 Γ 依赖路径时改用对偶算法"""
    if system.K is not None:
        return system
    try:
        flow = gamma_flow(system.A, system.B, settings, scheme="implicit")
    except PathDependenceError as e:
        logger.info("Γ 在重组树上依赖路径 (第 %d 步)，K/D 改用倒推对偶算法", e.step)
        K, D = kd_matrices_backward(system.A, system.B, system.C, system.F)
        return replace(system, K=K, D=D, kd_method="backward-dual")
    K, D = kd_matrices(flow, system.C, system.F)
    return replace(system, flow=flow, K=K, D=D, kd_method="gamma-flow")


def solve_with_initial(system: SystemMatrices, v: np.ndarray) -> BsdeSolution:
    """把 h̃(0) 固定为 v 后的普通线性 BSDE"""
    return solve_linear_bsde(system.A, system.B, system.source(v), 0.0)


def recover_with_flow(system: SystemMatrices, v: np.ndarray) -> BsdeSolution:
    """h̃(k) = Γ⁻¹(k) E_k[Σ_{l≥k} Γ(l)(I - A dt)⁻¹(C v + F)(l) dt]；隐式流时与 solve_with_initial 在树上一致"""
    flow = system.flow
    driver = system.driver
    N, dt = driver.steps, driver.dt
    G = system.source(v)
    n = system.n

    s_next = np.zeros((driver.terminal_count, n))
    h_levels: List[np.ndarray] = [None] * (N + 1)
    h_levels[N] = np.zeros((driver.terminal_count, n))
    for k in range(N - 1, -1, -1):
        gm = flow.weight(k)
        s_k = np.einsum("mij,mj->mi", gm, G.at(k)) * dt + driver.cond_mean(s_next, k)
        h_levels[k] = np.einsum("mij,mj->mi", flow.gamma_inv.at(k), s_k)
        s_next = s_k
    eta_levels = [driver.martingale_integrand(h_levels[k + 1], k) for k in range(N)]
    eta_levels.append(np.zeros_like(h_levels[N]))
    return BsdeSolution(TreeProcess(driver, tuple(h_levels)), TreeProcess(driver, tuple(eta_levels)))


# ---------------------------------------------------------------- 线性系统分类

@dataclass(frozen=True, eq=False)
class LinearClassification:
    """(I - K) v = D 的解集"""
    kind: str                       # unique / infinite / none
    solution: np.ndarray            # 唯一解或伪逆解
    kernel: np.ndarray              # ker(I - K) 的正交基，(n, k)
    residual: float
    singular_values: np.ndarray
    threshold: float

    @property
    def d_in_image(self) -> bool:
        return self.kind != "none"


def classify_linear_system(K: np.ndarray, D: np.ndarray, threshold: float = 1e-8) -> LinearClassification:
    """
    按 I - K 的最小奇异值分类

    最小奇异值不超过 threshold·最大奇异值 即判为奇异；
    奇异时用伪逆解的残差判断 D 是否在像空间中
    """
    K = np.asarray(K, dtype=float)
    D = np.asarray(D, dtype=float)
    n = D.shape[0]
    mat = np.eye(n) - K
    sv = svdvals(mat)
    top = float(sv[0]) if sv.size else 0.0
    if top > 0.0 and float(sv[-1]) > threshold * top:
        v = np.linalg.solve(mat, D)
        residual = float(np.linalg.norm(mat @ v - D))
        return LinearClassification("unique", v, np.zeros((n, 0)), residual, sv, threshold)

    v = pinv(mat) @ D
    residual = float(np.linalg.norm(mat @ v - D))
    kernel = null_space(mat, rcond=threshold) if top > 0.0 else np.eye(n)
    kind = "infinite" if residual <= threshold * max(1.0, float(np.linalg.norm(D))) else "none"
    logger.info("I - K 奇异: 核维数 %d, 最小二乘残差 %.3e -> %s", kernel.shape[1], residual, kind)
    return LinearClassification(kind, v, kernel, residual, sv, threshold)


# ---------------------------------------------------------------- 依赖初值的 BSDE

@dataclass
class PicardResult:
    solution: BsdeSolution
    iterations: int
    ratios: List[float]
    converged: bool

    @property
    def contraction_ratio(self) -> float:
        return max(self.ratios) if self.ratios else 0.0


def picard_iteration(system: SystemMatrices, settings: Optional[SolverSettings] = None,
                     v0: Optional[np.ndarray] = None) -> PicardResult:
    """
    不动点迭代 v ↦ Y^v(0)，每次内层求解为带额外源项 C v 的线性 BSDE

    Raises:
        PicardDiverged: 收缩比连续 picard_patience 次大于 1，或达到最大迭代次数
    """
    settings = settings or DEFAULT_SOLVER
    v = np.zeros(system.n) if v0 is None else np.asarray(v0, dtype=float)
    if not system.has_anticipation():
        return PicardResult(solve_with_initial(system, v), 1, [], True)

    ratios: List[float] = []
    prev_delta = None
    above = 0
    ratio = float("nan")
    for it in range(1, settings.picard_max_iter + 1):
        new = np.asarray(solve_with_initial(system, v).h0, dtype=float)
        delta = float(np.linalg.norm(new - v))
        if prev_delta is not None and prev_delta > 0.0:
            ratio = delta / prev_delta
            ratios.append(ratio)
            above = above + 1 if ratio > 1.0 else 0
        v = new
        if not np.all(np.isfinite(v)):
            raise PicardDiverged(it, ratio)
        if delta <= settings.picard_tol * max(1.0, float(np.linalg.norm(v))):
            logger.debug("Picard 在第 %d 次收敛, 最大收缩比 %.4f", it, max(ratios) if ratios else 0.0)
            return PicardResult(solve_with_initial(system, v), it, ratios, True)
        if above >= settings.picard_patience:
            raise PicardDiverged(it, ratio)
        prev_delta = delta
    raise PicardDiverged(settings.picard_max_iter, ratio)


def contraction_bound(system: SystemMatrices) -> Dict[str, float]:
    """
    小期限压缩估计

    L = max(sup‖A‖, sup‖B‖, 1)，β = 16(L²+1)，
    I = Σ e^{β t_k} E‖C(k)‖²_F dt；I < 1 时理论收缩比 ≤ ½√I ≤ ½
    """
    driver = system.driver
    L = 1.0
    for coef in (system.A, system.B):
        for k in range(driver.steps):
            L = max(L, float(np.max(np.linalg.norm(coef.at(k), ord=2, axis=(1, 2)))))
    beta = 16.0 * (L ** 2 + 1.0)
    integral = 0.0
    for k in range(driver.steps):
        frob = np.sum(system.C.at(k) ** 2, axis=(1, 2))
        integral += float(np.exp(beta * k * driver.dt) * driver.expectation(frob, k)) * driver.dt
    return {
        "lipschitz": L,
        "beta": beta,
        "weighted_integral": integral,
        "ratio_bound": 0.5 * float(np.sqrt(integral)),
        "small_horizon": bool(integral < 1.0),
    }


@dataclass
class AnticipatedDiagnostics:
    K: np.ndarray
    D: np.ndarray
    singular_values: np.ndarray
    kd_method: str
    picard_iterations: int = 0
    contraction_ratio: float = 0.0
    picard_diverged: bool = False
    method_gap: Optional[float] = None
    bound: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "K": self.K.tolist(),
            "D": self.D.tolist(),
            "singular_values": [float(s) for s in self.singular_values],
            "kd_method": self.kd_method,
            "picard_iterations": self.picard_iterations,
            "contraction_ratio": self.contraction_ratio,
            "picard_diverged": self.picard_diverged,
            "method_gap": self.method_gap,
            "contraction_bound": dict(self.bound),
        }


@dataclass
class AnticipatedResult:
    """ΓRep 解 (solution)、Picard 解与诊断"""
    solution: BsdeSolution
    picard: Optional[BsdeSolution]
    diagnostics: AnticipatedDiagnostics
    system: SystemMatrices


@performance_monitor
def solve_anticipated_bsde(system: SystemMatrices,
                           settings: Optional[SolverSettings] = None) -> AnticipatedResult:
    """
    求解 dh̃ = -(A h̃ + B η̃ + C h̃(0) + F) dt + η̃ dW, h̃(T) = 0

    两种方法同时给出:
        ΓRep: h̃(0) = (I - K)⁻¹ D，再由 Γ 表示恢复 h̃
        Picard: v ↦ Y^v(0) 迭代；发散时记录并以 ΓRep 为准

    Raises:
        NotInvertible: I - K 奇异 (附核基与 D 是否在像空间中)
    """
    settings = settings or DEFAULT_SOLVER
    system = complete_system(system, settings)
    cls = classify_linear_system(system.K, system.D, settings.singular_rel_threshold)
    if cls.kind != "unique":
        raise NotInvertible(cls.kernel, cls.d_in_image, cls.residual)

    v = cls.solution
    if system.flow is not None:
        rep = recover_with_flow(system, v)
    else:
        rep = solve_with_initial(system, v)

    diagnostics = AnticipatedDiagnostics(
        K=system.K, D=system.D, singular_values=cls.singular_values,
        kd_method=system.kd_method, bound=contraction_bound(system),
    )
    picard = None
    try:
        result = picard_iteration(system, settings)
        picard = result.solution
        diagnostics.picard_iterations = result.iterations
        diagnostics.contraction_ratio = result.contraction_ratio
        diagnostics.method_gap = float(np.max(np.abs(np.asarray(picard.h0) - np.asarray(rep.h0))))
    except PicardDiverged as e:
        logger.warning("Picard 迭代发散 (%s)，以 ΓRep 结果为准", e)
        diagnostics.picard_diverged = True
        diagnostics.picard_iterations = e.iterations
        diagnostics.contraction_ratio = e.ratio
    logger.info("依赖初值 BSDE: 方法=%s, 最小奇异值=%.3e, Picard 迭代=%d",
                system.kd_method, float(cls.singular_values[-1]), diagnostics.picard_iterations)
    return AnticipatedResult(rep, picard, diagnostics, system)
