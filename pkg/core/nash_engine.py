"""
纳什均衡引擎
组装耦合系统、分类均衡 (唯一 / 无穷多 / 不存在 / 未定)，构造均衡策略
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from .exceptions import (
    FixedPointViolation, MarginalCase, NotMarginal, PathDependenceError, SolverError, ValidationError,
)
from .lattice_bsde import (
    BsdeSolution, SystemMatrices, SystemVariant, classify_linear_system, complete_system,
    contraction_bound, recover_with_flow, solve_anticipated_bsde, solve_linear_bsde, solve_with_initial,
)
from .market_model import ValidatedGame
from .parallel import map_ordered, performance_monitor
from .settings import DEFAULT_SOLVER, SolverSettings
from .single_agent import (
    MarketFactors, StrategyProfile, best_response, lift_if_path_dependent, market_factors, solve_htilde,
)
from .tree import TreeProcess

logger = logging.getLogger(__name__)


class Classification(Enum):
    """均衡分类"""
    UNIQUE = "Unique"
    INFINITELY_MANY = "InfinitelyMany"
    NONE = "None"
    UNDECIDED = "Undecided"


@dataclass(frozen=True, eq=False)
class PhiComponents:
    """c_i = -η̌_i/ȟ_i(0)，f_i，φ_i = η̃_i + c_i h̃_i(0) + f_i，Φ = Σ φ_i"""
    c: TreeProcess
    f: TreeProcess
    phi: Optional[TreeProcess] = None
    Phi: Optional[TreeProcess] = None

    def with_htilde(self, htilde: BsdeSolution, v: Optional[np.ndarray] = None) -> "PhiComponents":
        v = np.asarray(htilde.h0 if v is None else v, dtype=float)
        phi = htilde.eta + self.c * v + self.f
        Phi = phi.map(lambda level: np.sum(level, axis=1))
        return PhiComponents(self.c, self.f, phi, Phi)


@dataclass
class EquilibriumReport:
    """分类结果与诊断"""
    psi: float
    classification: Classification
    profiles: List[StrategyProfile] = field(default_factory=list)
    representative: str = ""
    family: Dict = field(default_factory=dict)
    witness: Dict = field(default_factory=dict)
    diagnostics: Dict = field(default_factory=dict)
    thresholds: Dict = field(default_factory=dict)
    htilde: Optional[BsdeSolution] = None

    @property
    def profile(self) -> Optional[StrategyProfile]:
        return self.profiles[0] if self.profiles else None


def _sup(process: TreeProcess) -> float:
    """控制时刻 (第 0..N-1 层) 的上确界范数"""
    return process.sup_norm(process.driver.steps - 1)


def chi_samples(game: ValidatedGame) -> List[Tuple[str, TreeProcess]]:
    """χ 样本: 0、常数 1、一个依赖路径的样本 (完全二叉树上为 W 的滑动最大值，重组树上为 W)"""
    driver = game.driver
    samples = [("chi=0", TreeProcess.zeros(driver)), ("chi=1", TreeProcess.constant(driver, 1.0))]
    if driver.is_full_binary:
        def running_max(k: int) -> np.ndarray:
            if k == 0:
                return np.zeros(1)
            walk = np.cumsum(driver.path_signs(k), axis=1) * driver.sqrt_dt
            return np.maximum(np.max(walk, axis=1), 0.0)
        samples.append(("chi=max(W)", TreeProcess.from_function(driver, running_max)))
    else:
        samples.append(("chi=W", TreeProcess.from_function(driver, driver.brownian_level)))
    return samples


class NashEngine:
    """纳什均衡引擎"""

    def __init__(self, game: ValidatedGame, settings: Optional[SolverSettings] = None):
        self.settings = settings or DEFAULT_SOLVER
        self.game = lift_if_path_dependent(game, self.settings)
        self._factors: Optional[List[MarketFactors]] = None
        self._components: Optional[PhiComponents] = None

    # ------------------------------------------------------------ 市场因子

    def factors(self) -> List[MarketFactors]:
        """每个参与者的 (p, ȟ, Y*)，允许退化前沿"""
        if self._factors is None:
            self._factors = map_ordered(
                lambda i: market_factors(self.game, i, strict=False, settings=self.settings),
                range(self.game.n), self.settings.workers,
            )
        return self._factors

    def components(self) -> PhiComponents:
        """c_i 与 f_i"""
        if self._components is None:
            game = self.game
            c_list, f_list = [], []
            for i, fac in enumerate(self.factors()):
                hc0 = fac.hcheck0
                eta_check = fac.hcheck.eta
                c_list.append(eta_check * (-1.0 / hc0))
                weight = -game.z[i] / hc0 + 1.0 / (game.gamma[i] * fac.p0 * hc0 ** 2)
                f_list.append(eta_check * weight + fac.p.gain * fac.ystar / fac.p.h)
            self._components = PhiComponents(TreeProcess.stack(c_list), TreeProcess.stack(f_list))
        return self._components

    def _thresholds(self) -> Dict:
        s = self.settings
        return {
            "singular_rel_threshold": s.singular_rel_threshold,
            "zero_rel_threshold": s.zero_rel_threshold,
            "fixed_point_tol": s.fixed_point_tol,
            "marginal_tol": s.marginal_tol,
        }

    def _assumptions(self) -> Dict:
        tol = self.settings.marginal_tol
        return {
            "identical_sharpe": self.game.identical_sharpe(tol),
            "deterministic": self.game.deterministic_coefficients(tol),
        }

    # ------------------------------------------------------------ 通常情形

    def assemble_usual(self) -> SystemMatrices:
        """
        Ψ < 1 时的系数
            M_ij = [S_i/(1-Ψ) + ρ_j - ρ_i] / (n-1+θ_j)，S_i = Σ_k θ_k(ρ_k - ρ_i)/(n-1+θ_k)
            A = -r I, B_ij = θ_i M_ij - ρ_i δ_ij, C_ij = θ_i M_ij c_j, F_i = θ_i Σ_j M_ij f_j
        """
        game = self.game
        psi = game.psi
        if game.is_marginal(self.settings.marginal_tol):
            raise MarginalCase("Ψ = 1，请使用边际情形")
        if not 0.0 <= psi < 1.0:
            raise ValidationError(f"Ψ={psi} 不在 [0,1) 内")
        n = game.n
        theta = game.theta
        w = theta / (n - 1 + theta)
        eye = np.eye(n)
        comps = self.components()

        A_levels, B_levels, C_levels, F_levels = [], [], [], []
        for k in range(game.driver.steps + 1):
            rho = game.rho.at(k)
            S = (rho @ w)[:, None] - psi * rho
            M = (S[:, :, None] / (1.0 - psi) + rho[:, None, :] - rho[:, :, None]) / (n - 1 + theta)[None, None, :]
            TM = theta[None, :, None] * M
            A_levels.append(-game.r.at(k)[:, None, None] * eye[None, :, :])
            B_levels.append(TM - rho[:, :, None] * eye[None, :, :])
            C_levels.append(TM * comps.c.at(k)[:, None, :])
            F_levels.append(np.einsum("mij,mj->mi", TM, comps.f.at(k)))
        driver = game.driver
        return SystemMatrices(
            SystemVariant.USUAL,
            TreeProcess(driver, tuple(A_levels)), TreeProcess(driver, tuple(B_levels)),
            TreeProcess(driver, tuple(C_levels)), TreeProcess(driver, tuple(F_levels)),
        )

    @staticmethod
    def equilibrium_exposures(game: ValidatedGame, phi: TreeProcess) -> TreeProcess:
        """
        σ_i π*_i = -(1/(1-Ψ))·(nθ_i/(n-1+θ_i))·Σ_j φ_j/(n + nθ_j/(n-1)) - φ_i/(1 + θ_i/(n-1))
        """
        n = game.n
        theta = game.theta
        psi = game.psi
        outer = n * theta / (n - 1 + theta)
        inner = 1.0 / (n + n * theta / (n - 1))
        own = 1.0 / (1.0 + theta / (n - 1))

        def level(phi_k: np.ndarray) -> np.ndarray:
            total = phi_k @ inner
            return -(1.0 / (1.0 - psi)) * outer[None, :] * total[:, None] - own[None, :] * phi_k
        return phi.map(level)

    def construct_profile(self, htilde: BsdeSolution, v: Optional[np.ndarray] = None,
                          label: str = "", check: bool = True) -> StrategyProfile:
        """
        由 (h̃, η̃) 构造策略组合，并校验不动点性质

        Raises:
            FixedPointViolation: 某参与者的最优反应与构造策略不符
        """
        comps = self.components().with_htilde(htilde, v)
        exposures = self.equilibrium_exposures(self.game, comps.phi)
        profile = self._finish_profile(exposures, label)
        if check:
            self.fixed_point_residuals(profile, raise_on_violation=True)
        return profile

    def _finish_profile(self, exposures: TreeProcess, label: str) -> StrategyProfile:
        driver = self.game.driver
        exposures = exposures.with_level(driver.steps, np.zeros((driver.terminal_count, self.game.n)))
        return StrategyProfile.from_exposures(self.game, exposures, label)

    def fixed_point_residuals(self, profile: StrategyProfile, raise_on_violation: bool = False) -> List[float]:
        """逐个参与者重算最优反应，返回与组合中策略的上确界偏差"""
        game = self.game
        factors = self.factors()
        scale = max(1.0, _sup(profile.amounts))

        def residual(i: int) -> float:
            br = best_response(game, i, profile, factors=factors[i], strict=False, settings=self.settings)
            return _sup(br.control - profile.agent(i))

        residuals = map_ordered(residual, range(game.n), self.settings.workers)
        if raise_on_violation:
            for i, res in enumerate(residuals):
                if res > self.settings.fixed_point_tol * scale:
                    raise FixedPointViolation(i, res)
        return residuals

    def correspondence_residual(self, profile: StrategyProfile, htilde: BsdeSolution) -> float:
        """由组合逐个重解 h̃_i，与系统解比较 (h 与 η 的上确界偏差)"""
        worst = 0.0
        for i in range(self.game.n):
            sol = solve_htilde(self.game, i, profile)
            worst = max(worst,
                        _sup(sol.h - htilde.h.component(i)),
                        _sup(sol.eta - htilde.eta.component(i)))
        return worst

    @performance_monitor
    def classify_usual(self) -> EquilibriumReport:
        """Ψ < 1: 按 I - K 分类"""
        game = self.game
        logger.info("通常情形 Ψ=%.6f: 组装系数矩阵", game.psi)
        system = complete_system(self.assemble_usual(), self.settings)
        cls = classify_linear_system(system.K, system.D, self.settings.singular_rel_threshold)
        diagnostics = {
            "singular_values": [float(s) for s in cls.singular_values],
            "K": system.K.tolist(),
            "D": system.D.tolist(),
            "kd_method": system.kd_method,
            "least_squares_residual": cls.residual,
            "bound_products": [f.bound_product for f in self.factors()],
            "assumptions": self._assumptions(),
            "contraction_bound": contraction_bound(system),
        }
        report = EquilibriumReport(game.psi, Classification.NONE, diagnostics=diagnostics,
                                   thresholds=self._thresholds())

        if cls.kind == "unique":
            result = solve_anticipated_bsde(system, self.settings)
            htilde = result.solution
            profile = self.construct_profile(htilde, label="unique")
            diagnostics["anticipated"] = result.diagnostics.to_dict()
            diagnostics["fixed_point_residuals"] = self.fixed_point_residuals(profile)
            diagnostics["correspondence_residual"] = self.correspondence_residual(profile, htilde)
            report.classification = Classification.UNIQUE
            report.profiles = [profile]
            report.representative = "unique"
            report.htilde = htilde
        elif cls.kind == "infinite":
            report.classification = Classification.INFINITELY_MANY
            report.family = {
                "parameterization": "kernel",
                "particular": cls.solution.tolist(),
                "kernel_basis": cls.kernel.T.tolist(),
            }
            labels = []
            for label, v in self._kernel_samples(cls.solution, cls.kernel):
                htilde = recover_with_flow(system, v) if system.flow is not None else solve_with_initial(system, v)
                report.profiles.append(self.construct_profile(htilde, v, label))
                labels.append(label)
            report.family["samples"] = labels
            report.representative = "pseudoinverse (一个选择，而非规范元素)"
        else:
            report.witness = {"kind": "D_not_in_image", "least_squares_residual": cls.residual}
        logger.info("分类结果: %s", report.classification.value)
        return report

    def _kernel_samples(self, particular: np.ndarray, kernel: np.ndarray):
        yield "pseudoinverse", particular
        for j in range(kernel.shape[1]):
            for coef in self.settings.kernel_coefficients:
                yield f"kernel[{j}]*{coef:g}", particular + coef * kernel[:, j]

    # ------------------------------------------------------------ 边际情形

    def assemble_marginal(self, chi: Optional[TreeProcess] = None) -> SystemMatrices:
        """
        Ψ = 1 (全部 θ_i = 1) 时的系数
            B'_ij = (ρ_j - ρ_i)/n (i≠j)，B'_ii = -ρ_i
            C'_ij = (ρ_j - ρ_i) c_j / n
            F'_i = Σ_j (ρ_j - ρ_i) f_j / n - χ Σ_j (ρ_j - ρ_i)/(n-1)
        """
        game = self.game
        if not game.is_marginal(self.settings.marginal_tol):
            raise NotMarginal(f"Ψ={game.psi:.12f}，存在 θ_i < 1")
        driver = game.driver
        chi = chi if chi is not None else TreeProcess.zeros(driver)
        n = game.n
        eye = np.eye(n)
        comps = self.components()

        A_levels, B_levels, C_levels, F_levels = [], [], [], []
        for k in range(driver.steps + 1):
            rho = game.rho.at(k)
            diff = rho[:, None, :] - rho[:, :, None]      # (ρ_j - ρ_i)
            A_levels.append(-game.r.at(k)[:, None, None] * eye[None, :, :])
            B_levels.append(diff / n - rho[:, :, None] * eye[None, :, :])
            C_levels.append(diff * comps.c.at(k)[:, None, :] / n)
            F_levels.append(np.einsum("mij,mj->mi", diff, comps.f.at(k)) / n
                            - chi.at(k)[:, None] * np.sum(diff, axis=2) / (n - 1))
        return SystemMatrices(
            SystemVariant.MARGINAL,
            TreeProcess(driver, tuple(A_levels)), TreeProcess(driver, tuple(B_levels)),
            TreeProcess(driver, tuple(C_levels)), TreeProcess(driver, tuple(F_levels)),
        )

    def marginal_profile(self, phi: TreeProcess, chi: TreeProcess, label: str) -> StrategyProfile:
        """σ_i π_i = χ - ((n-1)/n) φ_i"""
        n = self.game.n
        exposures = TreeProcess(self.game.driver, tuple(
            c[:, None] - (n - 1) / n * p for c, p in zip(chi.levels, phi.levels)
        ))
        return self._finish_profile(exposures, label)

    def xi_process(self, i: int = 0) -> TreeProcess:
        """Ξ = η̌ + κ ȟ (κ 为 Λ/p + ρ 的离散对应)"""
        fac = self.factors()[i]
        return fac.hcheck.eta + fac.p.gain * fac.hcheck.h

    def l_process_residual(self, i: int = 0) -> float:
        """L = p ȟ 与齐次递推 L' = L (1 - ρΔW)/(1 + r dt) 的偏差；Ξ ≡ 0 时为零"""
        game = self.game
        driver = game.driver
        fac = self.factors()[i]
        L = fac.p.h * fac.hcheck.h
        rho = game.rho_of(i)
        sq, dt = driver.sqrt_dt, driver.dt
        worst = 0.0
        for k in range(driver.steps):
            alpha = 1.0 + game.r.at(k) * dt
            nxt = L.at(k + 1)
            up = L.at(k) * (1.0 - rho.at(k) * sq) / alpha
            down = L.at(k) * (1.0 + rho.at(k) * sq) / alpha
            worst = max(worst,
                        float(np.max(np.abs(nxt[driver.up_index(k)] - up))),
                        float(np.max(np.abs(nxt[driver.down_index(k)] - down))))
        return worst

    def log_weight_spread(self, i: int = 0) -> Tuple[float, bool]:
        """
        Σ_k [log(1 + r dt) - log(1 - ρΔW)] 在终端节点上的极差，以及是否判为确定
        (连续时间中 ∫ρdW + ∫(r + ρ²/2)ds 是否确定)
        """
        game = self.game
        driver = game.driver
        rho = game.rho_of(i)
        sq, dt = driver.sqrt_dt, driver.dt

        def step(k: int, ell: np.ndarray, sign: int) -> np.ndarray:
            return ell + np.log1p(game.r.at(k) * dt) - np.log1p(-rho.at(k) * sign * sq)
        try:
            ell = driver.forward(0.0, step, self.settings.node_consistency_tol)
        except PathDependenceError as e:
            return e.mismatch, False
        spread = float(np.ptp(ell.terminal))
        scale = max(1.0, float(np.max(np.abs(ell.terminal))))
        return spread, spread <= self.settings.zero_rel_threshold * scale

    def _is_zero(self, value: float, scale: float) -> bool:
        return value <= self.settings.zero_rel_threshold * scale if scale > 0.0 else True

    def _marginal_family(self, report: EquilibriumReport, phi_for_chi) -> None:
        labels, residuals = [], []
        for label, chi in chi_samples(self.game):
            phi = phi_for_chi(chi)
            profile = self.marginal_profile(phi, chi, label)
            self.fixed_point_residuals(profile, raise_on_violation=True)
            report.profiles.append(profile)
            labels.append(label)
            residuals.append(_sup(phi.map(lambda level: np.sum(level, axis=1))))
        report.family = {"parameterization": "chi", "samples": labels}
        report.diagnostics["marginal_sum_residuals"] = residuals
        report.representative = "chi=0 (一个选择，而非规范元素)"

    @performance_monitor
    def classify_marginal(self, chi: Optional[TreeProcess] = None) -> EquilibriumReport:
        """
        Ψ = 1:
            ρ_i 全相同: Ξ ≡ 0 时无穷多，否则不存在
            r、ρ 确定: 判据 (SDE 前推 ĥ(N) ≡ 0) 成立时无穷多，否则不存在
            其他: 未定，报告给定 χ 下的 Φ 残差
        """
        game = self.game
        if not game.is_marginal(self.settings.marginal_tol):
            raise NotMarginal(f"Ψ={game.psi:.12f}，存在 θ_i < 1")
        assumptions = self._assumptions()
        report = EquilibriumReport(game.psi, Classification.NONE, thresholds=self._thresholds(),
                                   diagnostics={"assumptions": assumptions,
                                                "bound_products": [f.bound_product for f in self.factors()]})
        if assumptions["identical_sharpe"]:
            self._classify_equal_sharpe(report)
        elif assumptions["deterministic"]:
            self._classify_deterministic(report)
        else:
            self._classify_general(report, chi)
        logger.info("边际情形分类结果: %s", report.classification.value)
        return report

    def _classify_equal_sharpe(self, report: EquilibriumReport) -> None:
        fac = self.factors()[0]
        xi = self.xi_process(0)
        xi_norm = _sup(xi)
        scale = max(_sup(fac.hcheck.eta), _sup(fac.p.gain * fac.hcheck.h))
        spread, deterministic_log = self.log_weight_spread(0)
        comps = self.components()
        Phi = comps.f.map(lambda level: np.sum(level, axis=1))
        report.diagnostics.update({
            "xi_norm": xi_norm,
            "xi_scale": scale,
            "log_weight_spread": spread,
            "log_weight_deterministic": deterministic_log,
            "l_process_residual": self.l_process_residual(0),
            "phi_residual": _sup(Phi),
        })
        if self._is_zero(xi_norm, scale):
            report.classification = Classification.INFINITELY_MANY
            # ρ 全相同时 h̃' ≡ 0，φ_i = f_i
            self._marginal_family(report, lambda chi: comps.f)
        else:
            report.classification = Classification.NONE
            report.witness = {"kind": "xi_nonzero", "xi_norm": xi_norm, "threshold": self.settings.zero_rel_threshold * scale}

    def _marginal_phi(self, chi: TreeProcess) -> Tuple[TreeProcess, Dict]:
        system = self.assemble_marginal(chi)
        result = solve_anticipated_bsde(system, self.settings)
        comps = self.components().with_htilde(result.solution)
        return comps.phi, result.diagnostics.to_dict()

    def _classify_deterministic(self, report: EquilibriumReport) -> None:
        game = self.game
        driver = game.driver
        comps = self.components()
        factors = self.factors()

        scaled = TreeProcess.stack([fac.p.gain * fac.ystar / fac.p.h for fac in factors])
        eta_prime = scaled.map(lambda level: np.sum(level, axis=1))
        rho_bar = game.rho.map(lambda level: np.mean(level, axis=1))
        G = TreeProcess(driver, tuple(
            np.sum(f * (rho - rb[:, None]), axis=1)
            for f, rho, rb in zip(comps.f.levels, game.rho.levels, rho_bar.levels)
        ))

        # 标量 BSDE: dĥ = -(-r ĥ - ρ̄ η̂ + G) dt + η̂ dW
        scalar = solve_linear_bsde(-game.r, -rho_bar, G, 0.0)
        Phi = scalar.eta + eta_prime
        phi_norm = _sup(Phi)
        phi_scale = max(_sup(scalar.eta), _sup(eta_prime))

        # 判据: 从 ĥ(0) = Σ q(k+1) E[ρ̄η̂' + G] dt 前推，检验 ĥ(N) ≡ 0
        drift = rho_bar * eta_prime + G
        dt, sq = driver.dt, driver.sqrt_dt
        q = 1.0
        h0 = 0.0
        for k in range(driver.steps):
            q /= 1.0 + float(game.r.at(k)[0]) * dt
            h0 += q * float(drift.expectation(k)) * dt

        def step(k: int, h: np.ndarray, sign: int) -> np.ndarray:
            return (1.0 + game.r.at(k) * dt) * h - drift.at(k) * dt - eta_prime.at(k) * sign * sq
        try:
            forward = driver.forward(h0, step, self.settings.node_consistency_tol)
            terminal_residual = float(np.max(np.abs(forward.terminal)))
        except PathDependenceError as e:
            terminal_residual = float("inf")
            logger.debug("判据前推依赖路径: %s", e)
        criterion_scale = max(abs(h0), dt * drift.sup_norm(), sq * eta_prime.sup_norm())

        criterion_holds = self._is_zero(terminal_residual, criterion_scale)
        phi_vanishes = self._is_zero(phi_norm, phi_scale)
        if criterion_holds != phi_vanishes:
            logger.warning("判据 (ĥ(N) ≡ 0: %s) 与 Φ ≡ 0 (%s) 不一致，按判据分类", criterion_holds, phi_vanishes)
        report.diagnostics.update({
            "phi_residual": phi_norm,
            "phi_scale": phi_scale,
            "phi_vanishes": phi_vanishes,
            "criterion_initial": h0,
            "criterion_terminal_residual": terminal_residual,
            "criterion_holds": criterion_holds,
        })
        if criterion_holds:
            report.classification = Classification.INFINITELY_MANY
            self._marginal_family(report, lambda chi: self._marginal_phi(chi)[0])
        else:
            report.classification = Classification.NONE
            report.witness = {"kind": "criterion_fails", "phi_norm": phi_norm,
                              "terminal_residual": terminal_residual,
                              "threshold": self.settings.zero_rel_threshold * criterion_scale}

    def _classify_general(self, report: EquilibriumReport, chi: Optional[TreeProcess]) -> None:
        chi = chi if chi is not None else TreeProcess.zeros(self.game.driver)
        report.classification = Classification.UNDECIDED
        try:
            phi, anticipated = self._marginal_phi(chi)
            report.diagnostics["anticipated"] = anticipated
            report.diagnostics["phi_residual"] = _sup(phi.map(lambda level: np.sum(level, axis=1)))
        except SolverError as e:  # 奇异或发散时仍给出未定结论
            report.diagnostics["phi_residual"] = None
            report.diagnostics["note"] = str(e)
        report.witness = {"kind": "undecided", "phi_residual": report.diagnostics["phi_residual"]}

    # ------------------------------------------------------------ 入口

    def classify(self, chi: Optional[TreeProcess] = None) -> EquilibriumReport:
        if self.game.is_marginal(self.settings.marginal_tol):
            return self.classify_marginal(chi)
        return self.classify_usual()
