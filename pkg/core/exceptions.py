"""
异常体系
博弈校验、求解器与纳什验证的错误类型
"""

from typing import Any, List, Optional


class MVGameError(Exception):
    """所有错误的基类"""


# ---------------------------------------------------------------- 校验类

class ValidationError(MVGameError):
    """输入校验失败（退出码 1）"""

    def __init__(self, message: str, violations: Optional[List[Any]] = None):
        super().__init__(message)
        self.violations = list(violations or [])


class DegenerateSharpe(ValidationError):
    """某个风险溢价 ρ_i 在树上恒为零"""


class BoundViolation(ValidationError):
    """系数或参数越界"""


class DriverMismatch(ValidationError):
    """驱动模式与系数类型不匹配"""


class PathDependenceError(DriverMismatch):
    """重组树上的前向递推在同一节点得到两个不同的值"""

    def __init__(self, step: int, mismatch: float):
        super().__init__(f"第 {step} 步的重组节点两条来路不一致 (差值 {mismatch:.3e})，需要完全二叉树")
        self.step = step
        self.mismatch = mismatch


class GameConfigError(ValidationError):
    """博弈配置文件结构错误"""

    def __init__(self, message: str, line: Optional[int] = None):
        text = f"第 {line} 行: {message}" if line is not None else message
        super().__init__(text)
        self.line = line


class ConfigurationError(ValidationError):
    """运行参数错误（步数、模式、容差等）"""


# ---------------------------------------------------------------- 求解类

class SolverError(MVGameError):
    """数值求解失败（退出码 2）"""


class SingularStep(SolverError):
    def __init__(self, step: int, node: int):
        super().__init__(f"第 {step} 步节点 {node} 处 (I - a·dt) 奇异，dt 相对 ‖a‖ 过大")
        self.step = step
        self.node = node


class SingularGamma(SolverError):
    def __init__(self, step: int, condition: float):
        super().__init__(f"第 {step} 步 Γ 条件数 {condition:.3e} 超过阈值")
        self.step = step
        self.condition = condition


class BoundCheckFailed(SolverError):
    """离散化得到 p(0)·ȟ(0)² ≥ 1"""

    def __init__(self, agent: Optional[int], product: float):
        who = f"参与者 {agent + 1}" if agent is not None else "该系数"
        super().__init__(f"{who}: p(0)·ȟ(0)² = {product:.12f} ≥ 1，请增加步数")
        self.agent = agent
        self.product = product


class DenominatorDegenerate(SolverError):
    def __init__(self, product: float):
        super().__init__(f"拉格朗日分母退化: p0·ȟ0² = {product:.12f}")
        self.product = product


class Infeasible(SolverError):
    def __init__(self, agent: int, integral: float):
        super().__init__(f"参与者 {agent + 1} 的可行性积分 {integral:.3e} 未超过阈值")
        self.agent = agent
        self.integral = integral


class NotInvertible(SolverError):
    """I - K 奇异；交给纳什分类处理"""

    def __init__(self, kernel: Any, d_in_image: bool, residual: float):
        super().__init__(f"I - K 奇异 (核维数 {kernel.shape[1]}，D 在像空间中: {d_in_image})")
        self.kernel = kernel
        self.d_in_image = d_in_image
        self.residual = residual


class PicardDiverged(SolverError):
    def __init__(self, iterations: int, ratio: float):
        super().__init__(f"Picard 迭代 {iterations} 次未收敛 (最近收缩比 {ratio:.3e})")
        self.iterations = iterations
        self.ratio = ratio


class FixedPointViolation(SolverError):
    def __init__(self, agent: int, residual: float):
        super().__init__(f"参与者 {agent + 1} 的最优反应与构造策略偏差 {residual:.3e}")
        self.agent = agent
        self.residual = residual


class ConsistencyViolation(SolverError):
    def __init__(self, what: str, residual: float):
        super().__init__(f"{what} 的格式恒等式残差 {residual:.3e} 超出容差")
        self.what = what
        self.residual = residual


class MarginalCase(SolverError):
    """Ψ = 1，应走边际情形"""


class NotMarginal(SolverError):
    """存在 θ_i < 1，不是边际情形"""


# ---------------------------------------------------------------- 验证类

class NashViolation(MVGameError):
    """单边偏离改进了目标值（退出码 3）"""

    def __init__(self, agent: int, deviation_id: str, epsilon: float, gap: float, report: Any = None):
        super().__init__(
            f"参与者 {agent + 1} 在偏离 {deviation_id} (ε={epsilon:g}) 下目标值提升 {gap:.3e}"
        )
        self.agent = agent
        self.deviation_id = deviation_id
        self.epsilon = epsilon
        self.gap = gap
        self.report = report
