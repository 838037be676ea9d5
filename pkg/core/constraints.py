"""
约束满足系统
检查市场与参与者参数的各项约束，并一次性收集全部违反项
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, List, Type

import numpy as np

from .exceptions import BoundViolation, DegenerateSharpe, DriverMismatch, ValidationError


@dataclass
class ConstraintViolation:
    """约束违反信息"""
    constraint_type: str
    description: str
    severity: str  # 'error', 'warning'
    location: str = ""  # 出错的配置键或节点
    error_cls: Type[ValidationError] = field(default=ValidationError, repr=False)

    def to_dict(self) -> Dict:
        return {
            "type": self.constraint_type,
            "description": self.description,
            "severity": self.severity,
            "location": self.location,
        }


class Constraint(ABC):
    """约束基类"""

    @abstractmethod
    def check(self, context: Dict) -> List[ConstraintViolation]:
        """检查约束，返回全部违反项"""

    @abstractmethod
    def get_name(self) -> str:
        """获取约束名称"""


class DriverConstraint(Constraint):
    """路径函数系数必须配合完全二叉树"""

    def get_name(self) -> str:
        return "驱动约束"

    def check(self, context: Dict) -> List[ConstraintViolation]:
        driver = context["driver"]
        if driver.is_full_binary:
            return []
        violations = []
        for key, coef in context["coefficients"].items():
            if coef.requires_full_binary:
                violations.append(ConstraintViolation(
                    self.get_name(),
                    f"{key} 是路径函数，但驱动为重组树",
                    "error",
                    key,
                    DriverMismatch,
                ))
        return violations


class ParameterBoundConstraint(Constraint):
    """参与者参数与声明常数的范围"""

    def get_name(self) -> str:
        return "参数范围约束"

    def check(self, context: Dict) -> List[ConstraintViolation]:
        violations = []
        spec = context["spec"]
        agents = context["agents"]

        def bad(message: str, location: str):
            violations.append(ConstraintViolation(self.get_name(), message, "error", location, BoundViolation))

        if spec.n < 2:
            bad(f"参与者数量 n={spec.n} 必须 ≥ 2", "market.n")
        if len(agents) != spec.n:
            bad(f"参与者块数量 {len(agents)} 与资产数量 {spec.n} 不符", "agents")
        if not spec.horizon > 0:
            bad(f"期限 T={spec.horizon} 必须为正", "market.horizon")
        if not spec.bounds.sigma_c > 1:
            bad(f"波动率界 c={spec.bounds.sigma_c} 必须大于 1", "market.bounds.sigma_c")
        if spec.bounds.r_max < 0:
            bad(f"利率上界 r_max={spec.bounds.r_max} 不能为负", "market.bounds.r_max")
        for i, agent in enumerate(agents):
            if not 0.0 <= agent.theta <= 1.0:
                bad(f"θ={agent.theta} 不在 [0,1] 内", f"agents[{i}].theta")
            if not agent.gamma > 0:
                bad(f"γ={agent.gamma} 必须为正", f"agents[{i}].gamma")
        return violations


class CoefficientBoundConstraint(Constraint):
    """在树的每个节点上检查 r 与 σ 的声明界，以及二叉树无套利条件 |ρ|√dt < 1"""

    def get_name(self) -> str:
        return "系数范围约束"

    def check(self, context: Dict) -> List[ConstraintViolation]:
        violations = []
        spec = context["spec"]
        driver = context["driver"]
        r, sigma, rho = context["r"], context["sigma"], context["rho"]
        c = spec.bounds.sigma_c

        def bad(message: str, location: str):
            violations.append(ConstraintViolation(self.get_name(), message, "error", location, BoundViolation))

        for k in range(driver.steps + 1):
            r_k = r.at(k)
            if np.any(r_k < 0):
                j = int(np.argmin(r_k))
                bad(f"利率在第 {k} 步节点 {j} 为负 ({r_k[j]:.6g})", f"market.r@({k},{j})")
                break
            if np.any(r_k > spec.bounds.r_max):
                j = int(np.argmax(r_k))
                bad(f"利率在第 {k} 步节点 {j} 超过 r_max ({r_k[j]:.6g})", f"market.r@({k},{j})")
                break
        for i in range(spec.n):
            for k in range(driver.steps + 1):
                s = sigma.at(k)[:, i]
                outside = (s < 1.0 / c) | (s > c)
                if np.any(outside):
                    j = int(np.argmax(outside))
                    bad(f"σ_{i} 在第 {k} 步节点 {j} 取 {s[j]:.6g}，不在 [1/c, c] 内",
                        f"market.sigma[{i}]@({k},{j})")
                    break
            for k in range(driver.steps):
                x = np.abs(rho.at(k)[:, i]) * driver.sqrt_dt
                if np.any(x >= 1.0):
                    j = int(np.argmax(x))
                    bad(f"ρ_{i}√dt 在第 {k} 步节点 {j} 达到 {x[j]:.6g}，需要更多步数",
                        f"market.mu[{i}]@({k},{j})")
                    break
        return violations


class SharpeConstraint(Constraint):
    """每个风险溢价在树上不恒为零"""

    def get_name(self) -> str:
        return "夏普比约束"

    def check(self, context: Dict) -> List[ConstraintViolation]:
        rho = context["rho"]
        driver = context["driver"]
        violations = []
        for i in range(context["spec"].n):
            # 终端层的系数不进入动态
            active = max(float(np.max(np.abs(rho.at(k)[:, i]))) for k in range(driver.steps))
            if active == 0.0:
                violations.append(ConstraintViolation(
                    self.get_name(), f"ρ_{i} 在树上恒为零", "error", f"market.mu[{i}]", DegenerateSharpe,
                ))
        return violations


class ConstraintSolver:
    """约束求解器"""

    def __init__(self, constraints: List[Constraint]):
        self.constraints = constraints

    def validate(self, context: Dict) -> List[ConstraintViolation]:
        """依次检查所有约束，返回全部违反项"""
        violations = []
        for constraint in self.constraints:
            violations.extend(constraint.check(context))
        return violations


def raise_for(violations: List[ConstraintViolation]) -> None:
    """若有错误级违反项，按第一项的类型抛出并附带全部列表"""
    errors = [v for v in violations if v.severity == "error"]
    if not errors:
        return
    first = errors[0]
    message = "; ".join(f"[{v.location}] {v.description}" for v in errors)
    raise first.error_cls(message, errors)
