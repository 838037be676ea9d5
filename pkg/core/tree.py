"""
二叉树驱动
离散布朗运动 (每步 ±√dt，概率各 1/2) 及其上的适应过程 TreeProcess
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import binom

from .exceptions import ConfigurationError, PathDependenceError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


class DriverMode(Enum):
    """树驱动模式"""
    RECOMBINING = "recombining"   # 节点 = 上行次数
    FULL_BINARY = "fullbinary"    # 节点 = 完整路径


@dataclass(frozen=True)
class TreeDriver:
    """
    树驱动

    节点编号:
        重组树第 k 层节点 j 表示 j 次上行，子节点为 j (下) 与 j+1 (上)
        完全二叉树第 k 层节点 j 的二进制位即路径 (最高位为第 0 步)，子节点为 2j (下) 与 2j+1 (上)
    """
    horizon: float
    steps: int
    mode: DriverMode = DriverMode.RECOMBINING

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigurationError(f"步数必须 ≥ 1，当前为 {self.steps}")
        if not self.horizon > 0:
            raise ConfigurationError(f"期限必须为正，当前为 {self.horizon}")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def sqrt_dt(self) -> float:
        return float(np.sqrt(self.dt))

    @property
    def is_full_binary(self) -> bool:
        return self.mode is DriverMode.FULL_BINARY

    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def n_nodes(self, k: int) -> int:
        return 2 ** k if self.is_full_binary else k + 1

    @property
    def terminal_count(self) -> int:
        return self.n_nodes(self.steps)

    def down_index(self, k: int) -> np.ndarray:
        nodes = np.arange(self.n_nodes(k))
        return 2 * nodes if self.is_full_binary else nodes

    def up_index(self, k: int) -> np.ndarray:
        nodes = np.arange(self.n_nodes(k))
        return 2 * nodes + 1 if self.is_full_binary else nodes + 1

    def up_counts(self, k: int) -> np.ndarray:
        """第 k 层各节点的上行次数"""
        if not self.is_full_binary:
            return np.arange(k + 1)
        nodes = np.arange(2 ** k)
        counts = np.zeros(2 ** k, dtype=int)
        for bit in range(k):
            counts += (nodes >> bit) & 1
        return counts

    def path_signs(self, k: int) -> np.ndarray:
        """完全二叉树第 k 层各节点的路径前缀，形状 (2^k, k)，元素 ±1"""
        if not self.is_full_binary:
            raise ConfigurationError("路径前缀只在完全二叉树上有定义")
        nodes = np.arange(2 ** k)
        shifts = np.arange(k - 1, -1, -1)
        bits = (nodes[:, None] >> shifts[None, :]) & 1
        return 2 * bits - 1

    def node_weights(self, k: int) -> np.ndarray:
        """第 k 层各节点的概率"""
        if self.is_full_binary:
            return np.full(2 ** k, 0.5 ** k)
        return binom.pmf(np.arange(k + 1), k, 0.5)

    def increments(self) -> np.ndarray:
        """一步增量 (下, 上)"""
        return np.array([-self.sqrt_dt, self.sqrt_dt])

    def brownian_level(self, k: int) -> np.ndarray:
        return (2 * self.up_counts(k) - k) * self.sqrt_dt

    # ------------------------------------------------------------ 条件期望

    def cond_mean(self, nxt: np.ndarray, k: int) -> np.ndarray:
        """E_k[v(k+1)]"""
        return 0.5 * (nxt[self.up_index(k)] + nxt[self.down_index(k)])

    def martingale_integrand(self, nxt: np.ndarray, k: int) -> np.ndarray:
        """η(k) = (v_up - v_down) / (2√dt)"""
        return (nxt[self.up_index(k)] - nxt[self.down_index(k)]) / (2.0 * self.sqrt_dt)

    def expectation(self, values: np.ndarray, k: int) -> np.ndarray:
        return np.tensordot(self.node_weights(k), values, axes=(0, 0))

    # ------------------------------------------------------------ 前向递推

    def forward(self, initial: ArrayLike,
                step: Callable[[int, np.ndarray, int], np.ndarray],
                tol: float = 1e-9) -> "TreeProcess":
        """
        前向递推 v(k+1) = step(k, v(k), ±1)

        Args:
            initial: 第 0 步的取值
            step: 给定层号、本层取值与增量符号，返回子节点取值 (与本层同形)
            tol: 重组节点两条来路的相对容差

        Returns:
            TreeProcess
        """
        levels = [np.asarray(initial, dtype=float)[None, ...]]
        for k in range(self.steps):
            cur = levels[-1]
            up_vals = np.asarray(step(k, cur, +1), dtype=float)
            down_vals = np.asarray(step(k, cur, -1), dtype=float)
            nxt = np.empty((self.n_nodes(k + 1),) + up_vals.shape[1:])
            if self.is_full_binary:
                nxt[0::2] = down_vals
                nxt[1::2] = up_vals
            else:
                nxt[:k + 1] = down_vals
                nxt[k + 1] = up_vals[k]
                if k > 0:
                    # 中间节点有两个父节点
                    left = up_vals[:k]
                    right = down_vals[1:]
                    mismatch = float(np.max(np.abs(left - right)))
                    scale = 1.0 + float(np.max(np.abs(nxt)))
                    if mismatch > tol * scale:
                        raise PathDependenceError(k + 1, mismatch)
                    nxt[1:k + 1] = 0.5 * (left + right)
            levels.append(nxt)
        return TreeProcess(self, tuple(levels))

    def expand(self) -> "TreeDriver":
        """同期限同步数的完全二叉树"""
        return TreeDriver(self.horizon, self.steps, DriverMode.FULL_BINARY)


def build_driver(horizon: float, steps: int, mode: Union[str, DriverMode] = DriverMode.RECOMBINING,
                 max_full_binary_steps: int = 24) -> TreeDriver:
    """
    构建树驱动

    Args:
        horizon: 期限 T
        steps: 步数 N
        mode: recombining 或 fullbinary
        max_full_binary_steps: 完全二叉树步数上限

    Returns:
        TreeDriver
    """
    if isinstance(mode, str):
        try:
            mode = DriverMode(mode.lower())
        except ValueError:
            raise ConfigurationError(f"未知的驱动模式 '{mode}'，可选 recombining / fullbinary")
    if mode is DriverMode.FULL_BINARY and steps > max_full_binary_steps:
        raise ConfigurationError(
            f"完全二叉树步数 {steps} 超过上限 {max_full_binary_steps} (2^N 条路径)"
        )
    driver = TreeDriver(float(horizon), int(steps), mode)
    logger.debug("树驱动: T=%s N=%d 模式=%s", horizon, steps, mode.value)
    return driver


def _align(x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """补齐尾部维度以便按节点广播"""
    if x.ndim < y.ndim:
        x = x.reshape(x.shape + (1,) * (y.ndim - x.ndim))
    elif y.ndim < x.ndim:
        y = y.reshape(y.shape + (1,) * (x.ndim - y.ndim))
    return x, y


@dataclass(frozen=True, eq=False)
class TreeProcess:
    """
    适应过程

    levels[k] 的形状为 (节点数, *value_shape)；标量、向量 (n,) 与矩阵 (n, n) 共用
    """
    driver: TreeDriver
    levels: Tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.levels) != self.driver.steps + 1:
            raise ValueError(f"层数 {len(self.levels)} 与步数 {self.driver.steps} 不符")
        frozen = []
        shape = None
        for k, arr in enumerate(self.levels):
            arr = np.array(arr, dtype=float)
            if arr.shape[0] != self.driver.n_nodes(k):
                raise ValueError(f"第 {k} 层节点数 {arr.shape[0]} 应为 {self.driver.n_nodes(k)}")
            if shape is None:
                shape = arr.shape[1:]
            elif arr.shape[1:] != shape:
                raise ValueError(f"第 {k} 层取值维度 {arr.shape[1:]} 与 {shape} 不一致")
            arr.flags.writeable = False
            frozen.append(arr)
        object.__setattr__(self, "levels", tuple(frozen))

    # ------------------------------------------------------------ 构造

    @classmethod
    def constant(cls, driver: TreeDriver, value: ArrayLike) -> "TreeProcess":
        value = np.asarray(value, dtype=float)
        return cls(driver, tuple(
            np.broadcast_to(value, (driver.n_nodes(k),) + value.shape) for k in range(driver.steps + 1)
        ))

    @classmethod
    def zeros(cls, driver: TreeDriver, shape: Tuple[int, ...] = ()) -> "TreeProcess":
        return cls.constant(driver, np.zeros(shape))

    @classmethod
    def from_function(cls, driver: TreeDriver, fn: Callable[[int], np.ndarray]) -> "TreeProcess":
        return cls(driver, tuple(fn(k) for k in range(driver.steps + 1)))

    @staticmethod
    def stack(processes: Sequence["TreeProcess"]) -> "TreeProcess":
        """把若干标量过程按分量拼成向量过程"""
        driver = processes[0].driver
        return TreeProcess(driver, tuple(
            np.stack([p.levels[k] for p in processes], axis=1) for k in range(driver.steps + 1)
        ))

    # ------------------------------------------------------------ 访问

    @property
    def value_shape(self) -> Tuple[int, ...]:
        return self.levels[0].shape[1:]

    @property
    def initial(self) -> np.ndarray:
        value = self.levels[0][0]
        return float(value) if value.ndim == 0 else value.copy()

    @property
    def terminal(self) -> np.ndarray:
        return self.levels[-1]

    def at(self, k: int) -> np.ndarray:
        return self.levels[k]

    def component(self, i: int) -> "TreeProcess":
        return TreeProcess(self.driver, tuple(level[:, i] for level in self.levels))

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "TreeProcess":
        return TreeProcess(self.driver, tuple(fn(level) for level in self.levels))

    def expectation(self, k: int) -> np.ndarray:
        return self.driver.expectation(self.levels[k], k)

    def sup_norm(self, last: Optional[int] = None) -> float:
        """第 0..last 层的最大绝对值 (默认全部层)"""
        stop = self.driver.steps if last is None else last
        return max(float(np.max(np.abs(self.levels[k]))) for k in range(stop + 1))

    def spread(self) -> float:
        """同一层内跨节点的最大极差"""
        return max(float(np.max(np.ptp(level, axis=0))) if level.size else 0.0 for level in self.levels)

    def is_deterministic(self, tol: float = 0.0) -> bool:
        return self.spread() <= tol

    def with_level(self, k: int, values: np.ndarray) -> "TreeProcess":
        levels = list(self.levels)
        levels[k] = values
        return TreeProcess(self.driver, tuple(levels))

    def expand(self, full: Optional[TreeDriver] = None) -> "TreeProcess":
        """重组树过程提升到完全二叉树"""
        if self.driver.is_full_binary:
            return self
        full = full or self.driver.expand()
        return TreeProcess(full, tuple(
            self.levels[k][full.up_counts(k)] for k in range(self.driver.steps + 1)
        ))

    # ------------------------------------------------------------ 运算

    def _binary(self, other, op) -> "TreeProcess":
        if isinstance(other, TreeProcess):
            if other.driver != self.driver:
                raise ValueError("两个过程不在同一驱动上")
            return TreeProcess(self.driver, tuple(
                op(*_align(a, b)) for a, b in zip(self.levels, other.levels)
            ))
        value = np.asarray(other, dtype=float)
        return TreeProcess(self.driver, tuple(op(level, value) for level in self.levels))

    def __add__(self, other):
        return self._binary(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __rsub__(self, other):
        return self._binary(other, lambda a, b: np.subtract(b, a))

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(other, np.divide)

    def __neg__(self):
        return self.map(np.negative)

    def matvec(self, vector: "TreeProcess") -> "TreeProcess":
        """矩阵过程乘向量过程"""
        return TreeProcess(self.driver, tuple(
            np.einsum("mij,mj->mi", a, v) for a, v in zip(self.levels, vector.levels)
        ))

    def diagonal_of(self) -> "TreeProcess":
        return self.map(lambda level: np.diagonal(level, axis1=1, axis2=2))

    def __repr__(self) -> str:
        return (f"TreeProcess(N={self.driver.steps}, mode={self.driver.mode.value}, "
                f"shape={self.value_shape})")
