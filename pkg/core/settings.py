"""
运行参数
从项目根目录的 config.json 读取求解器、模拟与命令行默认值
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

logger = logging.getLogger(__name__)

# 项目根目录
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

# 配置文件缺失时使用的默认值
DEFAULT_CONFIG = {
    "solver": {
        "picard_tol": 1e-10,
        "picard_max_iter": 200,
        "picard_patience": 20,
        "singular_rel_threshold": 1e-8,
        "zero_rel_threshold": 1e-8,
        "gamma_cond_max": 1e12,
        "max_full_binary_steps": 24,
        "fixed_point_tol": 1e-8,
        "consistency_tol": 1e-10,
        "node_consistency_tol": 1e-9,
        "feasibility_threshold": 1e-12,
        "simpson_cells_per_step": 4,
        "marginal_tol": 1e-12,
        "kernel_coefficients": [1.0, -1.0],
        "workers": 4,
    },
    "simulation": {
        "paths": 20000,
        "seed": 20240601,
        "scheme": "tree_exact",
        "antithetic": True,
        "block_size": 4096,
        "workers": 4,
        "epsilons": [0.01, 0.1, -0.01, -0.1],
        "deviations": 16,
        "slack_tol": 1e-9,
        "best_response_tol": 1e-6,
    },
    "cli": {
        "seed_env": "MVNASH_SEED",
        "format": "structured",
        "steps": 10,
        "mode": "recombining",
    },
    "presets": {
        "baseline": {"name": "基准双人博弈", "file": "games/baseline.json"},
        "marginal": {"name": "边际情形 θ=(1,1)", "file": "games/marginal_equal_sharpe.json"},
        "distinct": {"name": "不同夏普比", "file": "games/distinct_sharpe.json"},
    },
}


@dataclass(frozen=True)
class SolverSettings:
    """求解器容差与阈值"""
    picard_tol: float = 1e-10
    picard_max_iter: int = 200
    picard_patience: int = 20           # 收缩比连续大于 1 的次数上限
    singular_rel_threshold: float = 1e-8
    zero_rel_threshold: float = 1e-8    # Φ = 0 / Ξ = 0 判定带宽
    gamma_cond_max: float = 1e12
    max_full_binary_steps: int = 24
    fixed_point_tol: float = 1e-8
    consistency_tol: float = 1e-10
    node_consistency_tol: float = 1e-9
    feasibility_threshold: float = 1e-12
    simpson_cells_per_step: int = 4
    marginal_tol: float = 1e-12
    kernel_coefficients: Tuple[float, ...] = (1.0, -1.0)
    workers: int = 4

    def to_dict(self) -> Dict:
        return {
            "picard_tol": self.picard_tol,
            "picard_max_iter": self.picard_max_iter,
            "singular_rel_threshold": self.singular_rel_threshold,
            "zero_rel_threshold": self.zero_rel_threshold,
            "gamma_cond_max": self.gamma_cond_max,
            "fixed_point_tol": self.fixed_point_tol,
            "consistency_tol": self.consistency_tol,
            "node_consistency_tol": self.node_consistency_tol,
            "feasibility_threshold": self.feasibility_threshold,
            "marginal_tol": self.marginal_tol,
        }


@dataclass(frozen=True)
class SimulationSettings:
    """模拟与验证默认值"""
    paths: int = 20000
    seed: int = 20240601
    scheme: str = "tree_exact"
    antithetic: bool = True
    block_size: int = 4096
    workers: int = 4
    epsilons: Tuple[float, ...] = (0.01, 0.1, -0.01, -0.1)
    deviations: int = 16
    slack_tol: float = 1e-9
    best_response_tol: float = 1e-6


@dataclass(frozen=True)
class Settings:
    solver: SolverSettings = field(default_factory=SolverSettings)
    simulation: SimulationSettings = field(default_factory=SimulationSettings)
    cli: Dict = field(default_factory=lambda: dict(DEFAULT_CONFIG["cli"]))
    presets: Dict = field(default_factory=dict)

    def preset_path(self, name: str) -> Optional[str]:
        """预设名对应的博弈文件 (相对项目根目录)"""
        preset = self.presets.get(name)
        return None if preset is None else os.path.join(BASE_DIR, preset["file"])


DEFAULT_SOLVER = SolverSettings()


def _solver_from(section: Dict) -> SolverSettings:
    base = DEFAULT_CONFIG["solver"]
    return SolverSettings(
        picard_tol=float(section.get("picard_tol", base["picard_tol"])),
        picard_max_iter=int(section.get("picard_max_iter", base["picard_max_iter"])),
        picard_patience=int(section.get("picard_patience", base["picard_patience"])),
        singular_rel_threshold=float(section.get("singular_rel_threshold", base["singular_rel_threshold"])),
        zero_rel_threshold=float(section.get("zero_rel_threshold", base["zero_rel_threshold"])),
        gamma_cond_max=float(section.get("gamma_cond_max", base["gamma_cond_max"])),
        max_full_binary_steps=int(section.get("max_full_binary_steps", base["max_full_binary_steps"])),
        fixed_point_tol=float(section.get("fixed_point_tol", base["fixed_point_tol"])),
        consistency_tol=float(section.get("consistency_tol", base["consistency_tol"])),
        node_consistency_tol=float(section.get("node_consistency_tol", base["node_consistency_tol"])),
        feasibility_threshold=float(section.get("feasibility_threshold", base["feasibility_threshold"])),
        simpson_cells_per_step=int(section.get("simpson_cells_per_step", base["simpson_cells_per_step"])),
        marginal_tol=float(section.get("marginal_tol", base["marginal_tol"])),
        kernel_coefficients=tuple(float(c) for c in section.get("kernel_coefficients", base["kernel_coefficients"])),
        workers=int(section.get("workers", base["workers"])),
    )


def _simulation_from(section: Dict) -> SimulationSettings:
    base = DEFAULT_CONFIG["simulation"]
    return SimulationSettings(
        paths=int(section.get("paths", base["paths"])),
        seed=int(section.get("seed", base["seed"])),
        scheme=str(section.get("scheme", base["scheme"])),
        antithetic=bool(section.get("antithetic", base["antithetic"])),
        block_size=int(section.get("block_size", base["block_size"])),
        workers=int(section.get("workers", base["workers"])),
        epsilons=tuple(float(e) for e in section.get("epsilons", base["epsilons"])),
        deviations=int(section.get("deviations", base["deviations"])),
        slack_tol=float(section.get("slack_tol", base["slack_tol"])),
        best_response_tol=float(section.get("best_response_tol", base["best_response_tol"])),
    )


def load_settings(config_path: Optional[str] = None) -> Settings:
    """
    读取配置文件

    Args:
        config_path: 配置文件路径，默认为项目根目录下的 config.json

    Returns:
        Settings，文件不存在时返回内置默认值
    """
    path = config_path or os.path.join(BASE_DIR, "config.json")
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
        logger.debug("已加载配置 %s", path)
    else:
        logger.debug("未找到配置 %s，使用默认值", path)
        raw = DEFAULT_CONFIG

    cli = dict(DEFAULT_CONFIG["cli"])
    cli.update(raw.get("cli", {}))
    return Settings(
        solver=_solver_from(raw.get("solver", {})),
        simulation=_simulation_from(raw.get("simulation", {})),
        cli=cli,
        presets=dict(raw.get("presets", {})),
    )
