"""
报告输出
结构化 (JSON 键值) 与列式 (逗号分隔、带表头) 两种格式；策略组合可写出并重新读入
"""

import io
import json
import logging
import math
from typing import Any, Dict, List, Optional, Sequence, TextIO

import numpy as np

from .exceptions import GameConfigError
from .market_model import ValidatedGame
from .nash_engine import EquilibriumReport
from .settings import SolverSettings
from .single_agent import StrategyProfile
from .tree import TreeProcess

logger = logging.getLogger(__name__)

STRUCTURED = "structured"
COLUMNAR = "columnar"


def to_jsonable(obj: Any) -> Any:
    """numpy 标量与数组转为内置类型；非有限浮点写成字符串"""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if math.isfinite(value) else str(value)
    return obj


def provenance(game: ValidatedGame, settings: SolverSettings, seed: Optional[int] = None,
               extra: Optional[Dict] = None) -> Dict:
    """步数、容差、阈值与种子；不含线程数，使报告与并行度无关"""
    data = {
        "horizon": game.driver.horizon,
        "steps": game.driver.steps,
        "mode": game.driver.mode.value,
        "tolerances": settings.to_dict(),
    }
    if seed is not None:
        data["seed"] = int(seed)
    if extra:
        data.update(extra)
    return data


# ---------------------------------------------------------------- 策略组合

def profile_to_dict(profile: StrategyProfile) -> Dict:
    driver = profile.amounts.driver
    return {
        "label": profile.label,
        "horizon": driver.horizon,
        "steps": driver.steps,
        "mode": driver.mode.value,
        "amounts": [level.tolist() for level in profile.amounts.levels],
    }


def profile_from_dict(game: ValidatedGame, data: Dict) -> StrategyProfile:
    """
    Raises:
        GameConfigError: 步数、模式或维度与博弈不符
    """
    driver = game.driver
    if data.get("steps") != driver.steps or data.get("mode") != driver.mode.value:
        raise GameConfigError(
            f"策略文件的树 (N={data.get('steps')}, {data.get('mode')}) 与博弈 "
            f"(N={driver.steps}, {driver.mode.value}) 不一致"
        )
    try:
        levels = tuple(np.asarray(level, dtype=float).reshape(driver.n_nodes(k), game.n)
                       for k, level in enumerate(data["amounts"]))
        amounts = TreeProcess(driver, levels)
    except (KeyError, ValueError, TypeError) as e:
        raise GameConfigError(f"策略文件的 amounts 字段无效: {e}")
    return StrategyProfile(amounts, str(data.get("label", "")))


def read_profile(path: str, game: ValidatedGame, index: int = 0) -> StrategyProfile:
    """读取单个策略组合，或 classify 报告中的第 index 个组合"""
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise GameConfigError(f"策略文件 JSON 语法错误: {e.msg}", e.lineno)
    if "profiles" in data:
        profiles = data["profiles"]
        if not profiles:
            raise GameConfigError("报告中没有策略组合")
        data = profiles[index]
    return profile_from_dict(game, data)


def strategy_table(game: ValidatedGame, profile: StrategyProfile) -> List[Dict]:
    """t=0 时各参与者的 π_i 与 σ_i π_i"""
    amounts = np.atleast_1d(profile.amounts.initial)
    exposures = np.atleast_1d(profile.exposures(game).initial)
    return [{"agent": i + 1, "pi0": float(amounts[i]), "exposure0": float(exposures[i])}
            for i in range(game.n)]


def equilibrium_to_dict(report: EquilibriumReport, game: ValidatedGame, settings: SolverSettings) -> Dict:
    return {
        "classification": report.classification.value,
        "psi": report.psi,
        "representative": report.representative,
        "family": report.family,
        "witness": report.witness,
        "diagnostics": report.diagnostics,
        "thresholds": report.thresholds,
        "strategies": [strategy_table(game, p) for p in report.profiles],
        "profiles": [profile_to_dict(p) for p in report.profiles],
        "game": game.summary(),
        "provenance": provenance(game, settings),
    }


# ---------------------------------------------------------------- 写出

def dumps_structured(data: Dict) -> str:
    return json.dumps(to_jsonable(data), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def dumps_columnar(table: np.ndarray, header: Sequence[str]) -> str:
    buffer = io.StringIO()
    np.savetxt(buffer, np.atleast_2d(np.asarray(table, dtype=float)), fmt="%.12g", delimiter=",",
               header=",".join(header), comments="")
    return buffer.getvalue()


def emit(text: str, out: Optional[str] = None, stream: Optional[TextIO] = None) -> None:
    """写入文件，或输出到 stream"""
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        logger.info("已写出 %s", out)
    elif stream is not None:
        stream.write(text)
