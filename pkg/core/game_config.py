"""
博弈配置文件
读取 JSON 博弈描述，错误信息定位到出错字段所在的行
"""

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

from .exceptions import GameConfigError, ValidationError
from .market_model import (
    AgentSpec, CoefficientProcess, Constant, MarketBounds, MarketSpec, NodeFunction,
    PathFunction, PiecewiseDeterministic, ValidatedGame, validate_market,
)
from .settings import DEFAULT_CONFIG, DEFAULT_SOLVER, SolverSettings
from .tree import build_driver

logger = logging.getLogger(__name__)

Path = Tuple[Any, ...]

_LOCATION_TOKEN = re.compile(r"([^.\[\]]+)|\[(\d+)\]")


class _Locator:
    """记录每个 JSON 值起始位置的行号"""

    def __init__(self, text: str):
        self.text = text
        self.decoder = json.JSONDecoder()
        self.positions: Dict[Path, int] = {}
        self._walk(self._skip(0), ())

    def _skip(self, i: int) -> int:
        while i < len(self.text) and self.text[i] in " \t\r\n":
            i += 1
        return i

    def _walk(self, i: int, path: Path) -> int:
        self.positions[path] = i
        ch = self.text[i]
        if ch == "{":
            i = self._skip(i + 1)
            if self.text[i] == "}":
                return i + 1
            while True:
                key, i = self.decoder.raw_decode(self.text, i)
                i = self._skip(i) + 1          # ':'
                i = self._skip(self._walk(self._skip(i), path + (key,)))
                if self.text[i] == "}":
                    return i + 1
                i = self._skip(i + 1)          # ','
        if ch == "[":
            i = self._skip(i + 1)
            if self.text[i] == "]":
                return i + 1
            index = 0
            while True:
                i = self._skip(self._walk(i, path + (index,)))
                index += 1
                if self.text[i] == "]":
                    return i + 1
                i = self._skip(i + 1)
        _, end = self.decoder.raw_decode(self.text, i)
        return end

    def line(self, path: Path) -> Optional[int]:
        """path 所在行；不存在时退到最近的祖先"""
        path = tuple(path)
        while path not in self.positions and path:
            path = path[:-1]
        pos = self.positions.get(path)
        return None if pos is None else self.text.count("\n", 0, pos) + 1


def parse_location(location: str) -> Path:
    """'agents[1].gamma' -> ('agents', 1, 'gamma')；节点后缀 @(k,j) 忽略"""
    key = (location or "").split("@")[0]
    return tuple(int(idx) if idx else name for name, idx in _LOCATION_TOKEN.findall(key))


def _path_text(path: Path) -> str:
    out = ""
    for part in path:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out or "<根>"


@dataclass(frozen=True)
class GameFile:
    """解析后的博弈文件 (未在树上取值)"""
    source: str
    market: MarketSpec
    agents: Tuple[AgentSpec, ...]
    steps: Optional[int]
    mode: Optional[str]
    raw: Dict = field(default_factory=dict, repr=False, compare=False)
    locator: Optional[_Locator] = field(default=None, repr=False, compare=False)

    def line_of(self, location: str) -> Optional[int]:
        return None if self.locator is None else self.locator.line(parse_location(location))

    def build(self, steps: Optional[int] = None, mode: Optional[str] = None,
              settings: Optional[SolverSettings] = None) -> ValidatedGame:
        """
        构建驱动并校验；校验错误附带第一个违反项所在的行号 (e.line)
        """
        settings = settings or DEFAULT_SOLVER
        steps = steps or self.steps or DEFAULT_CONFIG["cli"]["steps"]
        mode = mode or self.mode or DEFAULT_CONFIG["cli"]["mode"]
        driver = build_driver(self.market.horizon, steps, mode,
                              settings.max_full_binary_steps)
        try:
            return validate_market(self.market, self.agents, driver)
        except ValidationError as e:
            if e.violations and getattr(e, "line", None) is None:
                e.line = self.line_of(e.violations[0].location)
            raise


class _Parser:
    def __init__(self, raw: Dict, locator: _Locator):
        self.raw = raw
        self.locator = locator

    def error(self, message: str, path: Path) -> GameConfigError:
        return GameConfigError(f"{_path_text(path)}: {message}", self.locator.line(path))

    def require(self, block: Dict, key: str, path: Path) -> Any:
        if not isinstance(block, dict):
            raise self.error("应为对象", path)
        if key not in block:
            raise self.error(f"缺少字段 '{key}'", path)
        return block[key]

    def number(self, value: Any, path: Path) -> float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.error(f"应为数值，实际为 {json.dumps(value, ensure_ascii=False)}", path)
        return float(value)

    def table(self, value: Any, path: Path):
        if not isinstance(value, list) or not value or not all(isinstance(row, list) and row for row in value):
            raise self.error("table 应为非空的二维数组", path)
        return [[self.number(v, path + (k, j)) for j, v in enumerate(row)] for k, row in enumerate(value)]

    def coefficient(self, value: Any, path: Path) -> CoefficientProcess:
        """数值、分段常数、节点表或路径表"""
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return Constant(float(value))
        if not isinstance(value, dict):
            raise self.error("系数应为数值或带 kind 的对象", path)
        kind = self.require(value, "kind", path)
        label = _path_text(path)
        if kind == "constant":
            return Constant(self.number(self.require(value, "value", path), path + ("value",)))
        if kind == "piecewise":
            bps = self.require(value, "breakpoints", path)
            vals = self.require(value, "values", path)
            if not isinstance(bps, list) or not isinstance(vals, list):
                raise self.error("breakpoints 与 values 应为数组", path)
            try:
                return PiecewiseDeterministic(
                    tuple(self.number(b, path + ("breakpoints", j)) for j, b in enumerate(bps)),
                    tuple(self.number(v, path + ("values", j)) for j, v in enumerate(vals)),
                )
            except ValueError as e:
                raise self.error(str(e), path)
        if kind == "node":
            return NodeFunction.from_table(self.table(self.require(value, "table", path), path + ("table",)), label)
        if kind == "path":
            return PathFunction.from_table(self.table(self.require(value, "table", path), path + ("table",)), label)
        raise self.error(f"未知的系数类型 '{kind}'，可选 constant / piecewise / node / path", path + ("kind",))

    def agents(self) -> Tuple[AgentSpec, ...]:
        blocks = self.require(self.raw, "agents", ())
        if not isinstance(blocks, list) or len(blocks) < 2:
            raise self.error("agents 应为至少包含两个参与者的数组", ("agents",))
        agents = []
        for i, block in enumerate(blocks):
            path = ("agents", i)
            agents.append(AgentSpec(
                theta=self.number(self.require(block, "theta", path), path + ("theta",)),
                gamma=self.number(self.require(block, "gamma", path), path + ("gamma",)),
                x0=self.number(block.get("x0", 0.0), path + ("x0",)) if isinstance(block, dict) else 0.0,
            ))
        return tuple(agents)

    def market(self, n: int) -> MarketSpec:
        block = self.require(self.raw, "market", ())
        path = ("market",)
        horizon = self.number(self.require(block, "horizon", path), path + ("horizon",))
        r = self.coefficient(self.require(block, "r", path), path + ("r",))
        per_asset = {}
        for key in ("mu", "sigma"):
            values = self.require(block, key, path)
            if not isinstance(values, list) or len(values) != n:
                raise self.error(f"{key} 应为长度 {n} 的数组 (每个参与者一项)", path + (key,))
            per_asset[key] = tuple(self.coefficient(v, path + (key, i)) for i, v in enumerate(values))
        bounds_block = block.get("bounds", {})
        if not isinstance(bounds_block, dict):
            raise self.error("bounds 应为对象", path + ("bounds",))
        bounds = MarketBounds(
            r_max=self.number(bounds_block.get("r_max", MarketBounds.r_max), path + ("bounds", "r_max")),
            sigma_c=self.number(bounds_block.get("sigma_c", MarketBounds.sigma_c), path + ("bounds", "sigma_c")),
        )
        return MarketSpec(n, horizon, r, per_asset["mu"], per_asset["sigma"], bounds)

    def driver(self) -> Tuple[Optional[int], Optional[str]]:
        """缺省的步数与模式取 None，由调用方用运行参数补上"""
        block = self.raw.get("driver", {})
        path = ("driver",)
        if not isinstance(block, dict):
            raise self.error("driver 应为对象", path)
        steps = block.get("steps")
        if steps is not None and (isinstance(steps, bool) or not isinstance(steps, int)):
            raise self.error("steps 应为整数", path + ("steps",))
        mode = block.get("mode")
        if mode is not None and not isinstance(mode, str):
            raise self.error("mode 应为字符串", path + ("mode",))
        return steps, mode


def parse_game(text: str, source: str = "<string>") -> GameFile:
    """
    解析博弈描述

    Raises:
        GameConfigError: JSON 语法错误或字段缺失、类型错误，附行号
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise GameConfigError(f"JSON 语法错误: {e.msg}", e.lineno)
    if not isinstance(raw, dict):
        raise GameConfigError("顶层应为对象", 1)
    parser = _Parser(raw, _Locator(text))
    agents = parser.agents()
    market = parser.market(len(agents))
    steps, mode = parser.driver()
    logger.debug("已解析博弈 %s: n=%d", source, len(agents))
    return GameFile(source, market, agents, steps, mode, raw, parser.locator)


def load_game_file(path: str) -> GameFile:
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    return parse_game(text, path)


def load_game(path: str, steps: Optional[int] = None, mode: Optional[str] = None,
              settings: Optional[SolverSettings] = None) -> ValidatedGame:
    return load_game_file(path).build(steps, mode, settings)
