#!/usr/bin/env python3
"""
博弈配置文件与报告写出测试
"""

import json

import numpy as np
import pytest

from conftest import build_game
from core.exceptions import BoundViolation, GameConfigError
from core.game_config import parse_game, parse_location
from core.market_model import NodeFunction, PiecewiseDeterministic
from core.report import dumps_columnar, profile_from_dict, profile_to_dict, to_jsonable
from core.single_agent import StrategyProfile

GAME = """{
  "market": {
    "horizon": 1.0,
    "r": {"kind": "piecewise", "breakpoints": [0.5], "values": [0.02, 0.04]},
    "mu": [{"kind": "node", "table": [[0.08], [0.07, 0.09]]}, 0.08],
    "sigma": [0.25, 0.25]
  },
  "agents": [
    {"theta": 0.5, "gamma": 2.0, "x0": 1.0},
    {"theta": 0.5, "gamma": -3.0, "x0": 1.5}
  ],
  "driver": {"steps": 6, "mode": "recombining"}
}
"""


def test_parse_coefficient_kinds():
    game_file = parse_game(GAME)
    assert isinstance(game_file.market.r, PiecewiseDeterministic)
    assert isinstance(game_file.market.mu[0], NodeFunction)
    assert game_file.steps == 6
    assert len(game_file.agents) == 2


def test_validation_error_carries_line():
    game_file = parse_game(GAME)
    with pytest.raises(BoundViolation) as exc:
        game_file.build()
    assert exc.value.line == 10
    assert game_file.line_of("market.sigma[1]@(3,2)") == 6


def test_parse_location():
    assert parse_location("agents[1].gamma") == ("agents", 1, "gamma")
    assert parse_location("market.mu[0]@(2,1)") == ("market", "mu", 0)


def test_structural_errors():
    with pytest.raises(GameConfigError) as exc:
        parse_game('{\n  "agents": [1, 2,\n}')
    assert exc.value.line is not None

    bad_kind = GAME.replace('"kind": "piecewise"', '"kind": "spline"')
    with pytest.raises(GameConfigError) as exc:
        parse_game(bad_kind)
    assert exc.value.line == 4
    assert "spline" in str(exc.value)

    with pytest.raises(GameConfigError):
        parse_game(json.dumps({"agents": [{"theta": 0.5, "gamma": 1.0}]}))


def test_profile_serialisation_checks_tree():
    game = build_game(steps=4)
    profile = StrategyProfile.zeros(game, "zero")
    data = profile_to_dict(profile)
    restored = profile_from_dict(game, data)
    assert restored.label == "zero"
    assert restored.amounts.at(4).shape == (5, 2)

    with pytest.raises(GameConfigError):
        profile_from_dict(build_game(steps=5), data)


def test_writers():
    assert to_jsonable({"a": np.float64(np.inf), "b": np.arange(2)}) == {"a": "inf", "b": [0, 1]}
    text = dumps_columnar(np.array([[1.0, 0.5]]), ["d", "variance"])
    assert text.splitlines() == ["d,variance", "1,0.5"]
