"""
命令行入口
classify / solve-agent / frontier / verify / simulate 子命令
"""

import argparse
import logging
import os
import sys
from dataclasses import replace
from typing import Dict, List, Optional, TextIO, Tuple

import numpy as np

from .closed_form import frontier_minimizer, frontier_table
from .exceptions import ConfigurationError, MVGameError, NashViolation, SolverError, ValidationError
from .game_config import load_game_file
from .market_model import ValidatedGame
from .nash_engine import Classification, NashEngine
from .report import (
    COLUMNAR, STRUCTURED, dumps_columnar, dumps_structured, emit, equilibrium_to_dict,
    provenance, read_profile, strategy_table,
)
from .settings import Settings, SolverSettings, load_settings
from .simulator import SimConfig, simulate_profile, verify_nash
from .single_agent import (
    StrategyProfile, best_response, lift_if_path_dependent, market_factors, reassemble_h, solve_htilde,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_SOLVER = 2
EXIT_NASH = 3
EXIT_IO = 4

Table = Optional[Tuple[np.ndarray, List[str]]]


class _ArgumentParser(argparse.ArgumentParser):
    """参数错误按校验错误处理 (退出码 1)"""

    def error(self, message):
        raise ConfigurationError(f"命令行参数错误: {message}")


def _common_options() -> argparse.ArgumentParser:
    common = _ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", required=True, help="博弈文件路径或 config.json 中的预设名")
    common.add_argument("--settings", help="运行参数文件 (默认项目根目录 config.json)")
    common.add_argument("--steps", type=int, help="树的步数 N")
    common.add_argument("--mode", choices=["recombining", "fullbinary"], help="树驱动模式")
    common.add_argument("--tol", type=float, help="奇异与零判定的相对阈值")
    common.add_argument("--out", help="输出文件")
    common.add_argument("--format", choices=[STRUCTURED, COLUMNAR], help="输出格式")
    common.add_argument("--workers", type=int, help="线程数")
    common.add_argument("-v", "--verbose", action="count", default=0, help="日志级别 (-v INFO, -vv DEBUG)")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = _ArgumentParser(prog="mvnash", description="多人均值-方差博弈的纳什均衡求解与验证")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("classify", parents=[common], help="分类纳什均衡并构造策略")

    solve = sub.add_parser("solve-agent", parents=[common], help="给定对手策略求单个参与者的最优反应")
    solve.add_argument("--agent", type=int, required=True, help="参与者编号 (从 1 开始)")
    solve.add_argument("--opponents", help="对手策略文件 (默认对手不投资)")

    frontier = sub.add_parser("frontier", parents=[common], help="均值-方差前沿表")
    frontier.add_argument("--agent", type=int, required=True, help="参与者编号 (从 1 开始)")
    frontier.add_argument("--d-grid", required=True, help="均值网格 a:b:k")
    frontier.add_argument("--opponents", help="对手策略文件 (默认对手不投资)")

    for name, helptext in (("verify", "单边偏离检验"), ("simulate", "模拟财富与目标值")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--profile", required=(name == "verify"), help="策略文件或 classify 报告")
        p.add_argument("--profile-index", type=int, default=0, help="报告中的第几个策略组合")
        p.add_argument("--paths", type=int, help="欧拉格式的路径数")
        p.add_argument("--seed", type=int, help="随机种子 (优先于环境变量)")
        p.add_argument("--scheme", choices=["tree_exact", "euler_mc"], help="模拟格式")
    return parser


# ---------------------------------------------------------------- 准备

def _resolve_game_path(value: str, settings: Settings) -> str:
    if os.path.exists(value):
        return value
    preset = settings.preset_path(value)
    if preset is not None:
        return preset
    raise FileNotFoundError(f"找不到博弈文件或预设 '{value}'")


def _solver_settings(args, settings: Settings) -> SolverSettings:
    solver = settings.solver
    if args.tol is not None:
        solver = replace(solver, singular_rel_threshold=args.tol, zero_rel_threshold=args.tol)
    if args.workers is not None:
        solver = replace(solver, workers=args.workers)
    return solver


def resolve_seed(cli_seed: Optional[int], settings: Settings) -> int:
    """命令行 > 环境变量 > 配置文件"""
    if cli_seed is not None:
        return cli_seed
    env_name = settings.cli.get("seed_env", "MVNASH_SEED")
    env_value = os.environ.get(env_name)
    if env_value:
        try:
            return int(env_value)
        except ValueError:
            raise ConfigurationError(f"环境变量 {env_name}={env_value!r} 不是整数")
    return settings.simulation.seed


def _parse_grid(text: str) -> np.ndarray:
    try:
        a, b, k = text.split(":")
        grid = np.linspace(float(a), float(b), int(k))
    except ValueError:
        raise ConfigurationError(f"--d-grid 应为 a:b:k，实际为 {text!r}")
    if grid.size < 1:
        raise ConfigurationError("--d-grid 的点数必须 ≥ 1")
    return grid


def _agent_index(agent: int, game: ValidatedGame) -> int:
    if not 1 <= agent <= game.n:
        raise ConfigurationError(f"--agent 应在 1..{game.n} 之间，实际为 {agent}")
    return agent - 1


def _opponents(path: Optional[str], game: ValidatedGame) -> StrategyProfile:
    return read_profile(path, game) if path else StrategyProfile.zeros(game)


def _sim_config(args, settings: Settings, solver: SolverSettings) -> SimConfig:
    return SimConfig.from_settings(
        settings.simulation, solver,
        paths=args.paths, seed=resolve_seed(args.seed, settings), scheme=args.scheme, workers=args.workers,
    )


# ---------------------------------------------------------------- 子命令

def cmd_classify(args, game: ValidatedGame, settings: Settings, solver: SolverSettings):
    report = NashEngine(game, solver).classify()
    data = equilibrium_to_dict(report, game, solver)
    lines = [f"分类: {report.classification.value} (Ψ={report.psi:.6f})"]
    if report.classification is Classification.NONE:
        lines.append("证据: " + ", ".join(f"{k}={v}" for k, v in sorted(report.witness.items())))
    if report.representative:
        lines.append(f"代表元: {report.representative}")
    rows = []
    for p_index, profile in enumerate(report.profiles):
        for row in strategy_table(game, profile):
            rows.append([p_index, row["agent"], row["pi0"], row["exposure0"]])
            if p_index == 0:
                lines.append(f"  参与者 {row['agent']}: π(0)={row['pi0']:.8f}  σπ(0)={row['exposure0']:.8f}")
    table = (np.array(rows), ["profile", "agent", "pi0", "exposure0"]) if rows else None
    return data, table, "\n".join(lines)


def cmd_solve_agent(args, game: ValidatedGame, settings: Settings, solver: SolverSettings):
    i = _agent_index(args.agent, game)
    sol = best_response(game, i, _opponents(args.opponents, game), settings=solver)
    reassemble_h(game, sol, solver)
    driver = game.driver
    rows = [[k, k * driver.dt, float(sol.control.expectation(k)), float(sol.state.expectation(k))]
            for k in range(driver.steps + 1)]
    data = {"agent": sol.summary(), "game": game.summary(), "provenance": provenance(game, solver)}
    data["agent"]["agent"] = i + 1
    text = (f"参与者 {i + 1}: λ*={sol.lambda_star:.8f}  d*={sol.d_star:.8f}  "
            f"方差={sol.variance:.8f}  最优值={sol.value:.8f}")
    return data, (np.array(rows), ["step", "t", "mean_pi", "mean_Z"]), text


def cmd_frontier(args, game: ValidatedGame, settings: Settings, solver: SolverSettings):
    i = _agent_index(args.agent, game)
    grid = _parse_grid(args.d_grid)
    factors = market_factors(game, i, strict=True, settings=solver)
    htilde0 = float(solve_htilde(game, i, _opponents(args.opponents, game)).h0)
    z = float(game.z[i])
    table = frontier_table(factors.p0, factors.hcheck0, htilde0, z, grid)
    data = {
        "agent": i + 1,
        "minimizer": frontier_minimizer(factors.hcheck0, htilde0, z),
        "frontier": [{"d": float(d), "variance": float(v)} for d, v in table],
        "provenance": provenance(game, solver),
    }
    text = f"参与者 {i + 1} 的前沿: {len(grid)} 个点，最小方差均值 {data['minimizer']:.8f}"
    return data, (table, ["d", "variance"]), text


def _objective_rows(objectives, gaps=None) -> np.ndarray:
    rows = []
    for o in objectives:
        row = [o.agent + 1, o.mean, o.variance, o.J_hat, o.J_se]
        if gaps is not None:
            row.append(gaps[o.agent])
        rows.append(row)
    return np.array(rows)


def cmd_verify(args, game: ValidatedGame, settings: Settings, solver: SolverSettings):
    profile = read_profile(args.profile, game, args.profile_index)
    config = _sim_config(args, settings, solver)
    sim = settings.simulation
    report = verify_nash(
        game, profile, config, deviations=sim.deviations, epsilons=sim.epsilons,
        slack_tol=sim.slack_tol, best_response_tol=sim.best_response_tol, solver=solver,
        raise_on_violation=True,
    )
    data = dict(report.to_dict(), provenance=provenance(game, solver, config.seed))
    low, high = report.exponent_range()
    text = (f"纳什验证 ({report.label}): {len(report.checks)} 项全部通过；"
            f"二次律指数 [{low:.3f}, {high:.3f}]；最优反应偏差 "
            + ", ".join(f"{g:.2e}" for g in report.best_response_gaps))
    table = (_objective_rows(report.objectives, report.best_response_gaps),
             ["agent", "mean", "variance", "J_hat", "J_se", "best_response_gap"])
    return data, table, text


def cmd_simulate(args, game: ValidatedGame, settings: Settings, solver: SolverSettings):
    if args.profile:
        profile = read_profile(args.profile, game, args.profile_index)
    else:
        profile = NashEngine(game, solver).classify().profile or StrategyProfile.zeros(game)
    config = _sim_config(args, settings, solver)
    result = simulate_profile(game, profile, config)
    data = dict(result.to_dict(), provenance=provenance(game, solver, config.seed))
    text = "\n".join(f"参与者 {o.agent + 1}: 均值={o.mean:.8f} 方差={o.variance:.8f} Ĵ={o.J_hat:.8f} (s.e. {o.J_se:.2e})"
                     for o in result.estimates)
    return data, (result.per_path_table(), result.columns()), text


COMMANDS = {
    "classify": cmd_classify,
    "solve-agent": cmd_solve_agent,
    "frontier": cmd_frontier,
    "verify": cmd_verify,
    "simulate": cmd_simulate,
}


# ---------------------------------------------------------------- 入口

def _write(args, settings: Settings, data: Dict, table: Table, summary: str,
           stdout: TextIO, stderr: TextIO) -> None:
    fmt = args.format or settings.cli.get("format", STRUCTURED)
    if fmt == COLUMNAR and table is not None:
        text = dumps_columnar(*table)
    else:
        if fmt == COLUMNAR:
            logger.warning("该子命令没有列式输出，改用结构化格式")
        text = dumps_structured(data)
    if args.out:
        emit(text, out=args.out)
        stdout.write(summary + "\n")
    else:
        emit(text, stream=stdout)
        stderr.write(summary + "\n")


def run(argv: Optional[List[str]] = None, stdout: Optional[TextIO] = None,
        stderr: Optional[TextIO] = None) -> int:
    """
    执行命令行

    Returns:
        退出码: 0 成功，1 校验错误，2 求解错误，3 纳什验证失败，4 读写错误
    """
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )
        settings = load_settings(args.settings)
        solver = _solver_settings(args, settings)
        game_file = load_game_file(_resolve_game_path(args.config, settings))
        steps = args.steps or game_file.steps or settings.cli.get("steps")
        mode = args.mode or game_file.mode or settings.cli.get("mode")
        game = game_file.build(steps, mode, solver)
        game = lift_if_path_dependent(game, solver)
        data, table, summary = COMMANDS[args.command](args, game, settings, solver)
        _write(args, settings, data, table, summary, stdout, stderr)
        return EXIT_OK
    except NashViolation as e:
        stderr.write(f"纳什验证失败: {e}\n")
        if e.report is not None and args.out:
            emit(dumps_structured(e.report.to_dict()), out=args.out)
        return EXIT_NASH
    except ValidationError as e:
        line = getattr(e, "line", None)
        where = f" (第 {line} 行)" if line is not None and f"第 {line} 行" not in str(e) else ""
        stderr.write(f"校验错误{where}: {e}\n")
        return EXIT_VALIDATION
    except SolverError as e:
        stderr.write(f"求解错误: {e}\n")
        return EXIT_SOLVER
    except OSError as e:
        stderr.write(f"读写错误: {e}\n")
        return EXIT_IO
    except MVGameError as e:
        stderr.write(f"错误: {e}\n")
        return EXIT_SOLVER
    except SystemExit as e:
        return int(e.code or 0)


def main() -> None:
    sys.exit(run())
