"""
核心算法模块
"""

from .exceptions import (
    MVGameError, ValidationError, DegenerateSharpe, BoundViolation, DriverMismatch,
    PathDependenceError, GameConfigError, ConfigurationError, SolverError, SingularStep,
    SingularGamma, BoundCheckFailed, DenominatorDegenerate, Infeasible, NotInvertible,
    PicardDiverged, FixedPointViolation, ConsistencyViolation, MarginalCase, NotMarginal,
    NashViolation,
)
from .settings import Settings, SolverSettings, SimulationSettings, load_settings
from .tree import DriverMode, TreeDriver, TreeProcess, build_driver
from .constraints import Constraint, ConstraintSolver, ConstraintViolation
from .market_model import (
    CoefficientProcess, Constant, PiecewiseDeterministic, NodeFunction, PathFunction,
    MarketBounds, MarketSpec, AgentSpec, ValidatedGame, competition_index,
    relative_initial_wealth, validate_market,
)
from .lattice_bsde import (
    BsdeSolution, RiccatiSolution, HCheckSolution, SystemMatrices, SystemVariant,
    solve_linear_bsde, solve_p_bsde, solve_h_check, gamma_flow, kd_matrices,
    complete_system, classify_linear_system, picard_iteration, solve_anticipated_bsde,
)
from .closed_form import (
    p_closed, h_check_closed, feasibility_check, lagrange_and_mean, frontier_variance,
    frontier_table,
)
from .single_agent import StrategyProfile, AgentSolution, best_response, solve_htilde
from .nash_engine import Classification, EquilibriumReport, NashEngine
from .simulator import SimScheme, SimConfig, ObjectiveEstimate, simulate_profile, verify_nash
from .game_config import GameFile, parse_game, load_game, load_game_file
from .cli import run

__all__ = [
    # 异常
    'MVGameError',
    'ValidationError',
    'DegenerateSharpe',
    'BoundViolation',
    'DriverMismatch',
    'PathDependenceError',
    'GameConfigError',
    'ConfigurationError',
    'SolverError',
    'SingularStep',
    'SingularGamma',
    'BoundCheckFailed',
    'DenominatorDegenerate',
    'Infeasible',
    'NotInvertible',
    'PicardDiverged',
    'FixedPointViolation',
    'ConsistencyViolation',
    'MarginalCase',
    'NotMarginal',
    'NashViolation',

    # 配置
    'Settings',
    'SolverSettings',
    'SimulationSettings',
    'load_settings',

    # 树驱动
    'DriverMode',
    'TreeDriver',
    'TreeProcess',
    'build_driver',

    # 约束系统
    'Constraint',
    'ConstraintSolver',
    'ConstraintViolation',

    # 市场模型
    'CoefficientProcess',
    'Constant',
    'PiecewiseDeterministic',
    'NodeFunction',
    'PathFunction',
    'MarketBounds',
    'MarketSpec',
    'AgentSpec',
    'ValidatedGame',
    'competition_index',
    'relative_initial_wealth',
    'validate_market',

    # BSDE 求解
    'BsdeSolution',
    'RiccatiSolution',
    'HCheckSolution',
    'SystemMatrices',
    'SystemVariant',
    'solve_linear_bsde',
    'solve_p_bsde',
    'solve_h_check',
    'gamma_flow',
    'kd_matrices',
    'complete_system',
    'classify_linear_system',
    'picard_iteration',
    'solve_anticipated_bsde',

    # 闭式解
    'p_closed',
    'h_check_closed',
    'feasibility_check',
    'lagrange_and_mean',
    'frontier_variance',
    'frontier_table',

    # 单个参与者
    'StrategyProfile',
    'AgentSolution',
    'best_response',
    'solve_htilde',

    # 纳什均衡
    'Classification',
    'EquilibriumReport',
    'NashEngine',

    # 模拟与验证
    'SimScheme',
    'SimConfig',
    'ObjectiveEstimate',
    'simulate_profile',
    'verify_nash',

    # 配置文件与命令行
    'GameFile',
    'parse_game',
    'load_game',
    'load_game_file',
    'run',
]
