# src/__init__.py

from .config import Config
from .exceptions import (
    BlowupError,
    CommutativityError,
    ConfigError,
    ConvergenceError,
    EvaluationError,
    ExprParseError,
    FieldEvaluationError,
    SolverError,
    ValidationError
)
from .timegrid import QuadratureRule, TimeGrid
from .systems import InputSignal, LtiSystem, LtvSystem, NonlinearSystem
from .records import ImpulseSpec, TransitionTable, Trajectory
from .engines import (
    LtiEngine,
    LtvEngine,
    PicardEngine,
    OracleEngine
)

__version__ = '1.0.0'

__all__ = [
    'Config',
    'BlowupError',
    'CommutativityError',
    'ConfigError',
    'ConvergenceError',
    'EvaluationError',
    'ExprParseError',
    'FieldEvaluationError',
    'SolverError',
    'ValidationError',
    'QuadratureRule',
    'TimeGrid',
    'InputSignal',
    'LtiSystem',
    'LtvSystem',
    'NonlinearSystem',
    'ImpulseSpec',
    'TransitionTable',
    'Trajectory',
    'LtiEngine',
    'LtvEngine',
    'PicardEngine',
    'OracleEngine'
]
