# src/engines/oracle_engine.py

from typing import Optional
import logging
from src.exceptions import ValidationError
from src.oracle import OracleConfig, SOLVER_NAME, rk4_solve
from src.records import ImpulseSpec, Trajectory
from src.systems import LtvSystem, NonlinearSystem
from src.timegrid import TimeGrid
from .base import BaseEngine

logger = logging.getLogger(__name__)


class OracleEngine(BaseEngine):
    """Fixed-step RK4 behind the engine interface, used for cross-checks."""

    name = SOLVER_NAME

    def __init__(self, system, cfg: OracleConfig = OracleConfig()):
        if isinstance(system, LtvSystem):
            self.n = system.n
            self._linear = system
        elif isinstance(system, NonlinearSystem):
            self.n = system.n
            self._linear = None
        else:
            raise ValidationError(f"Oracle cannot integrate {type(system).__name__}", field="system")
        self.system = system
        self.cfg = cfg

    def solve(self, x0, grid: TimeGrid, input_signal=None, impulses: Optional[ImpulseSpec] = None) -> Trajectory:
        x0 = self._validate_state(x0, self.n)
        if impulses:
            raise ValidationError("The oracle does not integrate impulses", field="impulses")
        if self._linear is not None:
            field = self._linear.as_field(input_signal)
        elif input_signal is not None:
            field = lambda t, x: self.system.evaluate(t, x) + input_signal(t)
        else:
            field = self.system
        return rk4_solve(field, x0, grid, self.cfg)
