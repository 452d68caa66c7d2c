# src/engines/base.py

from abc import ABC, abstractmethod
from typing import Optional
import logging
import numpy as np
from src.exceptions import ValidationError
from src.records import ImpulseSpec, TransitionTable, Trajectory
from src.timegrid import TimeGrid

logger = logging.getLogger(__name__)


class BaseEngine(ABC):
    """Base class for solver engines.

    This class defines the interface the CLI dispatches through. Each route
    (matrix exponential, Peano-Baker, commuting family, basis solves,
    Picard, oracle) inherits from this base class.
    """

    name: str = "engine"

    @abstractmethod
    def solve(self, x0, grid: TimeGrid, input_signal=None, impulses: Optional[ImpulseSpec] = None) -> Trajectory:
        """Solve from x0 at grid.t0 over the whole grid.

        Args:
            x0: Initial state at grid.t0
            grid (TimeGrid): Sample times and quadrature rule
            input_signal (callable, optional): Smooth input w(t)
            impulses (ImpulseSpec, optional): Impulsive input

        Returns:
            Trajectory: Sampled solution

        Raises:
            SolverError: If the route fails to converge or the state blows up
        """
        raise NotImplementedError("Each engine must implement solve method")

    def transition_table(self, base: float, grid: TimeGrid) -> Optional[TransitionTable]:
        """State transition table for linear routes; None for nonlinear ones."""
        return None

    def _validate_state(self, x0, n: int) -> np.ndarray:
        """Validate and convert an initial state.

        Args:
            x0: State vector (scalar accepted when n == 1)
            n (int): Expected dimension

        Returns:
            np.ndarray: Finite state of shape (n,)
        """
        x = np.atleast_1d(np.asarray(x0, dtype=float))
        if x.shape != (n,):
            raise ValidationError(f"Initial state has shape {x.shape}, expected ({n},)", field="initial", value=x.tolist())
        if not np.all(np.isfinite(x)):
            raise ValidationError("Initial state must be finite", field="initial", value=x.tolist())
        return x

    def _sample_input(self, input_signal, grid: TimeGrid, n: int) -> Optional[np.ndarray]:
        if input_signal is None:
            return None
        w = np.asarray(input_signal(grid.points) if callable(input_signal) else input_signal, dtype=float)
        if w.shape != (len(grid), n):
            raise ValidationError(f"Input samples have shape {w.shape}, expected ({len(grid)}, {n})", field="input")
        return w
