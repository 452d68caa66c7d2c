# src/records.py

"""Result records shared by the engines, the oracle and the CLI."""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple
import numpy as np
from .exceptions import ValidationError
from .timegrid import TimeGrid


@dataclass
class Trajectory:
    """Sampled state path x(t_i) with provenance."""
    grid: TimeGrid
    states: np.ndarray
    solver: str
    terms_used: Optional[int] = None
    error_estimates: Optional[np.ndarray] = None
    notes: Dict[str, Any] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.grid.points

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def at(self, t: float) -> np.ndarray:
        return self.states[self.grid.index_of(t)]


@dataclass
class TransitionTable:
    """Phi(t_i, base) for every grid time, plus truncation diagnostics."""
    grid: TimeGrid
    base: float
    matrices: np.ndarray
    route: str
    terms_used: int = 1
    term_norms: List[float] = field(default_factory=list)
    tail_bound: float = 0.0

    @property
    def n(self) -> int:
        return self.matrices.shape[1]

    @property
    def base_index(self) -> int:
        return self.grid.index_of(self.base)

    def at(self, t: float) -> np.ndarray:
        return self.matrices[self.grid.index_of(t)]


@dataclass(frozen=True)
class ImpulseSpec:
    """Impulses w_k delta(t - tau_k) at strictly increasing times."""
    impulses: Tuple[Tuple[float, Tuple[float, ...]], ...] = ()

    @classmethod
    def of(cls, pairs: Sequence[Tuple[float, Sequence[float]]]) -> "ImpulseSpec":
        items = tuple((float(tau), tuple(float(v) for v in vec)) for tau, vec in pairs)
        times = [tau for tau, _ in items]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError("Impulse times must be strictly increasing", field="impulses", value=times)
        return cls(items)

    def __iter__(self):
        return iter(self.impulses)

    def __len__(self) -> int:
        return len(self.impulses)

    def validate_on(self, grid: TimeGrid, n: int) -> List[Tuple[int, np.ndarray]]:
        """Grid indices and direction vectors; every time must be a grid point."""
        located = []
        for tau, vec in self.impulses:
            if not grid.t0 <= tau <= grid.T:
                raise ValidationError(f"Impulse time {tau} lies outside [{grid.t0}, {grid.T}]", field="impulses", value=tau)
            if len(vec) != n:
                raise ValidationError(f"Impulse vector at t={tau} has {len(vec)} components, expected {n}", field="impulses")
            located.append((grid.index_of(tau), np.asarray(vec, dtype=float)))
        return located
