# src/timegrid.py

from dataclasses import dataclass, field
from enum import Enum
import logging
import numpy as np
from .exceptions import ValidationError

logger = logging.getLogger(__name__)


class QuadratureRule(str, Enum):
    """Quadrature rule used for every integral on a grid.

    LEFT_ENDPOINT makes the discrete Volterra operator strictly lower
    triangular (exactly nilpotent). TRAPEZOID is second-order accurate and
    is the default for solvers.
    """
    LEFT_ENDPOINT = "left_endpoint"
    TRAPEZOID = "trapezoid"

    @classmethod
    def parse(cls, value) -> "QuadratureRule":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"left": "left_endpoint", "leftendpoint": "left_endpoint", "trap": "trapezoid"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValidationError(f"Unknown quadrature rule: {value}", field="rule", value=value)


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Ordered sample times t_0 < ... < t_N on [t0, T] with a quadrature rule.

    Immutable: the points array is made read-only on construction.
    """
    points: np.ndarray
    rule: QuadratureRule = QuadratureRule.TRAPEZOID
    spacings: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        if points.ndim != 1 or points.size < 2:
            raise ValidationError("A grid needs at least two points", field="points", value=points.size)
        if not np.all(np.isfinite(points)):
            raise ValidationError("Grid points must be finite", field="points")
        spacings = np.diff(points)
        if np.any(spacings <= 0):
            raise ValidationError("Grid points must be strictly increasing", field="points")
        points.setflags(write=False)
        spacings.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "spacings", spacings)
        object.__setattr__(self, "rule", QuadratureRule.parse(self.rule))

    @classmethod
    def uniform(cls, t0: float, T: float, n: int, rule=QuadratureRule.TRAPEZOID) -> "TimeGrid":
        """Grid with n equal subdivisions of [t0, T]."""
        if not (np.isfinite(t0) and np.isfinite(T)) or T <= t0:
            raise ValidationError(f"Grid span must be positive, got [{t0}, {T}]", field="T", value=T)
        if int(n) != n or n < 1:
            raise ValidationError(f"Grid needs at least one subdivision, got {n}", field="n", value=n)
        points = np.linspace(t0, T, int(n) + 1)
        return cls(points, QuadratureRule.parse(rule))

    @property
    def t0(self) -> float:
        return float(self.points[0])

    @property
    def T(self) -> float:
        return float(self.points[-1])

    @property
    def n(self) -> int:
        """Number of subdivisions N."""
        return self.points.size - 1

    @property
    def span(self) -> float:
        return self.T - self.t0

    @property
    def max_step(self) -> float:
        return float(self.spacings.max())

    @property
    def is_uniform(self) -> bool:
        return bool(np.allclose(self.spacings, self.spacings[0], rtol=1e-12, atol=0.0))

    def __len__(self) -> int:
        return self.points.size

    def same_as(self, other: "TimeGrid") -> bool:
        return (
            self is other
            or (self.rule == other.rule
                and self.points.shape == other.points.shape
                and bool(np.array_equal(self.points, other.points)))
        )

    def index_of(self, t: float) -> int:
        """Index of the grid point equal to t (within round-off)."""
        i = int(np.argmin(np.abs(self.points - t)))
        if abs(self.points[i] - t) > 1e-12 * max(1.0, abs(self.span), abs(t)):
            raise ValidationError(f"Time {t} is not a grid point", field="t", value=t)
        return i

    def node_weights(self) -> np.ndarray:
        """Weights of every node for the rule over the whole interval [t0, T]."""
        h = self.spacings
        w = np.zeros(self.points.size)
        if self.rule == QuadratureRule.LEFT_ENDPOINT:
            w[:-1] = h
        else:
            w[:-1] += h / 2.0
            w[1:] += h / 2.0
        return w

    def interval_weights(self, i: int) -> np.ndarray:
        """Weights of every node for the rule over [t0, t_i]."""
        h = self.spacings
        w = np.zeros(self.points.size)
        if i == 0:
            return w
        if self.rule == QuadratureRule.LEFT_ENDPOINT:
            w[:i] = h[:i]
        else:
            w[:i] += h[:i] / 2.0
            w[1:i + 1] += h[:i] / 2.0
        return w

    def refine(self) -> "TimeGrid":
        """Same interval and rule with every subdivision halved."""
        mids = (self.points[:-1] + self.points[1:]) / 2.0
        points = np.empty(2 * self.points.size - 1)
        points[0::2] = self.points
        points[1::2] = mids
        return TimeGrid(points, self.rule)


def make_uniform(t0: float, T: float, n: int, rule=QuadratureRule.TRAPEZOID) -> TimeGrid:
    return TimeGrid.uniform(t0, T, n, rule)


def cumulative_integral(grid: TimeGrid, samples) -> np.ndarray:
    """Running integral of sampled values from t0 to every grid point.

    ``samples`` has the grid along axis 0 and any trailing shape (scalars,
    vectors, matrices). output[0] is zero; output[i] is the rule's
    quadrature over [t0, t_i].
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 0 or samples.shape[0] != len(grid):
        raise ValidationError(
            f"Expected {len(grid)} samples, got {samples.shape[0] if samples.ndim else 0}",
            field="samples",
        )
    h = grid.spacings.reshape((-1,) + (1,) * (samples.ndim - 1))
    if grid.rule == QuadratureRule.LEFT_ENDPOINT:
        increments = samples[:-1] * h
    else:
        increments = 0.5 * (samples[:-1] + samples[1:]) * h
    out = np.zeros_like(samples)
    np.cumsum(increments, axis=0, out=out[1:])
    return out


def integral_from(grid: TimeGrid, samples, base_index: int) -> np.ndarray:
    """Signed running integral from grid point ``base_index`` to every grid point."""
    running = cumulative_integral(grid, samples)
    out = running - running[base_index]
    out[base_index] = 0.0
    return out
