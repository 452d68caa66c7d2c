# src/engines/picard_engine.py

"""Picard iteration for xdot = f(t, x) with certified stopping.

Iterates are sampled functions on a grid and distances are sup-norms over
the samples. The first iterate is the constant function x0.
"""

from dataclasses import dataclass, field
from enum import Enum
from math import exp, floor, inf
from typing import List, Optional, Sequence, Tuple
import logging
import numpy as np
from src.exceptions import ValidationError, BlowupError, FieldEvaluationError
from src.kernel_ops import envelope, envelope_tail
from src.oracle import OracleConfig, rk4_solve
from src.records import ImpulseSpec, Trajectory
from src.systems import NonlinearSystem
from src.timegrid import TimeGrid, cumulative_integral
from .base import BaseEngine

logger = logging.getLogger(__name__)

SOLVER_NAME = "picard"
DEFAULT_RTOL = 1e-10
DEFAULT_MAX_ITERS = 500
DEFAULT_BLOWUP = 1e12
PROBE_EPSILON = 1e-9
PROBE_WIDTHS = (1e-2, 1e-4, 1e-6)
PROBE_FLAG_LEVEL = 1e3


class PicardStatus(str, Enum):
    CONVERGED = "Converged"
    MAX_ITERATIONS = "MaxIterations"
    BLOWUP = "Blowup"


@dataclass
class PicardReport:
    """Iteration record.

    ``successive_distances[k]`` is ||x_{k+1} - x_k|| over the grid samples.
    ``bound_sequence[k]`` is (l T)^k / k! ||x_1 - x_0||, filled only when
    the system carries a Lipschitz constant.
    """
    iterates_used: int
    successive_distances: List[float]
    status: PicardStatus
    bound_sequence: List[float] = field(default_factory=list)
    last_finite_time: Optional[float] = None
    iterates: Optional[List[np.ndarray]] = None

    @property
    def converged(self) -> bool:
        return self.status == PicardStatus.CONVERGED

    @property
    def final_distance(self) -> float:
        return self.successive_distances[-1] if self.successive_distances else 0.0


def _sup(samples: np.ndarray) -> float:
    return float(np.abs(samples).max()) if samples.size else 0.0


def _initial_state(sys: NonlinearSystem, x0) -> np.ndarray:
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (sys.n,):
        raise ValidationError(f"Initial state has shape {x0.shape}, expected ({sys.n},)", field="initial", value=x0.tolist())
    if not np.all(np.isfinite(x0)):
        raise ValidationError("Initial state must be finite", field="initial", value=x0.tolist())
    return x0


def _first_bad_index(samples: np.ndarray, threshold: float) -> int:
    bad = ~np.all(np.isfinite(samples) & (np.abs(samples) <= threshold), axis=1)
    return int(np.argmax(bad))


def picard_solve(sys: NonlinearSystem, x0, grid: TimeGrid, rtol: float = DEFAULT_RTOL,
                 max_iters: int = DEFAULT_MAX_ITERS, blowup_threshold: float = DEFAULT_BLOWUP,
                 keep_iterates: bool = False) -> Tuple[Trajectory, PicardReport]:
    """x_{k+1}(t_i) = x0 + running integral of f(t, x_k(t)) up to t_i.

    Stops when ||x_{k+1} - x_k|| <= rtol (1 + ||x_{k+1}||). An iterate with
    a sample above ``blowup_threshold`` (or non-finite) ends the iteration
    with status Blowup and is not accepted.

    Raises:
        ValidationError: If x0 has the wrong shape or is not finite
        FieldEvaluationError: If the field fails at a bounded state
    """
    x0 = _initial_state(sys, x0)
    if max_iters < 1:
        raise ValidationError("Picard needs at least one iteration", field="max_iters", value=max_iters)
    x = np.broadcast_to(x0, (len(grid), sys.n)).copy()
    iterates = [x.copy()] if keep_iterates else None
    distances: List[float] = []
    status = PicardStatus.MAX_ITERATIONS
    last_finite_time = None

    for k in range(1, max_iters + 1):
        try:
            values = sys.evaluate_trace(grid.points, x)
            with np.errstate(all="ignore"):
                x_next = x0 + cumulative_integral(grid, values)
        except FieldEvaluationError:
            if _sup(x) <= blowup_threshold ** 0.5:
                raise
            x_next = np.full_like(x, np.inf)
        if not np.all(np.isfinite(x_next)) or _sup(x_next) > blowup_threshold:
            status = PicardStatus.BLOWUP
            last_finite_time = float(grid.points[max(_first_bad_index(x_next, blowup_threshold) - 1, 0)])
            logger.warning(f"Picard iterate {k} exceeded {blowup_threshold:g} after t={last_finite_time}")
            break

        distance = _sup(x_next - x)
        distances.append(distance)
        x = x_next
        if keep_iterates:
            iterates.append(x.copy())
        logger.debug(f"Picard iterate {k}: distance {distance:.3e}")
        if distance <= rtol * (1.0 + _sup(x)):
            status = PicardStatus.CONVERGED
            break

    bounds = []
    if sys.lipschitz is not None and distances:
        rate = sys.lipschitz * grid.span
        bounds = [distances[0] * envelope(rate, k) for k in range(len(distances))]
    report = PicardReport(len(distances), distances, status, bounds, last_finite_time, iterates)
    logger.info(f"Picard iteration finished: {status.value} after {report.iterates_used} iterates")
    trajectory = Trajectory(grid, x, SOLVER_NAME, terms_used=report.iterates_used, notes={"status": status.value})
    return trajectory, report


def estimate_lipschitz(sys: NonlinearSystem, box, samples: int = 200, seed: int = 0, t: float = 0.0) -> float:
    """Largest ||f(x) - f(y)|| / ||x - y|| (sup-norms) over random pairs in the box.

    The box center is always one of the points. The result is a lower
    bound on the Lipschitz constant over the box, never a certificate.
    """
    box = np.atleast_2d(np.asarray(box, dtype=float))
    if box.shape != (sys.n, 2):
        raise ValidationError(f"Box must have shape ({sys.n}, 2), got {box.shape}", field="box", value=box.shape)
    lower, upper = box[:, 0], box[:, 1]
    if np.any(upper <= lower):
        raise ValidationError("Box must be nondegenerate in every coordinate", field="box", value=box.tolist())
    if samples < 2:
        raise ValidationError("At least two samples are needed", field="samples", value=samples)

    rng = np.random.default_rng(seed)
    points = np.vstack([rng.uniform(lower, upper, size=(samples, sys.n)), (lower + upper) / 2.0])
    values = sys.evaluate_trace(np.full(points.shape[0], float(t)), points)
    dx = np.max(np.abs(points[:, None, :] - points[None, :, :]), axis=-1)
    df = np.max(np.abs(values[:, None, :] - values[None, :, :]), axis=-1)
    mask = dx > 0
    return float(np.max(df[mask] / dx[mask])) if np.any(mask) else 0.0


@dataclass(frozen=True)
class ConvergenceCertificate:
    """Bounds that a Lipschitz constant l over a horizon T gives Picard iteration."""
    lipschitz: float
    horizon: float

    @property
    def contraction_factor(self) -> float:
        return self.lipschitz * self.horizon

    @property
    def contraction_holds(self) -> bool:
        return self.contraction_factor < 1.0

    @property
    def global_envelope(self) -> float:
        return exp(self.contraction_factor)

    @property
    def local_horizon(self) -> float:
        """Longest horizon on which the contraction argument alone applies."""
        return inf if self.lipschitz == 0 else 1.0 / self.lipschitz

    @property
    def peak_index(self) -> int:
        return floor(self.contraction_factor)

    def per_k_bound(self, k: int) -> float:
        return envelope(self.contraction_factor, k)

    def a_priori_error(self, k: int, first_distance: float) -> float:
        """Bound on ||x* - x_k|| from the tail of the summable envelope."""
        return first_distance * envelope_tail(self.contraction_factor, k - 1)


def convergence_certificates(lipschitz: float, horizon: float) -> ConvergenceCertificate:
    if not lipschitz >= 0:
        raise ValidationError("Lipschitz constant must be non-negative", field="lipschitz", value=lipschitz)
    if not horizon > 0:
        raise ValidationError("Horizon must be positive", field="horizon", value=horizon)
    return ConvergenceCertificate(float(lipschitz), float(horizon))


@dataclass
class NonuniquenessReport:
    epsilon: float
    picard_divergence: float
    oracle_divergence: Optional[float]
    lipschitz_estimates: List[Tuple[float, float]]
    flagged: bool
    note: str
    statuses: Tuple[PicardStatus, PicardStatus]


def nonuniqueness_probe(sys: NonlinearSystem, x0, grid: TimeGrid, epsilon: float = PROBE_EPSILON,
                        widths: Sequence[float] = PROBE_WIDTHS, rtol: float = DEFAULT_RTOL,
                        max_iters: int = DEFAULT_MAX_ITERS, seed: int = 0,
                        cfg: OracleConfig = OracleConfig()) -> NonuniquenessReport:
    """Compare solves from x0 and x0 + epsilon and watch local Lipschitz ratios.

    The flag is raised when the sampled Lipschitz estimate keeps growing as
    the box around x0 shrinks and ends above 1e3. It marks a risk; it does
    not prove non-uniqueness.
    """
    if sys.n != 1:
        raise ValidationError("The non-uniqueness probe handles scalar systems only", field="n", value=sys.n)
    x0 = _initial_state(sys, x0)
    shifted = x0 + epsilon

    base, base_report = picard_solve(sys, x0, grid, rtol, max_iters)
    other, other_report = picard_solve(sys, shifted, grid, rtol, max_iters)
    picard_divergence = _sup(other.states - base.states) / epsilon

    try:
        oracle_divergence = _sup(rk4_solve(sys, shifted, grid, cfg).states - rk4_solve(sys, x0, grid, cfg).states) / epsilon
    except BlowupError as e:
        logger.warning(f"Oracle blew up during the probe: {e}")
        oracle_divergence = None

    estimates = [(w, estimate_lipschitz(sys, [[x0[0] - w, x0[0] + w]], seed=seed, t=grid.t0)) for w in widths]
    values = [e for _, e in estimates]
    flagged = values[-1] > PROBE_FLAG_LEVEL and all(b > a for a, b in zip(values, values[1:]))
    if flagged:
        note = (
            f"Sampled Lipschitz ratios grow from {values[0]:.3g} to {values[-1]:.3g} as the box around x0 shrinks; "
            "solutions from x0 may not be unique (xdot = sqrt|x| from 0 has both x(t) = 0 and x(t) = t^2/4)."
        )
    else:
        note = f"Sampled Lipschitz ratios stay bounded near x0 (largest {max(values):.3g}); no uniqueness risk detected."
    logger.info(f"Non-uniqueness probe: flagged={flagged}, Picard divergence ratio {picard_divergence:.3e}")
    return NonuniquenessReport(epsilon, picard_divergence, oracle_divergence, estimates, flagged, note,
                               (base_report.status, other_report.status))


def fixed_point_residual(sys: NonlinearSystem, x0, trajectory: Trajectory) -> float:
    """||x - (x0 + running integral of f(t, x))|| over the grid samples."""
    x0 = _initial_state(sys, x0)
    values = sys.evaluate_trace(trajectory.times, trajectory.states)
    return _sup(trajectory.states - (x0 + cumulative_integral(trajectory.grid, values)))


def flow_semigroup_residual(sys: NonlinearSystem, x0, grid: TimeGrid, split_index: int,
                            cfg: OracleConfig = OracleConfig(), shift_time: bool = False) -> float:
    """Solve through the whole grid, restart at t_s from the state reached there, compare.

    With ``shift_time`` the restart runs on the tail of the grid moved back
    to t0, which checks the flow property of autonomous fields.
    """
    if not 0 < split_index < len(grid) - 1:
        raise ValidationError("Split must be an interior grid index", field="split_index", value=split_index)
    full = rk4_solve(sys, x0, grid, cfg)
    tail = grid.points[split_index:]
    if shift_time:
        tail = tail - tail[0] + grid.t0
    restarted = rk4_solve(sys, full.states[split_index], TimeGrid(tail, grid.rule), cfg)
    return _sup(restarted.states - full.states[split_index:])


def _with_input(sys: NonlinearSystem, input_signal) -> NonlinearSystem:
    def forced(t, x):
        x = np.asarray(x, dtype=float)
        ts = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])
        return sys.field(t, x) + np.asarray(input_signal(ts), dtype=float).reshape(x.shape)
    return NonlinearSystem(forced, sys.n, sys.lipschitz, label=f"{sys.label}+input")


class PicardEngine(BaseEngine):
    name = SOLVER_NAME

    def __init__(self, system: NonlinearSystem, rtol: float = DEFAULT_RTOL, max_iters: int = DEFAULT_MAX_ITERS,
                 blowup_threshold: float = DEFAULT_BLOWUP, keep_iterates: bool = False):
        self.system = system
        self.rtol = rtol
        self.max_iters = max_iters
        self.blowup_threshold = blowup_threshold
        self.keep_iterates = keep_iterates
        self.last_report: Optional[PicardReport] = None

    def solve(self, x0, grid: TimeGrid, input_signal=None, impulses: Optional[ImpulseSpec] = None) -> Trajectory:
        """Run picard_solve; the report is kept on ``last_report``."""
        if impulses:
            raise ValidationError("Impulses are only supported for linear systems", field="impulses")
        system = self.system if input_signal is None else _with_input(self.system, input_signal)
        trajectory, self.last_report = picard_solve(
            system, x0, grid, self.rtol, self.max_iters, self.blowup_threshold, self.keep_iterates
        )
        return trajectory
