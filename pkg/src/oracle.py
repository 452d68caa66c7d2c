# src/oracle.py

"""Reference integrator used to validate the series and iteration engines.

Classical fourth-order Runge-Kutta with a fixed number of substeps per grid
interval. Only the grid's sample times are used; no quadrature or series
routine from the engines is called here.
"""

from dataclasses import dataclass
from typing import Callable, Sequence, Tuple, Union
import logging
import numpy as np
from .exceptions import ValidationError, BlowupError, FieldEvaluationError, EvaluationError
from .exprlang import Expr, parse, evaluate
from .timegrid import TimeGrid
from .records import Trajectory

logger = logging.getLogger(__name__)

SOLVER_NAME = "oracle-rk4"


@dataclass(frozen=True)
class OracleConfig:
    """Fixed-step RK4 settings."""
    substeps: int = 16
    richardson: bool = False
    blowup_threshold: float = 1e12

    def __post_init__(self):
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ValidationError("Oracle needs at least one substep per grid interval", field="substeps", value=self.substeps)
        if not self.blowup_threshold > 0:
            raise ValidationError("Blowup threshold must be positive", field="blowup_threshold", value=self.blowup_threshold)


def _point_field(field: Callable) -> Callable:
    """Wrap a field so every fault carries the offending (t, x)."""
    evaluate_point = getattr(field, "evaluate", None)
    if evaluate_point is not None:
        return evaluate_point

    def wrapped(t: float, x: np.ndarray) -> np.ndarray:
        try:
            with np.errstate(all="ignore"):
                value = np.asarray(field(t, x), dtype=float)
        except (EvaluationError, ValidationError, ArithmeticError, ValueError) as e:
            raise FieldEvaluationError(f"Field evaluation failed at t={t}: {e}", t=float(t), x=x.tolist(), solver=SOLVER_NAME)
        if value.shape != x.shape or not np.all(np.isfinite(value)):
            raise FieldEvaluationError(f"Field is not finite at t={t}", t=float(t), x=x.tolist(), solver=SOLVER_NAME)
        return value

    return wrapped


def _rk4_interval(f: Callable, t_start: float, t_end: float, x: np.ndarray, substeps: int) -> np.ndarray:
    h = (t_end - t_start) / substeps
    t = t_start
    for j in range(substeps):
        k1 = f(t, x)
        k2 = f(t + h / 2, x + h / 2 * k1)
        k3 = f(t + h / 2, x + h / 2 * k2)
        k4 = f(t + h, x + h * k3)
        x = x + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        t = t_start + (j + 1) * h
    return x


def _escaping(stage_state, threshold: float) -> bool:
    """True when a faulting RK4 stage was evaluated at a state already past the threshold."""
    if stage_state is None:
        return False
    stage_state = np.asarray(stage_state, dtype=float)
    if stage_state.size == 0:
        return False
    return not np.all(np.isfinite(stage_state)) or float(np.max(np.abs(stage_state))) > threshold


def _sweep(f: Callable, x0: np.ndarray, points: np.ndarray, start: int, substeps: int, threshold: float) -> np.ndarray:
    states = np.empty((points.size, x0.size))
    states[start] = x0

    def step(i_from: int, i_to: int) -> None:
        try:
            with np.errstate(all="ignore"):
                x = _rk4_interval(f, points[i_from], points[i_to], states[i_from], substeps)
        except FieldEvaluationError as e:
            if not _escaping(e.x, threshold):
                raise
            x = np.full(x0.shape, np.inf)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > threshold:
            raise BlowupError(
                f"State exceeded {threshold:g} between t={points[i_from]} and t={points[i_to]}",
                solver=SOLVER_NAME, last_finite_time=float(points[i_from]),
            )
        states[i_to] = x

    for i in range(start, points.size - 1):
        step(i, i + 1)
    for i in range(start, 0, -1):
        step(i, i - 1)
    return states


def rk4_solve(field: Callable, x0, grid: TimeGrid, cfg: OracleConfig = OracleConfig(), start_index: int = 0) -> Trajectory:
    """Classical RK4 over each grid interval with cfg.substeps equal substeps.

    ``field(t, x)`` returns xdot for a single state. Integration runs forward
    and backward from ``start_index``. With ``cfg.richardson`` a second sweep
    at twice the substeps gives a per-grid-point error estimate
    |x_h - x_{h/2}| / 15.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.ndim != 1 or not np.all(np.isfinite(x0)):
        raise ValidationError("Initial state must be a finite vector", field="initial", value=x0.tolist())
    if not 0 <= start_index < len(grid):
        raise ValidationError(f"Start index {start_index} is outside the grid", field="start_index", value=start_index)

    f = _point_field(field)
    states = _sweep(f, x0, grid.points, start_index, cfg.substeps, cfg.blowup_threshold)
    estimates = None
    if cfg.richardson:
        fine = _sweep(f, x0, grid.points, start_index, 2 * cfg.substeps, cfg.blowup_threshold)
        estimates = np.max(np.abs(states - fine), axis=1) / 15.0
    logger.debug(f"Oracle RK4 finished {grid.n} intervals with {cfg.substeps} substeps each")
    return Trajectory(grid, states, SOLVER_NAME, error_estimates=estimates,
                      notes={"substeps": cfg.substeps, "start_time": float(grid.points[start_index])})


def observed_order(errors: Sequence[float], ratio: float = 2.0) -> np.ndarray:
    """Convergence orders log(e_k / e_{k+1}) / log(ratio) of a refinement study."""
    errors = np.asarray(errors, dtype=float)
    return np.log(errors[:-1] / errors[1:]) / np.log(ratio)


Bound = Union[float, str, Expr, Callable[[float], float]]


def _bound_fn(bound: Bound) -> Callable[[float], float]:
    if callable(bound):
        return bound
    if isinstance(bound, (int, float)):
        return lambda t: float(bound)
    expr = parse(bound) if isinstance(bound, str) else bound
    return lambda t: evaluate(expr, {"t": t})


def leibniz_check(f: Callable[[float, np.ndarray], np.ndarray], bounds: Tuple[Bound, Bound],
                  t: float, h: float = 1e-4, nodes: int = 32) -> float:
    """|d/dt of the integral of f(t, tau) over [a(t), b(t)] minus the Leibniz-rule side|.

    The derivative is a central difference; the rule's side is
    f(t, b) b' - f(t, a) a' + integral of df/dt, with central differences
    for b', a' and df/dt. Integrals use Gauss-Legendre nodes.
    """
    lower, upper = (_bound_fn(b) for b in bounds)
    if lower(t) > upper(t):
        raise ValidationError(f"Lower bound exceeds upper bound at t={t}", field="bounds", value=(lower(t), upper(t)))
    x, w = np.polynomial.legendre.leggauss(nodes)

    def integrate(g: Callable[[np.ndarray], np.ndarray], a: float, b: float) -> float:
        tau = 0.5 * (b - a) * x + 0.5 * (a + b)
        values = np.broadcast_to(np.asarray(g(tau), dtype=float), tau.shape)
        return float(0.5 * (b - a) * np.dot(w, values))

    def G(s: float) -> float:
        return integrate(lambda tau: f(s, tau), lower(s), upper(s))

    lhs = (G(t + h) - G(t - h)) / (2 * h)
    a, b = lower(t), upper(t)
    da = (lower(t + h) - lower(t - h)) / (2 * h)
    db = (upper(t + h) - upper(t - h)) / (2 * h)
    dfdt = integrate(lambda tau: (np.asarray(f(t + h, tau)) - np.asarray(f(t - h, tau))) / (2 * h), a, b)
    rhs = float(np.asarray(f(t, b))) * db - float(np.asarray(f(t, a))) * da + dfdt
    return abs(lhs - rhs)
