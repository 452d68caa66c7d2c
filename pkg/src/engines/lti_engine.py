# src/engines/lti_engine.py

from typing import Optional
import logging
import numpy as np
from src.exceptions import ValidationError
from src.records import ImpulseSpec, TransitionTable, Trajectory
from src.systems import LtiSystem
from src.timegrid import TimeGrid
from .base import BaseEngine

logger = logging.getLogger(__name__)

DEFAULT_RTOL = 1e-10


def matrix_exp(A, t: float = 1.0, rtol: float = DEFAULT_RTOL, max_terms: int = 100) -> np.ndarray:
    """e^{At} from the power series, wrapped in scaling and squaring.

    A t is scaled by 2^-s until its 1-norm is at most 1/2, the series
    sum_k (A t / 2^s)^k / k! is summed until the newest term is below the
    tolerance, and the result is squared s times.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError(f"matrix_exp needs a square matrix, got shape {A.shape}", field="A", value=A.shape)
    n = A.shape[0]
    X = A * t
    norm = np.linalg.norm(X, 1)
    s = 0 if norm <= 0.5 else int(np.ceil(np.log2(norm / 0.5)))
    X = X / 2.0 ** s

    identity = np.eye(n)
    total = identity.copy()
    term = identity
    tol = max(rtol * 2.0 ** -s, np.finfo(float).eps)
    for k in range(1, max_terms + 1):
        term = term @ X / k
        total += term
        if np.linalg.norm(term) <= tol * np.linalg.norm(total):
            break
    for _ in range(s):
        total = total @ total
    return total


def _check_dims(sys: LtiSystem, x0, grid: TimeGrid, w=None):
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (sys.n,):
        raise ValidationError(f"Initial state has shape {x0.shape}, expected ({sys.n},)", field="initial")
    if w is not None:
        w = np.asarray(w, dtype=float)
        if w.shape != (len(grid), sys.n):
            raise ValidationError(f"Input samples have shape {w.shape}, expected ({len(grid)}, {sys.n})", field="input")
    return x0, w


def _exponentials(A: np.ndarray, offsets, rtol: float) -> np.ndarray:
    return np.stack([matrix_exp(A, d, rtol) for d in offsets])


def lti_transition_table(sys: LtiSystem, grid: TimeGrid, base: Optional[float] = None, rtol: float = DEFAULT_RTOL) -> TransitionTable:
    """Phi(t_i, base) = e^{A (t_i - base)}."""
    base = grid.t0 if base is None else grid.points[grid.index_of(base)]
    matrices = _exponentials(sys.A, grid.points - base, rtol)
    return TransitionTable(grid, float(base), matrices, route="matrix-exponential")


def lti_homogeneous(sys: LtiSystem, x0, grid: TimeGrid, rtol: float = DEFAULT_RTOL) -> Trajectory:
    """x(t_i) = e^{A (t_i - t0)} x0."""
    x0, _ = _check_dims(sys, x0, grid)
    E = _exponentials(sys.A, grid.points - grid.t0, rtol)
    return Trajectory(grid, E @ x0, "matrix-exponential")


def _convolution(sys: LtiSystem, w: np.ndarray, grid: TimeGrid, E: np.ndarray, rtol: float) -> np.ndarray:
    """Quadrature of e^{A (t_i - tau)} w(tau) over [t0, t_i] for every i."""
    out = np.zeros_like(w)
    uniform = grid.is_uniform
    for i in range(1, len(grid)):
        weights = grid.interval_weights(i)[: i + 1]
        if uniform:
            kernels = E[i - np.arange(i + 1)]
        else:
            kernels = _exponentials(sys.A, grid.points[i] - grid.points[: i + 1], rtol)
        out[i] = np.einsum("j,jab,jb->a", weights, kernels, w[: i + 1])
    return out


def lti_forced(sys: LtiSystem, x0, w, grid: TimeGrid, rtol: float = DEFAULT_RTOL) -> Trajectory:
    """Variation of constants: e^{A t} x0 plus the convolution with the input."""
    x0, w = _check_dims(sys, x0, grid, w)
    E = _exponentials(sys.A, grid.points - grid.t0, rtol)
    states = E @ x0
    if w is not None:
        states = states + _convolution(sys, w, grid, E, rtol)
    return Trajectory(grid, states, "matrix-exponential")


class LtiEngine(BaseEngine):
    name = "matrix-exponential"

    def __init__(self, system: LtiSystem, rtol: float = DEFAULT_RTOL):
        """Constant-coefficient solver through the matrix exponential."""
        self.system = system
        self.rtol = rtol

    def solve(self, x0, grid: TimeGrid, input_signal=None, impulses: Optional[ImpulseSpec] = None) -> Trajectory:
        x0 = self._validate_state(x0, self.system.n)
        w = self._sample_input(input_signal, grid, self.system.n)
        trajectory = lti_forced(self.system, x0, w, grid, self.rtol)
        if impulses:
            for index, w_bar in impulses.validate_on(grid, self.system.n):
                offsets = grid.points[index:] - grid.points[index]
                trajectory.states[index:] += _exponentials(self.system.A, offsets, self.rtol) @ w_bar
        logger.info(f"Matrix-exponential solve finished on {len(grid)} grid points")
        return trajectory

    def transition_table(self, base: float, grid: TimeGrid) -> TransitionTable:
        return lti_transition_table(self.system, grid, base, self.rtol)
