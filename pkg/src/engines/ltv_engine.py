# src/engines/ltv_engine.py

"""Transition matrices and forced responses for xdot = A(t) x + w(t).

Three routes build Phi(t_i, base) on a grid: the Peano-Baker series, the
exponential of the integrated matrix for commuting families, and n oracle
solves from a basis of initial states. Any of them drives the forced
response through the variation-of-constants formula.
"""

from typing import Callable, NamedTuple, Optional, Sequence
import logging
import numpy as np
from src.exceptions import ValidationError, ConvergenceError, CommutativityError
from src.kernel_ops import envelope, envelope_tail
from src.oracle import OracleConfig, rk4_solve
from src.records import ImpulseSpec, TransitionTable, Trajectory
from src.systems import LtvSystem
from src.timegrid import TimeGrid, integral_from
from .base import BaseEngine
from .lti_engine import matrix_exp

logger = logging.getLogger(__name__)

DEFAULT_RTOL = 1e-10
DEFAULT_MAX_TERMS = 60
COMMUTATOR_PAIRS = 10
COMMUTATOR_RTOL = 1e-10
BASIS_CONDITION_LIMIT = 1e12

ROUTE_PEANO_BAKER = "peano-baker"
ROUTE_COMMUTING = "commuting"
ROUTE_BASIS = "basis-solve"

TableBuilder = Callable[[LtvSystem, float, TimeGrid], TransitionTable]


def _spectral_sup(samples: np.ndarray) -> float:
    if samples.size == 0:
        return 0.0
    return float(np.max(np.linalg.norm(samples, 2, axis=(1, 2))))


def _sup(samples: np.ndarray) -> float:
    return float(np.abs(samples).max())


def _identity_table(grid: TimeGrid, n: int) -> np.ndarray:
    return np.broadcast_to(np.eye(n), (len(grid), n, n)).copy()


def peano_baker_terms(sys: LtvSystem, base: float, grid: TimeGrid, k: int) -> np.ndarray:
    """Phi_0 .. Phi_k, shape (k + 1, len(grid), n, n).

    Phi_0 = I and Phi_j is the running integral from ``base`` of
    A(t) Phi_{j-1}(t), so Phi_j(base) = 0.
    """
    if k < 0:
        raise ValidationError("Term count must be non-negative", field="k", value=k)
    b = grid.index_of(base)
    A_s = sys.sample(grid)
    terms = [_identity_table(grid, sys.n)]
    for _ in range(k):
        terms.append(integral_from(grid, A_s @ terms[-1], b))
    return np.stack(terms)


def peano_baker(sys: LtvSystem, base: float, grid: TimeGrid,
                rtol: float = DEFAULT_RTOL, max_terms: int = DEFAULT_MAX_TERMS) -> TransitionTable:
    """Phi(t_i, base) = I + Phi_1 + Phi_2 + ... truncated at rtol.

    Stops when the newest term's sup-norm is at most rtol times the partial
    sum's, or when the term vanishes. ``tail_bound`` is the factorial
    envelope sum_{j > m} (alpha L)^j / j! with alpha = sup ||A(t)|| and L
    the longest distance from base to a grid end.

    Raises:
        ValidationError: If base is not a grid point
        ConvergenceError: If max_terms terms do not reach rtol
    """
    b = grid.index_of(base)
    A_s = sys.sample(grid)
    alpha = _spectral_sup(A_s)
    reach = max(grid.points[b] - grid.t0, grid.T - grid.points[b])

    term = _identity_table(grid, sys.n)
    total = term.copy()
    norms = [1.0]
    converged = False
    for k in range(1, max_terms + 1):
        term = integral_from(grid, A_s @ term, b)
        norm = _sup(term)
        if norm == 0.0:
            converged = True
            break
        total += term
        norms.append(norm)
        logger.debug(f"Peano-Baker term {k}: sup-norm {norm:.3e}")
        if norm <= rtol * _sup(total):
            converged = True
            break

    if not converged:
        raise ConvergenceError(
            f"Peano-Baker series did not reach rtol={rtol} within {max_terms} terms",
            solver=ROUTE_PEANO_BAKER, terms_used=len(norms),
            diagnostics={"term_norms": norms, "bound_sequence": [envelope(alpha * reach, k) for k in range(len(norms))]},
        )
    tail = envelope_tail(alpha * reach, len(norms) - 1)
    logger.info(f"Peano-Baker series converged with {len(norms)} terms (tail bound {tail:.3e})")
    return TransitionTable(grid, float(grid.points[b]), total, ROUTE_PEANO_BAKER,
                           terms_used=len(norms), term_norms=norms, tail_bound=tail)


def commutator_check(sys: LtvSystem, grid: TimeGrid, pairs: int = COMMUTATOR_PAIRS, seed: int = 0):
    """Largest ||A(s)A(u) - A(u)A(s)|| over random time pairs, and its tolerance.

    The tolerance is 1e-10 (sup ||A||)^2 with the sup taken over the grid
    and the sampled times.
    """
    rng = np.random.default_rng(seed)
    times = rng.uniform(grid.t0, grid.T, size=(pairs, 2))
    A_s = sys.sample(times[:, 0])
    A_u = sys.sample(times[:, 1])
    commutators = A_s @ A_u - A_u @ A_s
    worst = _spectral_sup(commutators)
    scale = max(_spectral_sup(sys.sample(grid)), _spectral_sup(A_s), _spectral_sup(A_u))
    return worst, COMMUTATOR_RTOL * scale ** 2


def stm_commuting(sys: LtvSystem, base: float, grid: TimeGrid,
                  rtol: float = DEFAULT_RTOL, seed: int = 0) -> TransitionTable:
    """Phi(t_i, base) = exp(integral of A from base to t_i) for commuting families.

    Raises:
        CommutativityError: If the sampled commutator exceeds its tolerance
    """
    b = grid.index_of(base)
    if sys.commuting_hint is False:
        logger.warning("Commuting route requested for a system hinted as non-commuting")
    worst, tol = commutator_check(sys, grid, seed=seed)
    if worst > tol:
        raise CommutativityError(
            f"A(t) does not commute with itself: sampled commutator {worst:.3e} exceeds {tol:.3e}",
            commutator_norm=worst, tolerance=tol,
        )
    integrals = integral_from(grid, sys.sample(grid), b)
    matrices = np.stack([matrix_exp(S, 1.0, rtol) for S in integrals])
    matrices[b] = np.eye(sys.n)
    return TransitionTable(grid, float(grid.points[b]), matrices, ROUTE_COMMUTING)


def stm_by_basis_solves(sys: LtvSystem, base: float, grid: TimeGrid, basis=None,
                        cfg: OracleConfig = OracleConfig()) -> TransitionTable:
    """Phi = [x_1 ... x_n] V^{-1} from oracle solves started at each column of V.

    Raises:
        ValidationError: If V is not square or is singular to working precision
    """
    b = grid.index_of(base)
    V = np.eye(sys.n) if basis is None else np.asarray(basis, dtype=float)
    if V.shape != (sys.n, sys.n):
        raise ValidationError(f"Basis must be {sys.n}x{sys.n}, got {V.shape}", field="basis", value=V.shape)
    condition = np.linalg.cond(V)
    if not np.isfinite(condition) or condition > BASIS_CONDITION_LIMIT:
        raise ValidationError(f"Basis is singular or ill-conditioned (cond={condition:.3e})", field="basis", value=condition)

    field = sys.as_field()
    columns = [rk4_solve(field, V[:, k], grid, cfg, start_index=b).states for k in range(sys.n)]
    matrices = np.stack(columns, axis=-1) @ np.linalg.inv(V)
    matrices[b] = np.eye(sys.n)
    return TransitionTable(grid, float(grid.points[b]), matrices, ROUTE_BASIS)


def ltv_forced(sys: LtvSystem, x0, t_bar: float, w=None, impulses: Optional[ImpulseSpec] = None,
               grid: TimeGrid = None, table_builder: TableBuilder = peano_baker) -> Trajectory:
    """x(t) = Phi(t, t_bar) [x0 + integral_{t_bar}^{t} Phi(t_bar, tau) w(tau) dtau] plus impulses.

    Only the column Phi(t_i, t_bar) is built; Phi(t_bar, tau_j) is its
    inverse. Each impulse (tau_k, w_k) adds Phi(t_i, tau_k) w_k for every
    t_i >= tau_k, so the state at tau_k already includes the jump.

    Raises:
        ValidationError: On dimension mismatch, off-grid times or impulses before t_bar
    """
    if grid is None:
        raise ValidationError("A grid is required", field="grid")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (sys.n,):
        raise ValidationError(f"Initial state has shape {x0.shape}, expected ({sys.n},)", field="initial", value=x0.tolist())
    b = grid.index_of(t_bar)
    located = impulses.validate_on(grid, sys.n) if impulses else []
    for index, _ in located:
        if index < b:
            raise ValidationError(f"Impulse at t={grid.points[index]} precedes the reference time {t_bar}",
                                  field="impulses", value=float(grid.points[index]))

    table = table_builder(sys, grid.points[b], grid)
    P = table.matrices
    Q = np.linalg.inv(P)
    carried = np.broadcast_to(x0, (len(grid), sys.n)).copy()
    if w is not None:
        w = np.asarray(w, dtype=float)
        if w.shape != (len(grid), sys.n):
            raise ValidationError(f"Input samples have shape {w.shape}, expected ({len(grid)}, {sys.n})", field="input")
        carried += integral_from(grid, np.einsum("iab,ib->ia", Q, w), b)
    for index, w_bar in located:
        carried[index:] += Q[index] @ w_bar
    states = np.einsum("iab,ib->ia", P, carried)
    return Trajectory(grid, states, table.route, terms_used=table.terms_used,
                      notes={"reference_time": float(grid.points[b]), "tail_bound": table.tail_bound})


def impulse_response(sys: LtvSystem, tau: float, w_bar: Sequence[float], grid: TimeGrid,
                     table_builder: TableBuilder = peano_baker) -> Trajectory:
    """Response to w_bar delta(t - tau) from the zero state: Phi(t, tau) w_bar h(t - tau)."""
    return ltv_forced(sys, np.zeros(sys.n), grid.t0, None, ImpulseSpec.of([(tau, w_bar)]), grid, table_builder)


class SemigroupResidual(NamedTuple):
    composition: float
    inverse: float

    @property
    def worst(self) -> float:
        return max(self.composition, self.inverse)


def semigroup_check(table_builder: TableBuilder, sys: LtvSystem, times, grid: TimeGrid) -> SemigroupResidual:
    """||Phi(t3,t1) - Phi(t3,t2) Phi(t2,t1)|| and ||Phi(t2,t1) Phi(t1,t2) - I||."""
    t1, t2, t3 = times
    from_t1 = table_builder(sys, t1, grid)
    from_t2 = table_builder(sys, t2, grid)
    composition = from_t1.at(t3) - from_t2.at(t3) @ from_t1.at(t2)
    inverse = from_t1.at(t2) @ from_t2.at(t1) - np.eye(sys.n)
    return SemigroupResidual(float(np.linalg.norm(composition, 2)), float(np.linalg.norm(inverse, 2)))


def stm_derivative_residual(table: TransitionTable, sys: LtvSystem) -> float:
    """Sup over interior grid points of the central-difference residual of dPhi/dt = A(t) Phi."""
    grid = table.grid
    if len(grid) < 3:
        raise ValidationError("Central differences need at least three grid points", field="grid", value=len(grid))
    P = table.matrices
    span = (grid.points[2:] - grid.points[:-2]).reshape(-1, 1, 1)
    derivative = (P[2:] - P[:-2]) / span
    residual = derivative - sys.sample(grid.points[1:-1]) @ P[1:-1]
    return _spectral_sup(residual)


class LtvEngine(BaseEngine):
    """Time-varying linear solver over one of the transition-matrix routes."""

    def __init__(self, system: LtvSystem, route: str = ROUTE_PEANO_BAKER, rtol: float = DEFAULT_RTOL,
                 max_terms: int = DEFAULT_MAX_TERMS, oracle: OracleConfig = OracleConfig(), seed: int = 0,
                 basis=None):
        self.system = system
        self.rtol = rtol
        self.max_terms = max_terms
        self.oracle = oracle
        self.seed = seed
        self.basis = basis
        self._builders = {
            ROUTE_PEANO_BAKER: lambda sys, base, grid: peano_baker(sys, base, grid, self.rtol, self.max_terms),
            ROUTE_COMMUTING: lambda sys, base, grid: stm_commuting(sys, base, grid, self.rtol, self.seed),
            ROUTE_BASIS: lambda sys, base, grid: stm_by_basis_solves(sys, base, grid, self.basis, self.oracle),
        }
        if route not in self._builders:
            raise ValidationError(f"Unknown time-varying route: {route}", field="method", value=route)
        self.name = route
        self.last_table: Optional[TransitionTable] = None

    @property
    def table_builder(self) -> TableBuilder:
        return self._builders[self.name]

    def solve(self, x0, grid: TimeGrid, input_signal=None, impulses: Optional[ImpulseSpec] = None) -> Trajectory:
        x0 = self._validate_state(x0, self.system.n)
        w = self._sample_input(input_signal, grid, self.system.n)

        def builder(sys, base, grid):
            self.last_table = self.table_builder(sys, base, grid)
            return self.last_table

        trajectory = ltv_forced(self.system, x0, grid.t0, w, impulses, grid, builder)
        logger.info(f"{self.name} solve finished on {len(grid)} grid points")
        return trajectory

    def transition_table(self, base: float, grid: TimeGrid) -> TransitionTable:
        return self.table_builder(self.system, base, grid)
