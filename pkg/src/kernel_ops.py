# src/kernel_ops.py

"""Two-variable kernels sampled on a time grid, used as linear operators.

A kernel K(t, tau) acts on a sampled function u by quadrature,
v(t_i) = sum_j w_ij K(t_i, t_j) u(t_j). Causal kernels vanish for tau > t.

Diagonal conventions per rule:

- LEFT_ENDPOINT: causal kernels carry a zero diagonal, so every causal
  operator is strictly lower triangular and compositions are exact
  matrix products. Powers of a causal kernel vanish after N+1 factors.
- TRAPEZOID: causal kernels keep their true diagonal samples (the
  Volterra kernel has h(0) = 1) and the end nodes of each integration
  interval get half weight. Composition is trapezoidal quadrature over
  [tau, t], exact for integrands linear in the integration variable.

The identity operator has no kernel; Neumann sums add the input function
explicitly instead of materializing a delta.
"""

from dataclasses import dataclass, field
from math import factorial
from typing import Callable, List, Optional
import logging
import numpy as np
from .exceptions import ValidationError, ConvergenceError
from .timegrid import TimeGrid, QuadratureRule, cumulative_integral

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class KernelOperator:
    """Kernel samples K(t_i, t_j) on grid x grid, scalar or m x m blocks."""
    grid: TimeGrid
    values: np.ndarray
    causal: bool = False

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        size = len(self.grid)
        if values.ndim not in (2, 4) or values.shape[:2] != (size, size):
            raise ValidationError(
                f"Kernel samples must have shape ({size}, {size}[, m, m]), got {values.shape}",
                field="values",
            )
        if values.ndim == 4 and values.shape[2] != values.shape[3]:
            raise ValidationError("Kernel blocks must be square", field="values", value=values.shape)
        if self.causal:
            upper = np.triu(np.ones((size, size), dtype=bool), k=1)
            if np.any(values[upper] != 0):
                raise ValidationError("Causal kernel has nonzero entries above the diagonal", field="values")
            if self.grid.rule == QuadratureRule.LEFT_ENDPOINT:
                idx = np.arange(size)
                values[idx, idx] = 0.0
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, grid: TimeGrid, fn: Callable, causal: bool = False) -> "KernelOperator":
        """Sample a vectorized kernel fn(t, tau) on grid x grid."""
        t = grid.points[:, None]
        tau = grid.points[None, :]
        values = np.array(np.broadcast_to(fn(t, tau), (len(grid), len(grid))), dtype=float)
        if causal:
            values = np.tril(values)
        return cls(grid, values, causal)

    @classmethod
    def zero(cls, grid: TimeGrid, block: Optional[int] = None, causal: bool = True) -> "KernelOperator":
        shape = (len(grid), len(grid)) if block is None else (len(grid), len(grid), block, block)
        return cls(grid, np.zeros(shape), causal)

    @property
    def block_size(self) -> Optional[int]:
        return self.values.shape[2] if self.values.ndim == 4 else None

    def at(self, t: float, tau: float):
        """Kernel sample at two grid times."""
        value = self.values[self.grid.index_of(t), self.grid.index_of(tau)]
        return float(value) if np.ndim(value) == 0 else value

    def as_blocks(self, m: int) -> np.ndarray:
        """Values as m x m blocks; a scalar kernel becomes K(t, tau) I."""
        if self.values.ndim == 4:
            if self.values.shape[2] != m:
                raise ValidationError(f"Kernel blocks are {self.values.shape[2]}x{self.values.shape[2]}, expected {m}x{m}", field="values")
            return self.values
        return self.values[:, :, None, None] * np.eye(m)


def _check_same_grid(a: TimeGrid, b: TimeGrid) -> None:
    if not a.same_as(b):
        raise ValidationError("Operands live on different grids", field="grid")


def _edge_spacings(grid: TimeGrid):
    """Spacing before and after every node, zero past the ends."""
    h = grid.spacings
    before = np.concatenate(([0.0], h))
    after = np.concatenate((h, [0.0]))
    return before, after


def apply(K: KernelOperator, u) -> np.ndarray:
    """Quadrature of K(t_i, xi) u(xi); causal kernels integrate over [t0, t_i]."""
    u = np.asarray(u, dtype=float)
    size = len(K.grid)
    if u.ndim == 0 or u.shape[0] != size:
        raise ValidationError(f"Function must be sampled on the kernel grid ({size} points)", field="u")
    w = K.grid.node_weights()
    trapezoid_causal = K.causal and K.grid.rule == QuadratureRule.TRAPEZOID
    _, after = _edge_spacings(K.grid)

    if K.values.ndim == 2:
        v = np.tensordot(K.values * w[None, :], u, axes=(1, 0))
        if trapezoid_causal:
            diag = np.diagonal(K.values) * after / 2.0
            v -= diag.reshape((-1,) + (1,) * (u.ndim - 1)) * u
        return v

    m = K.block_size
    if u.ndim < 2 or u.shape[1] != m:
        raise ValidationError(f"Block kernel of size {m} needs samples of shape (N+1, {m}, ...)", field="u")
    v = np.einsum("ijab,j,jb...->ia...", K.values, w, u)
    if trapezoid_causal:
        diag = np.einsum("iiab->iab", K.values) * (after / 2.0)[:, None, None]
        v -= np.einsum("iab,ib...->ia...", diag, u)
    return v


def compose(B: KernelOperator, A: KernelOperator) -> KernelOperator:
    """Kernel of the composition B A: C(t_i, t_r) = quadrature of B(t_i, xi) A(xi, t_r)."""
    _check_same_grid(B.grid, A.grid)
    grid = B.grid
    w = grid.node_weights()
    before, after = _edge_spacings(grid)
    trapezoid = grid.rule == QuadratureRule.TRAPEZOID

    if B.values.ndim == 2 and A.values.ndim == 2:
        C = (B.values * w[None, :]) @ A.values
        if trapezoid and A.causal:
            C -= B.values * (before / 2.0 * np.diagonal(A.values))[None, :]
        if trapezoid and B.causal:
            C -= (after / 2.0 * np.diagonal(B.values))[:, None] * A.values
    else:
        m = B.block_size or A.block_size
        Bv, Av = B.as_blocks(m), A.as_blocks(m)
        C = np.einsum("ijab,j,jrbc->irac", Bv, w, Av)
        if trapezoid and A.causal:
            A_diag = np.einsum("rrbc->rbc", Av)
            C -= np.einsum("irab,rbc->irac", Bv, A_diag) * (before / 2.0)[None, :, None, None]
        if trapezoid and B.causal:
            B_diag = np.einsum("iiab->iab", Bv)
            C -= np.einsum("iab,irbc->irac", B_diag, Av) * (after / 2.0)[:, None, None, None]

    causal = A.causal and B.causal
    if causal:
        size = len(grid)
        C[np.triu(np.ones((size, size), dtype=bool), k=1)] = 0.0
    return KernelOperator(grid, C, causal)


def add(A: KernelOperator, B: KernelOperator) -> KernelOperator:
    """Entrywise kernel sum."""
    _check_same_grid(A.grid, B.grid)
    if A.values.ndim == B.values.ndim:
        values = A.values + B.values
    else:
        m = A.block_size or B.block_size
        values = A.as_blocks(m) + B.as_blocks(m)
    return KernelOperator(A.grid, values, A.causal and B.causal)


def scale(c: float, K: KernelOperator) -> KernelOperator:
    return KernelOperator(K.grid, c * K.values, K.causal)


def power(K: KernelOperator, k: int) -> KernelOperator:
    """k-fold composition K^k for k >= 1."""
    if k < 1:
        raise ValidationError("Kernel powers start at 1; the identity has no kernel", field="k", value=k)
    result = K
    for _ in range(k - 1):
        result = compose(K, result)
    return result


def sup_norm(K: KernelOperator) -> float:
    """Largest kernel sample (spectral norm of each block)."""
    if K.values.ndim == 2:
        return float(np.abs(K.values).max())
    return float(np.linalg.norm(K.values, ord=2, axis=(2, 3)).max())


def volterra(grid: TimeGrid) -> KernelOperator:
    """Volterra integration kernel h(t - tau)."""
    return KernelOperator(grid, np.tril(np.ones((len(grid), len(grid)))), causal=True)


def volterra_times(grid: TimeGrid, samples) -> KernelOperator:
    """Kernel h(t - tau) A(tau) of the operator u -> integral of A u."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape[0] != len(grid):
        raise ValidationError(f"Expected {len(grid)} samples", field="samples")
    mask = np.tril(np.ones((len(grid), len(grid))))
    if samples.ndim == 1:
        return KernelOperator(grid, mask * samples[None, :], causal=True)
    return KernelOperator(grid, mask[:, :, None, None] * samples[None, :, :, :], causal=True)


def volterra_power_closed_form(grid: TimeGrid, k: int) -> KernelOperator:
    """Kernel of V^k: (t - tau)^(k-1) / (k-1)! h(t - tau)."""
    if k < 1:
        raise ValidationError("Volterra powers start at k = 1", field="k", value=k)
    if k == 1:
        return volterra(grid)
    c = 1.0 / factorial(k - 1)
    return KernelOperator.from_function(
        grid, lambda t, tau: c * np.clip(t - tau, 0.0, None) ** (k - 1), causal=True
    )


@dataclass
class NeumannDiagnostics:
    """Truncation record of a Neumann sum.

    ``bound_sequence[k]`` is the a-priori envelope (kappa L)^k / k! times
    the size of the input, with kappa the kernel sup and L the interval
    length; ``tail_bound`` sums that envelope past the last term used.
    """
    terms_used: int
    term_norms: List[float] = field(default_factory=list)
    bound_sequence: List[float] = field(default_factory=list)
    tail_bound: float = 0.0
    converged: bool = True

    @property
    def final_term_norm(self) -> float:
        return self.term_norms[-1] if self.term_norms else 0.0


def _sup(samples: np.ndarray) -> float:
    return float(np.abs(samples).max()) if samples.size else 0.0


def envelope(rate: float, k: int) -> float:
    """rate^k / k!, evaluated without overflow for moderate k."""
    value = 1.0
    for j in range(1, k + 1):
        value *= rate / j
    return value


def envelope_tail(rate: float, m: int, limit: int = 2000) -> float:
    """Sum of rate^j / j! for j > m."""
    term = envelope(rate, m + 1)
    total = 0.0
    j = m + 1
    while j < m + 1 + limit:
        total += term
        j += 1
        term *= rate / j
        if term <= 1e-17 * total or not np.isfinite(total):
            break
    return total


def _diagnostics(K: KernelOperator, g: np.ndarray, norms: List[float], converged: bool) -> NeumannDiagnostics:
    rate = sup_norm(K) * K.grid.span
    scale_g = _sup(g)
    m = len(norms) - 1
    return NeumannDiagnostics(
        terms_used=len(norms),
        term_norms=norms,
        bound_sequence=[scale_g * envelope(rate, k) for k in range(len(norms))],
        tail_bound=scale_g * envelope_tail(rate, m),
        converged=converged,
    )


def neumann_inverse_apply(K: KernelOperator, g, rtol: float = 1e-10, max_terms: int = 200):
    """x = (I - K)^{-1} g as the truncated series sum_n K^n g.

    Stops when the newest term's sup-norm falls to rtol times the partial
    sum's, or when it is identically zero. Returns (x, NeumannDiagnostics).
    """
    if not K.causal:
        raise ValidationError("Neumann series convergence is only certified for causal kernels", field="causal")
    g = np.asarray(g, dtype=float)
    x = g.copy()
    term = g
    norms = [_sup(g)]
    while True:
        if len(norms) > max_terms:
            diagnostics = _diagnostics(K, g, norms, converged=False)
            raise ConvergenceError(
                f"Neumann series did not reach rtol={rtol} within {max_terms} terms",
                solver="neumann", terms_used=len(norms), diagnostics=diagnostics,
            )
        term = apply(K, term)
        norm = _sup(term)
        if norm == 0.0:
            break
        x = x + term
        norms.append(norm)
        logger.debug(f"Neumann term {len(norms) - 1}: sup-norm {norm:.3e}")
        if norm <= rtol * _sup(x):
            break

    diagnostics = _diagnostics(K, g, norms, converged=True)
    logger.debug(f"Neumann series converged with {diagnostics.terms_used} terms")
    return x, diagnostics


def neumann_iterate(K: KernelOperator, g, rtol: float = 1e-10, max_terms: int = 200):
    """Same inverse by the iteration x_{k+1} = g + K x_k starting from x_0 = g."""
    if not K.causal:
        raise ValidationError("Neumann series convergence is only certified for causal kernels", field="causal")
    g = np.asarray(g, dtype=float)
    x = g.copy()
    norms = [_sup(g)]
    for _ in range(max_terms):
        x_next = g + apply(K, x)
        step = _sup(x_next - x)
        x = x_next
        if step == 0.0:
            break
        norms.append(step)
        if step <= rtol * _sup(x):
            break
    else:
        raise ConvergenceError(
            f"Neumann iteration did not reach rtol={rtol} within {max_terms} steps",
            solver="neumann-iterate", terms_used=len(norms),
            diagnostics=_diagnostics(K, g, norms, converged=False),
        )
    return x, _diagnostics(K, g, norms, converged=True)


def cauchy_repeated_integral(grid: TimeGrid, g, k: int) -> np.ndarray:
    """k-fold running integral of g as one weighted integral (Cauchy formula)."""
    if k < 1:
        raise ValidationError("Repeated integration needs k >= 1", field="k", value=k)
    if k == 1:
        return cumulative_integral(grid, g)
    return apply(volterra_power_closed_form(grid, k), g)
