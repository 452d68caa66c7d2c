# src/systems.py

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence, Tuple, Union
import logging
import numpy as np
from .exceptions import ValidationError, EvaluationError, FieldEvaluationError
from .exprlang import Expr, parse, evaluate, variables

logger = logging.getLogger(__name__)

ExprLike = Union[str, Expr]


class SystemKind(str, Enum):
    LTI = "lti"
    LTV = "ltv"
    NONLINEAR = "nonlinear"


def _as_expr(entry: ExprLike) -> Expr:
    return parse(entry) if isinstance(entry, str) else entry


def state_names(n: int) -> Tuple[str, ...]:
    return tuple(f"x{k + 1}" for k in range(n))


def _check_square(A: np.ndarray, field: str) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError(f"Matrix must be square, got shape {A.shape}", field=field, value=A.shape)
    if not np.all(np.isfinite(A)):
        raise ValidationError("Matrix entries must be finite", field=field)
    return A


@dataclass(frozen=True, eq=False)
class LtiSystem:
    """xdot = A x + w with constant A."""
    A: np.ndarray

    def __post_init__(self):
        A = _check_square(self.A, "A")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def as_ltv(self) -> "LtvSystem":
        return LtvSystem.constant(self.A)


@dataclass(frozen=True, eq=False)
class LtvSystem:
    """xdot = A(t) x + w with A given entry-wise by expressions or by a callable.

    ``a_of_t`` maps a time to an n x n matrix; expression-backed systems
    also keep their entries so whole grids are sampled in one pass.
    """
    a_of_t: Callable[[float], np.ndarray]
    n: int
    commuting_hint: Optional[bool] = None
    entries: Optional[Tuple[Tuple[Expr, ...], ...]] = None
    constant_matrix: Optional[np.ndarray] = None

    @classmethod
    def from_expressions(cls, entries: Sequence[Sequence[ExprLike]], commuting_hint: Optional[bool] = None) -> "LtvSystem":
        rows = tuple(tuple(_as_expr(e) for e in row) for row in entries)
        n = len(rows)
        if n == 0 or any(len(row) != n for row in rows):
            raise ValidationError("Matrix expressions must form a square array", field="matrix")
        for row in rows:
            for e in row:
                extra = variables(e) - {"t"}
                if extra:
                    raise ValidationError(f"A(t) entries may only use t, found {sorted(extra)}", field="matrix")

        def a_of_t(t: float) -> np.ndarray:
            return np.array([[evaluate(e, {"t": t}) for e in row] for row in rows], dtype=float)

        constant = None
        if all(not variables(e) for row in rows for e in row):
            constant = a_of_t(0.0)
        return cls(a_of_t, n, commuting_hint, rows, constant)

    @classmethod
    def constant(cls, A) -> "LtvSystem":
        A = _check_square(A, "A").copy()
        A.setflags(write=False)
        return cls(lambda t: A, A.shape[0], True, None, A)

    @property
    def is_constant(self) -> bool:
        return self.constant_matrix is not None

    def is_constant_on(self, grid) -> bool:
        """True when A(t) takes one value at every grid time."""
        if self.is_constant:
            return True
        samples = self.sample(grid)
        return bool(np.all(samples == samples[0]))

    def matrix(self, t: float) -> np.ndarray:
        A = np.asarray(self.a_of_t(t), dtype=float)
        if A.shape != (self.n, self.n) or not np.all(np.isfinite(A)):
            raise ValidationError(f"A({t}) is not a finite {self.n}x{self.n} matrix", field="A", value=t)
        return A

    def sample(self, ts) -> np.ndarray:
        """A(t) at every time in ``ts``, shape (len(ts), n, n)."""
        ts = np.asarray(getattr(ts, "points", ts), dtype=float)
        if self.constant_matrix is not None:
            return np.broadcast_to(self.constant_matrix, (ts.size, self.n, self.n)).copy()
        if self.entries is not None:
            out = np.empty((ts.size, self.n, self.n))
            for i, row in enumerate(self.entries):
                for j, e in enumerate(row):
                    out[:, i, j] = np.broadcast_to(evaluate(e, {"t": ts}), ts.shape)
            return out
        return np.stack([self.matrix(t) for t in ts])

    def as_field(self, input_fn: Optional[Callable] = None) -> Callable:
        """Point-wise field (t, x) -> A(t) x + w(t)."""
        def field(t: float, x: np.ndarray) -> np.ndarray:
            dx = self.matrix(t) @ x
            if input_fn is not None:
                dx = dx + np.asarray(input_fn(t), dtype=float)
            return dx
        return field

    def as_nonlinear(self, input_fn: Optional[Callable] = None) -> "NonlinearSystem":
        """The same dynamics as a general vector field, vectorized over traces."""
        def field(t, x):
            x = np.asarray(x, dtype=float)
            ts = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])
            A = self.sample(ts.reshape(-1)).reshape(ts.shape + (self.n, self.n))
            dx = np.einsum("...ij,...j->...i", A, x)
            if input_fn is not None:
                dx = dx + np.asarray(input_fn(ts), dtype=float).reshape(dx.shape)
            return dx
        return NonlinearSystem(field, self.n, label="linear")


@dataclass(frozen=True, eq=False)
class InputSignal:
    """Smooth input w(t), one expression per state component."""
    components: Tuple[Expr, ...]

    @classmethod
    def from_expressions(cls, exprs: Sequence[ExprLike]) -> "InputSignal":
        components = tuple(_as_expr(e) for e in exprs)
        for e in components:
            extra = variables(e) - {"t"}
            if extra:
                raise ValidationError(f"Input entries may only use t, found {sorted(extra)}", field="input")
        return cls(components)

    @property
    def n(self) -> int:
        return len(self.components)

    def __call__(self, t):
        """w(t); array times give shape t.shape + (n,)."""
        t = np.asarray(t, dtype=float)
        values = [np.broadcast_to(evaluate(e, {"t": t}), t.shape) for e in self.components]
        return np.stack(values, axis=-1)

    def sample(self, grid) -> np.ndarray:
        return self(grid.points)


def _builtin_fields():
    return {
        "identity": lambda t, x: np.asarray(x, dtype=float),
        "square": lambda t, x: np.asarray(x, dtype=float) ** 2,
        "sqrt_abs": lambda t, x: np.sqrt(np.abs(np.asarray(x, dtype=float))),
    }


BUILTIN_FIELDS = tuple(_builtin_fields())


@dataclass(frozen=True, eq=False)
class NonlinearSystem:
    """xdot = f(t, x).

    ``field`` is vectorized: x has shape (..., n), t broadcasts against
    x[..., 0] and the result has the shape of x. ``lipschitz`` is an
    optional user-supplied global Lipschitz constant.
    """
    field: Callable
    n: int
    lipschitz: Optional[float] = None
    label: str = "custom"

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError("State dimension must be positive", field="n", value=self.n)
        if self.lipschitz is not None and not self.lipschitz >= 0:
            raise ValidationError("Lipschitz constant must be non-negative", field="lipschitz", value=self.lipschitz)

    @classmethod
    def from_expressions(cls, exprs: Sequence[ExprLike], lipschitz: Optional[float] = None) -> "NonlinearSystem":
        components = tuple(_as_expr(e) for e in exprs)
        n = len(components)
        if n == 0:
            raise ValidationError("A vector field needs at least one component", field="field")
        names = state_names(n)
        allowed = set(names) | {"t"}
        for e in components:
            extra = variables(e) - allowed
            if extra:
                raise ValidationError(f"Field entries may only use t and {', '.join(names)}, found {sorted(extra)}", field="field")

        def field(t, x):
            x = np.asarray(x, dtype=float)
            bindings = {name: x[..., k] for k, name in enumerate(names)}
            bindings["t"] = np.asarray(t, dtype=float)
            shape = x.shape[:-1]
            return np.stack([np.broadcast_to(evaluate(e, bindings), shape) for e in components], axis=-1)

        return cls(field, n, lipschitz, label="expression")

    @classmethod
    def builtin(cls, name: str, n: int = 1, lipschitz: Optional[float] = None) -> "NonlinearSystem":
        fields = _builtin_fields()
        if name not in fields:
            raise ValidationError(f"Unknown built-in field {name!r}; choose from {', '.join(fields)}", field="builtin", value=name)
        return cls(fields[name], n, lipschitz, label=name)

    @classmethod
    def linear(cls, A, lipschitz: Optional[float] = None) -> "NonlinearSystem":
        A = _check_square(A, "A")
        return cls(lambda t, x: np.asarray(x, dtype=float) @ A.T, A.shape[0], lipschitz, label="linear")

    def evaluate(self, t: float, x) -> np.ndarray:
        """Field at one point; faults surface with the offending (t, x)."""
        x = np.asarray(x, dtype=float)
        try:
            with np.errstate(all="ignore"):
                value = np.asarray(self.field(t, x), dtype=float)
        except (EvaluationError, ValidationError, ArithmeticError, ValueError) as e:
            raise FieldEvaluationError(f"Field evaluation failed at t={t}: {e}", t=float(t), x=x.tolist())
        if value.shape != x.shape or not np.all(np.isfinite(value)):
            raise FieldEvaluationError(f"Field is not finite at t={t}", t=float(t), x=x.tolist())
        return value

    def evaluate_trace(self, ts, xs) -> np.ndarray:
        """Field along a sampled path, shape (M, n)."""
        ts = np.asarray(ts, dtype=float)
        xs = np.asarray(xs, dtype=float)
        try:
            with np.errstate(all="ignore"):
                values = np.asarray(self.field(ts, xs), dtype=float)
            if values.shape == xs.shape and np.all(np.isfinite(values)):
                return values
        except (EvaluationError, ValidationError, ArithmeticError, ValueError):
            pass
        # locate the first failing sample
        for t, x in zip(ts, xs):
            self.evaluate(t, x)
        raise FieldEvaluationError("Field evaluation failed on the trace", t=float(ts[0]), x=xs[0].tolist())
