class ValidationError(Exception):
    """Exception for validation errors.

    This exception is raised when an input fails a precondition check.
    Examples include:
    - Dimension mismatches between matrices, vectors and samples
    - Samples that do not live on the expected time grid
    - Times that are required to be grid points but are not
    - Orders or counts outside their allowed range

    Attributes:
        message (str): The error message
        field (str, optional): The field that failed validation
        value (any, optional): The invalid value
    """
    def __init__(self, message: str, field: str = None, value: any = None):
        self.message = message
        self.field = field
        self.value = value
        super().__init__(self.message)


class ConfigError(ValidationError):
    """Exception for run configuration errors.

    Raised when a run config cannot be read, parsed or validated. The CLI
    maps it to exit status 1.

    Attributes:
        message (str): The error message
        field (str, optional): Dotted path of the offending config entry
        position (str, optional): Line/column in the file or offset in an expression
    """
    def __init__(self, message: str, field: str = None, position: str = None):
        self.position = position
        super().__init__(message, field=field)

    def __str__(self) -> str:
        parts = [self.message]
        if self.field:
            parts.append(f"field={self.field}")
        if self.position:
            parts.append(f"position={self.position}")
        return " | ".join(parts)


class ExprParseError(Exception):
    """Exception for expression syntax errors.

    Examples include unknown characters, unbalanced parentheses, unknown
    function names and trailing tokens.

    Attributes:
        message (str): The error message
        source (str): The expression text
        position (int): Character offset where parsing failed
    """
    def __init__(self, message: str, source: str = None, position: int = None):
        self.message = message
        self.source = source
        self.position = position
        super().__init__(f"{message} at offset {position}" if position is not None else message)


class EvaluationError(Exception):
    """Exception for expression evaluation errors.

    Examples include unbound variables, sqrt of a negative number, division
    by zero, non-integer exponents and overflow.

    Attributes:
        message (str): The error message
        expression (str, optional): Canonical text of the failing sub-expression
        bindings (dict, optional): Variable bindings in use
    """
    def __init__(self, message: str, expression: str = None, bindings: dict = None):
        self.message = message
        self.expression = expression
        self.bindings = bindings
        super().__init__(self.message)


class SolverError(Exception):
    """Base exception for numerical solver failures.

    Attributes:
        message (str): The error message
        solver (str, optional): Name of the solver route
        terms_used (int, optional): Terms or iterations consumed before failing
    """
    def __init__(self, message: str, solver: str = None, terms_used: int = None):
        self.message = message
        self.solver = solver
        self.terms_used = terms_used
        super().__init__(self.message)


class ConvergenceError(SolverError):
    """A series or iteration did not reach its tolerance within its budget.

    Attributes:
        diagnostics (any, optional): Term norms and bounds gathered so far
    """
    def __init__(self, message: str, solver: str = None, terms_used: int = None, diagnostics: any = None):
        self.diagnostics = diagnostics
        super().__init__(message, solver=solver, terms_used=terms_used)


class CommutativityError(SolverError):
    """The commuting-family shortcut was refused by the commutator spot-check.

    Attributes:
        commutator_norm (float): Largest sampled ||A(s)A(u) - A(u)A(s)||
        tolerance (float): Threshold the norm was compared against
    """
    def __init__(self, message: str, commutator_norm: float = None, tolerance: float = None):
        self.commutator_norm = commutator_norm
        self.tolerance = tolerance
        super().__init__(message, solver="commuting")


class BlowupError(SolverError):
    """The state left the finite working range (finite escape).

    Attributes:
        last_finite_time (float, optional): Last grid time with a finite, bounded state
    """
    def __init__(self, message: str, solver: str = None, last_finite_time: float = None):
        self.last_finite_time = last_finite_time
        super().__init__(message, solver=solver)


class FieldEvaluationError(SolverError):
    """A vector field could not be evaluated at a state.

    Attributes:
        t (float): Time of the failing evaluation
        x (list): State of the failing evaluation
    """
    def __init__(self, message: str, t: float = None, x: any = None, solver: str = None):
        self.t = t
        self.x = x
        super().__init__(message, solver=solver)
