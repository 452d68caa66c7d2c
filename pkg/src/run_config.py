# src/run_config.py

"""JSON run configurations.

A run config names the system, the horizon, the initial state, optional
inputs, the solver settings and the output files. Every matrix entry and
field component is exprlang text (plain numbers are accepted too). The
schema is documented in README.md.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple, Union
import json
import logging
import os
import numpy as np
from .exceptions import ConfigError, ExprParseError, ValidationError
from .exprlang import Expr, Num, parse, variables
from .records import ImpulseSpec
from .systems import (
    BUILTIN_FIELDS, InputSignal, LtiSystem, LtvSystem, NonlinearSystem, SystemKind, state_names,
)
from .timegrid import QuadratureRule, TimeGrid

logger = logging.getLogger(__name__)

METHODS = ("auto", "matrix-exponential", "peano-baker", "commuting", "basis-solve", "picard", "oracle")
LINEAR_METHODS = ("auto", "matrix-exponential", "peano-baker", "commuting", "basis-solve", "oracle")
NONLINEAR_METHODS = ("auto", "picard", "oracle")
METHOD_ALIASES = {"basis-solves": "basis-solve"}
SECTIONS = ("system", "horizon", "initial", "input", "solver", "outputs")


def _fail(message: str, path: str, position: Optional[str] = None):
    raise ConfigError(message, field=path, position=position)


def _section(data: Dict[str, Any], key: str, path: str, required: bool = True) -> Any:
    if key not in data:
        if required:
            _fail(f"Missing required entry '{key}'", f"{path}.{key}" if path else key)
        return None
    return data[key]


def _number(value: Any, path: str, positive: bool = False, integer: bool = False) -> Union[int, float]:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(f"Expected a number, got {value!r}", path)
    if not np.isfinite(value):
        _fail("Number must be finite", path)
    if integer and int(value) != value:
        _fail(f"Expected an integer, got {value!r}", path)
    if positive and value <= 0:
        _fail(f"Expected a positive number, got {value!r}", path)
    return int(value) if integer else float(value)


def _expression(value: Any, path: str, allowed: Tuple[str, ...]) -> Expr:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return Num(_number(value, path))
    if not isinstance(value, str):
        _fail(f"Expected expression text or a number, got {value!r}", path)
    try:
        expr = parse(value)
    except ExprParseError as e:
        _fail(f"{e.message} in {value!r}", path, position=f"offset {e.position}")
    extra = variables(expr) - set(allowed)
    if extra:
        allowed_text = ", ".join(allowed) if allowed else "no variables"
        _fail(f"Expression uses {', '.join(sorted(extra))}; allowed: {allowed_text}", path)
    return expr


def _expression_matrix(value: Any, path: str, allowed: Tuple[str, ...]) -> Tuple[Tuple[Expr, ...], ...]:
    if not isinstance(value, list) or not value or not all(isinstance(row, list) for row in value):
        _fail("Matrix must be a non-empty list of rows", path)
    n = len(value)
    for i, row in enumerate(value):
        if len(row) != n:
            _fail(f"Matrix must be square: row {i} has {len(row)} entries, expected {n}", f"{path}[{i}]")
    return tuple(
        tuple(_expression(entry, f"{path}[{i}][{j}]", allowed) for j, entry in enumerate(row))
        for i, row in enumerate(value)
    )


def _vector(value: Any, path: str, n: int) -> Tuple[float, ...]:
    if isinstance(value, (int, float)) and not isinstance(value, bool) and n == 1:
        value = [value]
    if not isinstance(value, list) or len(value) != n:
        _fail(f"Expected a list of {n} numbers", path)
    return tuple(_number(v, f"{path}[{k}]") for k, v in enumerate(value))


@dataclass(frozen=True)
class SystemSpec:
    kind: SystemKind
    n: int
    matrix: Optional[Tuple[Tuple[Expr, ...], ...]] = None
    field: Optional[Tuple[Expr, ...]] = None
    builtin: Optional[str] = None
    lipschitz: Optional[float] = None
    commuting: Optional[bool] = None

    def build(self):
        """Build the system model for this entry."""
        if self.kind == SystemKind.LTI:
            return LtiSystem(LtvSystem.from_expressions(self.matrix).constant_matrix)
        if self.kind == SystemKind.LTV:
            return LtvSystem.from_expressions(self.matrix, commuting_hint=self.commuting)
        if self.builtin is not None:
            return NonlinearSystem.builtin(self.builtin, self.n, self.lipschitz)
        return NonlinearSystem.from_expressions(self.field, self.lipschitz)


@dataclass(frozen=True)
class HorizonSpec:
    t0: float
    T: float
    steps: int
    rule: QuadratureRule = QuadratureRule.TRAPEZOID

    def grid(self) -> TimeGrid:
        return TimeGrid.uniform(self.t0, self.T, self.steps, self.rule)


@dataclass(frozen=True)
class InputSpec:
    smooth: Optional[Tuple[Expr, ...]] = None
    impulses: Tuple[Tuple[float, Tuple[float, ...]], ...] = ()

    def signal(self) -> Optional[InputSignal]:
        return InputSignal(self.smooth) if self.smooth is not None else None

    def impulse_spec(self) -> Optional[ImpulseSpec]:
        return ImpulseSpec.of(self.impulses) if self.impulses else None


@dataclass(frozen=True)
class SolverSpec:
    method: str = "auto"
    rtol: Optional[float] = None
    max_terms: int = 60
    max_iters: int = 500
    blowup_threshold: float = 1e12
    substeps: int = 16
    basis: Optional[Tuple[Tuple[float, ...], ...]] = None
    lipschitz_samples: int = 200


@dataclass(frozen=True)
class OutputSpec:
    trajectory: Optional[str] = "trajectory.csv"
    stm: Optional[str] = None
    report: str = "report.txt"


@dataclass(frozen=True)
class RunConfig:
    name: str
    system: SystemSpec
    horizon: HorizonSpec
    initial: Tuple[float, ...]
    input: InputSpec = field(default_factory=InputSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    outputs: OutputSpec = field(default_factory=OutputSpec)

    @property
    def n(self) -> int:
        return self.system.n


def _parse_system(data: Any) -> SystemSpec:
    if not isinstance(data, dict):
        _fail("Expected an object", "system")
    raw_kind = _section(data, "kind", "system")
    try:
        kind = SystemKind(str(raw_kind).lower())
    except ValueError:
        _fail(f"Unknown system kind {raw_kind!r}; choose from lti, ltv, nonlinear", "system.kind")

    lipschitz = data.get("lipschitz")
    if lipschitz is not None:
        lipschitz = _number(lipschitz, "system.lipschitz")
        if lipschitz < 0:
            _fail("Lipschitz constant must be non-negative", "system.lipschitz")

    if kind in (SystemKind.LTI, SystemKind.LTV):
        allowed = () if kind == SystemKind.LTI else ("t",)
        matrix = _expression_matrix(_section(data, "matrix", "system"), "system.matrix", allowed)
        commuting = data.get("commuting")
        if commuting is not None and not isinstance(commuting, bool):
            _fail("Expected true or false", "system.commuting")
        return SystemSpec(kind, len(matrix), matrix=matrix, lipschitz=lipschitz, commuting=commuting)

    if "builtin" in data:
        name = data["builtin"]
        if name not in BUILTIN_FIELDS:
            _fail(f"Unknown built-in field {name!r}; choose from {', '.join(BUILTIN_FIELDS)}", "system.builtin")
        n = _number(data.get("dimension", 1), "system.dimension", positive=True, integer=True)
        return SystemSpec(kind, n, builtin=name, lipschitz=lipschitz)

    components = _section(data, "field", "system")
    if isinstance(components, str):
        components = [components]
    if not isinstance(components, list) or not components:
        _fail("Field must be a non-empty list of expressions", "system.field")
    allowed = state_names(len(components)) + ("t",)
    field_exprs = tuple(_expression(c, f"system.field[{k}]", allowed) for k, c in enumerate(components))
    return SystemSpec(kind, len(field_exprs), field=field_exprs, lipschitz=lipschitz)


def _parse_horizon(data: Any) -> HorizonSpec:
    if not isinstance(data, dict):
        _fail("Expected an object", "horizon")
    t0 = _number(data.get("t0", 0.0), "horizon.t0")
    T = _number(_section(data, "T", "horizon"), "horizon.T")
    if T <= t0:
        _fail(f"Horizon end T={T} must exceed t0={t0}", "horizon.T")
    steps = _number(_section(data, "steps", "horizon"), "horizon.steps", positive=True, integer=True)
    try:
        rule = QuadratureRule.parse(data.get("rule", QuadratureRule.TRAPEZOID.value))
    except ValidationError as e:
        _fail(e.message, "horizon.rule")
    return HorizonSpec(t0, T, steps, rule)


def _parse_input(data: Any, n: int, horizon: HorizonSpec) -> InputSpec:
    if data is None:
        return InputSpec()
    if not isinstance(data, dict):
        _fail("Expected an object", "input")
    smooth = data.get("smooth")
    if smooth is not None:
        if isinstance(smooth, (str, int, float)):
            smooth = [smooth]
        if not isinstance(smooth, list) or len(smooth) != n:
            _fail(f"Smooth input needs {n} components", "input.smooth")
        smooth = tuple(_expression(c, f"input.smooth[{k}]", ("t",)) for k, c in enumerate(smooth))

    impulses = []
    raw = data.get("impulses", [])
    if not isinstance(raw, list):
        _fail("Impulses must be a list", "input.impulses")
    for k, item in enumerate(raw):
        path = f"input.impulses[{k}]"
        if not isinstance(item, dict):
            _fail("Each impulse needs 'time' and 'vector'", path)
        tau = _number(_section(item, "time", path), f"{path}.time")
        if not horizon.t0 <= tau <= horizon.T:
            _fail(f"Impulse time {tau} lies outside [{horizon.t0}, {horizon.T}]", f"{path}.time")
        impulses.append((tau, _vector(_section(item, "vector", path), f"{path}.vector", n)))
    if any(b[0] <= a[0] for a, b in zip(impulses, impulses[1:])):
        _fail("Impulse times must be strictly increasing", "input.impulses")
    return InputSpec(smooth, tuple(impulses))


def _parse_solver(data: Any, system: SystemSpec) -> SolverSpec:
    if data is None:
        return SolverSpec()
    if not isinstance(data, dict):
        _fail("Expected an object", "solver")
    method = data.get("method", "auto")
    method = METHOD_ALIASES.get(method, method) if isinstance(method, str) else method
    allowed = NONLINEAR_METHODS if system.kind == SystemKind.NONLINEAR else LINEAR_METHODS
    if method not in allowed:
        _fail(f"Method {method!r} does not apply to {system.kind.value} systems; choose from {', '.join(allowed)}", "solver.method")
    if method == "matrix-exponential" and system.kind != SystemKind.LTI:
        _fail("The matrix exponential needs a constant matrix (kind lti)", "solver.method")

    rtol = data.get("rtol")
    if rtol is not None:
        rtol = _number(rtol, "solver.rtol", positive=True)
    basis = data.get("basis")
    if basis is not None:
        if not isinstance(basis, list) or len(basis) != system.n:
            _fail(f"Basis must have {system.n} rows", "solver.basis")
        basis = tuple(_vector(row, f"solver.basis[{i}]", system.n) for i, row in enumerate(basis))
    return SolverSpec(
        method=method,
        rtol=rtol,
        max_terms=_number(data.get("max_terms", 60), "solver.max_terms", positive=True, integer=True),
        max_iters=_number(data.get("max_iters", 500), "solver.max_iters", positive=True, integer=True),
        blowup_threshold=_number(data.get("blowup_threshold", 1e12), "solver.blowup_threshold", positive=True),
        substeps=_number(data.get("substeps", 16), "solver.substeps", positive=True, integer=True),
        basis=basis,
        lipschitz_samples=_number(data.get("lipschitz_samples", 200), "solver.lipschitz_samples", positive=True, integer=True),
    )


def _parse_outputs(data: Any) -> OutputSpec:
    if data is None:
        return OutputSpec()
    if not isinstance(data, dict):
        _fail("Expected an object", "outputs")
    values = {}
    for key in ("trajectory", "stm", "report"):
        if key in data:
            value = data[key]
            if value is not None and (not isinstance(value, str) or not value.strip()):
                _fail("Expected a file name", f"outputs.{key}")
            values[key] = value
    if values.get("report", "report.txt") is None:
        _fail("A report file is always written", "outputs.report")
    return OutputSpec(**values)


def parse_run_config(data: Any, name: str = "run") -> RunConfig:
    """Validate a decoded JSON document into a RunConfig.

    Raises:
        ConfigError: Naming the offending entry and, for expressions, the offset
    """
    if not isinstance(data, dict):
        _fail("Run config must be a JSON object", "")
    unknown = set(data) - set(SECTIONS) - {"name"}
    if unknown:
        _fail(f"Unknown section(s): {', '.join(sorted(unknown))}", sorted(unknown)[0])
    system = _parse_system(_section(data, "system", ""))
    horizon = _parse_horizon(_section(data, "horizon", ""))
    initial = _vector(_section(data, "initial", ""), "initial", system.n)
    input_spec = _parse_input(data.get("input"), system.n, horizon)
    if system.kind == SystemKind.NONLINEAR and input_spec.impulses:
        _fail("Impulses are only supported for linear systems", "input.impulses")
    solver = _parse_solver(data.get("solver"), system)
    outputs = _parse_outputs(data.get("outputs"))
    return RunConfig(str(data.get("name", name)), system, horizon, initial, input_spec, solver, outputs)


def load_run_config(path: str) -> RunConfig:
    """Read and validate a run config file.

    Raises:
        ConfigError: If the file is missing, empty, not JSON or invalid
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"Cannot read config: {e.strerror}", field="path", position=path)
    except UnicodeDecodeError as e:
        raise ConfigError("Config file is not UTF-8 text", field="path", position=f"byte {e.start}")
    if not text.strip():
        raise ConfigError("Config file is empty", field="path", position="line 1, column 1")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Invalid JSON: {e.msg}", field="path", position=f"line {e.lineno}, column {e.colno}")
    except RecursionError:
        raise ConfigError("Invalid JSON: nested too deeply", field="path", position="line 1, column 1")
    name = os.path.splitext(os.path.basename(path))[0]
    config = parse_run_config(data, name)
    logger.info(f"Loaded run config {config.name!r}: {config.system.kind.value}, n={config.n}, method={config.solver.method}")
    return config
