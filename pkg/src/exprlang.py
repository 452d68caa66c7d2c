# src/exprlang.py

"""Arithmetic expression language for matrix entries and vector fields.

Grammar (whitespace is ignored):

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := "-" unary | power
    power  := atom ("^" unary)?
    atom   := NUMBER | NAME "(" expr ")" | NAME | "(" expr ")"

``^`` binds tighter than unary minus and is right-associative; its
exponent must evaluate to an integer. Functions: sin, cos, exp, sqrt,
abs, tanh. Variables are ``t`` and ``x1`` .. ``xn``.
"""

from dataclasses import dataclass
from typing import Callable, Dict, FrozenSet, List, Tuple, Union
import logging
import re
import numpy as np
from .exceptions import ExprParseError, EvaluationError

logger = logging.getLogger(__name__)

FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "tanh": np.tanh,
}

_TOKEN_REGEXP = re.compile(
    r"\s*(?:"
    r"(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()])"
    r")"
)
_TRAILING_SPACE = re.compile(r"\s*")


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"


Expr = Union[Num, Var, Neg, BinOp, Call]


def _tokenize(src: str) -> List[Tuple[str, str, int]]:
    tokens = []
    pos = 0
    end = len(src)
    while True:
        pos = _TRAILING_SPACE.match(src, pos).end()
        if pos >= end:
            break
        match = _TOKEN_REGEXP.match(src, pos)
        if match is None or match.end() == pos:
            raise ExprParseError(f"Unexpected character {src[pos]!r}", src, pos)
        kind = match.lastgroup
        text = match.group(kind)
        start = match.start(kind)
        tokens.append((kind, text, start))
        pos = match.end()
    tokens.append(("end", "", end))
    return tokens


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.tokens = _tokenize(src)
        self.index = 0

    def _peek(self) -> Tuple[str, str, int]:
        return self.tokens[self.index]

    def _advance(self) -> Tuple[str, str, int]:
        token = self.tokens[self.index]
        self.index += 1
        return token

    def _error(self, message: str, position: int):
        raise ExprParseError(message, self.src, position)

    def parse(self) -> Expr:
        node = self._expr()
        kind, value, pos = self._peek()
        if kind != "end":
            if value == ")":
                self._error("Unbalanced ')'", pos)
            self._error(f"Unexpected trailing token {value!r}", pos)
        return node

    def _expr(self) -> Expr:
        node = self._term()
        while self._peek()[0] == "op" and self._peek()[1] in "+-":
            op = self._advance()[1]
            node = BinOp(op, node, self._term())
        return node

    def _term(self) -> Expr:
        node = self._unary()
        while self._peek()[0] == "op" and self._peek()[1] in "*/":
            op = self._advance()[1]
            node = BinOp(op, node, self._unary())
        return node

    def _unary(self) -> Expr:
        kind, value, _ = self._peek()
        if kind == "op" and value == "-":
            self._advance()
            return Neg(self._unary())
        return self._power()

    def _power(self) -> Expr:
        base = self._atom()
        if self._peek()[0] == "op" and self._peek()[1] == "^":
            self._advance()
            return BinOp("^", base, self._unary())
        return base

    def _atom(self) -> Expr:
        kind, value, pos = self._advance()
        if kind == "number":
            number = float(value)
            if not np.isfinite(number):
                self._error(f"Numeric literal {value!r} overflows", pos)
            return Num(number)
        if kind == "name":
            if self._peek()[0] == "op" and self._peek()[1] == "(":
                if value not in FUNCTIONS:
                    self._error(f"Unknown function {value!r}", pos)
                self._advance()
                arg = self._expr()
                _, closing, close_pos = self._peek()
                if closing != ")":
                    self._error("Unbalanced '(': expected ')'", close_pos)
                self._advance()
                return Call(value, arg)
            return Var(value)
        if kind == "op" and value == "(":
            node = self._expr()
            _, closing, close_pos = self._peek()
            if closing != ")":
                self._error("Unbalanced '(': expected ')'", close_pos)
            self._advance()
            return node
        if kind == "end":
            self._error("Unexpected end of expression", pos)
        self._error(f"Unexpected token {value!r}", pos)


def parse(src: str) -> Expr:
    """Parse expression text into an immutable syntax tree."""
    if not isinstance(src, str):
        raise ExprParseError("Expression must be text", None, 0)
    try:
        return _Parser(src).parse()
    except RecursionError:
        raise ExprParseError("Expression is nested too deeply", src, 0)


def _children(expr: Expr) -> Tuple[Expr, ...]:
    if isinstance(expr, Neg):
        return (expr.operand,)
    if isinstance(expr, Call):
        return (expr.arg,)
    if isinstance(expr, BinOp):
        return (expr.left, expr.right)
    return ()


def _fold(expr: Expr, visit: Callable[[Expr, List], object]):
    """Bottom-up walk over an explicit stack; ``visit`` gets a node and its children's results.

    Long operator chains parse into trees deeper than the interpreter's
    recursion limit, so no walker here recurses.
    """
    results: Dict[int, object] = {}
    stack = [(expr, False)]
    while stack:
        node, expanded = stack.pop()
        children = _children(node)
        if expanded:
            results[id(node)] = visit(node, [results[id(c)] for c in children])
            continue
        stack.append((node, True))
        stack.extend((child, False) for child in reversed(children))
    return results[id(expr)]


def variables(expr: Expr) -> FrozenSet[str]:
    """Free variable names referenced by an expression."""
    def visit(node: Expr, found: List[FrozenSet[str]]) -> FrozenSet[str]:
        if isinstance(node, Var):
            return frozenset((node.name,))
        return frozenset().union(*found)
    return _fold(expr, visit)


def to_source(expr: Expr) -> str:
    """Canonical, fully parenthesized text that parses back to the same tree."""
    def visit(node: Expr, parts: List[str]) -> str:
        if isinstance(node, Num):
            return repr(float(node.value))
        if isinstance(node, Var):
            return node.name
        if isinstance(node, Neg):
            return f"(-{parts[0]})"
        if isinstance(node, Call):
            return f"{node.func}({parts[0]})"
        return f"({parts[0]} {node.op} {parts[1]})"
    return _fold(expr, visit)


def _fail(message: str, expr: Expr, bindings) -> None:
    raise EvaluationError(message, expression=to_source(expr), bindings=dict(bindings))


def _check_finite(value, expr: Expr, bindings):
    if not np.all(np.isfinite(value)):
        _fail("Result is not finite (overflow)", expr, bindings)
    return value


def _apply(expr: Expr, operands: List, bindings) -> Union[float, np.ndarray]:
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Var):
        if expr.name not in bindings:
            _fail(f"Unbound variable {expr.name!r}", expr, bindings)
        return bindings[expr.name]
    if isinstance(expr, Neg):
        return -operands[0]
    if isinstance(expr, Call):
        arg = operands[0]
        if expr.func == "sqrt" and np.any(np.asarray(arg) < 0):
            _fail("sqrt of a negative number", expr, bindings)
        return _check_finite(FUNCTIONS[expr.func](arg), expr, bindings)

    left, right = operands
    if expr.op == "+":
        return _check_finite(left + right, expr, bindings)
    if expr.op == "-":
        return _check_finite(left - right, expr, bindings)
    if expr.op == "*":
        return _check_finite(left * right, expr, bindings)
    if expr.op == "/":
        if np.any(np.asarray(right) == 0):
            _fail("Division by zero", expr, bindings)
        return _check_finite(left / right, expr, bindings)

    # integer powers only
    exponent = np.asarray(right, dtype=float)
    if np.any(exponent != np.round(exponent)):
        _fail("Exponent must be an integer", expr, bindings)
    if np.any((np.asarray(left) == 0) & (exponent < 0)):
        _fail("Division by zero (zero to a negative power)", expr, bindings)
    return _check_finite(np.power(np.asarray(left, dtype=float), exponent), expr, bindings)


def evaluate(expr: Expr, bindings: Dict[str, Union[float, np.ndarray]]) -> Union[float, np.ndarray]:
    """Evaluate with scalar or array bindings; arrays evaluate elementwise.

    Domain faults (sqrt of a negative, division by zero, non-integer
    exponent, overflow, unbound variable) raise EvaluationError instead of
    producing NaN or inf.
    """
    with np.errstate(all="ignore"):
        value = _fold(expr, lambda node, operands: _apply(node, operands, bindings))
    if np.ndim(value) == 0:
        return float(value)
    return np.asarray(value, dtype=float)
