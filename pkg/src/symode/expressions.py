"""Immutable symbolic expression trees for ODE right-hand sides.

An :class:`Expression` is an operator tree over variables ``x_0 .. x_{d-1}``
and finite real constants.  Supported operators:

* binary: ``add``, ``sub``, ``mul``, ``div``
* unary:  ``neg``, ``sin``, ``cos``, ``exp``, ``log``, ``sqrt``, ``inv``,
  ``pow2``, ``pow3``

Trees evaluate faithfully under IEEE semantics (log of a negative number is
NaN, division by zero is inf/NaN); non-finite results are values, not errors,
and are filtered by callers that care.  Symbolic partial derivatives are
exact, with light identity simplification (``0*e -> 0``, ``e+0 -> e``,
``1*e -> e``) and no further canonicalization.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BINARY_OPS",
    "UNARY_OPS",
    "Expression",
    "OdeSystem",
    "ParseError",
    "const",
    "var",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "sin",
    "cos",
    "exp",
    "log",
    "sqrt",
    "inv",
    "pow2",
    "pow3",
    "evaluate",
    "evaluate_many",
    "eval_system",
    "eval_system_many",
    "partial_derivative",
    "free_variables",
    "count_nodes",
    "depth",
    "substitute",
    "to_prefix",
    "from_prefix",
    "to_prefix_text",
    "to_infix",
    "parse_prefix",
    "parse_infix",
    "parse_expression",
]

BINARY_OPS = ("add", "sub", "mul", "div")
UNARY_OPS = ("neg", "sin", "cos", "exp", "log", "sqrt", "inv", "pow2", "pow3")

_ARITY = {op: 2 for op in BINARY_OPS} | {op: 1 for op in UNARY_OPS}
_VAR_RE = re.compile(r"^x_?(\d+)$")


class ParseError(ValueError):
    """Raised on malformed prefix or infix expression text."""

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message)
        self.position = position


@dataclass(frozen=True)
class Expression:
    """One node of an immutable expression tree.

    ``op`` is an operator name, ``"var"`` or ``"const"``.  Structural
    equality (``==``) compares the whole tree, with exact float equality
    on constants.
    """

    op: str
    args: tuple["Expression", ...] = ()
    value: float = 0.0
    index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))
        if self.op == "const":
            if self.args:
                raise ValueError("constant node takes no children")
            if not np.isfinite(self.value):
                raise ValueError(f"constant must be finite, got {self.value}")
        elif self.op == "var":
            if self.args:
                raise ValueError("variable node takes no children")
            if self.index < 0:
                raise ValueError(f"variable index must be >= 0, got {self.index}")
        elif self.op in _ARITY:
            if len(self.args) != _ARITY[self.op]:
                raise ValueError(
                    f"{self.op} takes {_ARITY[self.op]} children, got {len(self.args)}"
                )
        else:
            raise ValueError(f"unknown operator {self.op!r}")

    @property
    def is_leaf(self) -> bool:
        return self.op in ("const", "var")

    def __str__(self) -> str:
        return to_infix(self)


def const(value: float) -> Expression:
    return Expression("const", value=float(value))


def var(index: int) -> Expression:
    return Expression("var", index=int(index))


def add(a: Expression, b: Expression) -> Expression:
    return Expression("add", (a, b))


def sub(a: Expression, b: Expression) -> Expression:
    return Expression("sub", (a, b))


def mul(a: Expression, b: Expression) -> Expression:
    return Expression("mul", (a, b))


def div(a: Expression, b: Expression) -> Expression:
    return Expression("div", (a, b))


def neg(a: Expression) -> Expression:
    return Expression("neg", (a,))


def sin(a: Expression) -> Expression:
    return Expression("sin", (a,))


def cos(a: Expression) -> Expression:
    return Expression("cos", (a,))


def exp(a: Expression) -> Expression:
    return Expression("exp", (a,))


def log(a: Expression) -> Expression:
    return Expression("log", (a,))


def sqrt(a: Expression) -> Expression:
    return Expression("sqrt", (a,))


def inv(a: Expression) -> Expression:
    return Expression("inv", (a,))


def pow2(a: Expression) -> Expression:
    return Expression("pow2", (a,))


def pow3(a: Expression) -> Expression:
    return Expression("pow3", (a,))


@dataclass(frozen=True)
class OdeSystem:
    """An autonomous first-order system: d equations over x_0..x_{d-1}."""

    equations: tuple[Expression, ...]

    def __post_init__(self):
        eqs = tuple(self.equations)
        object.__setattr__(self, "equations", eqs)
        if not eqs:
            raise ValueError("system needs at least one equation")
        d = len(eqs)
        for i, eq in enumerate(eqs):
            bad = [k for k in free_variables(eq) if k >= d]
            if bad:
                raise ValueError(
                    f"equation {i} references x_{max(bad)} but dimension is {d}"
                )

    @property
    def dimension(self) -> int:
        return len(self.equations)

    def __str__(self) -> str:
        return "; ".join(
            f"dx_{i}/dt = {to_infix(eq)}" for i, eq in enumerate(self.equations)
        )


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------

_UNARY_FN = {
    "neg": np.negative,
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "inv": np.reciprocal,
    "pow2": np.square,
    "pow3": lambda x: x * x * x,
}
_BINARY_FN = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
}


def _eval(expr: Expression, points: np.ndarray):
    if expr.op == "const":
        return np.float64(expr.value)
    if expr.op == "var":
        return points[..., expr.index]
    if expr.op in _BINARY_FN:
        return _BINARY_FN[expr.op](_eval(expr.args[0], points), _eval(expr.args[1], points))
    return _UNARY_FN[expr.op](_eval(expr.args[0], points))


def evaluate(expr: Expression, point) -> float:
    """Evaluate ``expr`` at one point (a length-d vector).

    Non-finite results (division by zero, log of a negative, ...) are
    returned faithfully, never raised.
    """
    point = np.asarray(point, dtype=np.float64)
    with np.errstate(all="ignore"):
        return float(_eval(expr, point))


def evaluate_many(expr: Expression, points: np.ndarray) -> np.ndarray:
    """Vectorized :func:`evaluate` over an ``(n, d)`` array of points."""
    points = np.asarray(points, dtype=np.float64)
    with np.errstate(all="ignore"):
        out = _eval(expr, points)
    return np.broadcast_to(np.asarray(out, dtype=np.float64), points.shape[:-1]).copy()


def eval_system(system: OdeSystem, point) -> np.ndarray:
    """Evaluate every equation at one point; returns a length-d vector."""
    point = np.asarray(point, dtype=np.float64)
    if point.shape != (system.dimension,):
        raise ValueError(
            f"point has shape {point.shape}, expected ({system.dimension},)"
        )
    with np.errstate(all="ignore"):
        return np.array([_eval(eq, point) for eq in system.equations], dtype=np.float64)


def eval_system_many(system: OdeSystem, points: np.ndarray) -> np.ndarray:
    """Vectorized :func:`eval_system` over ``(n, d)`` points -> ``(n, d)``."""
    points = np.asarray(points, dtype=np.float64)
    return np.stack(
        [evaluate_many(eq, points) for eq in system.equations], axis=-1
    )


# --------------------------------------------------------------------------
# Symbolic differentiation (light identity folding, no canonicalization)
# --------------------------------------------------------------------------


def _is_const(e: Expression, v: float | None = None) -> bool:
    return e.op == "const" and (v is None or e.value == v)


def _fneg(a):
    if _is_const(a):
        return const(-a.value if a.value != 0 else 0.0)
    return neg(a)


def _fadd(a, b):
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return add(a, b)


def _fsub(a, b):
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return _fneg(b)
    return sub(a, b)


def _fmul(a, b):
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return const(0.0)
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return mul(a, b)


def _fdiv(a, b):
    if _is_const(a, 0.0):
        return const(0.0)
    if _is_const(b, 1.0):
        return a
    return div(a, b)


def partial_derivative(expr: Expression, var_index: int) -> Expression:
    """Exact symbolic derivative of ``expr`` with respect to ``x_{var_index}``."""
    if expr.op == "const":
        return const(0.0)
    if expr.op == "var":
        return const(1.0 if expr.index == var_index else 0.0)

    if expr.op in BINARY_OPS:
        a, b = expr.args
        da = partial_derivative(a, var_index)
        db = partial_derivative(b, var_index)
        if expr.op == "add":
            return _fadd(da, db)
        if expr.op == "sub":
            return _fsub(da, db)
        if expr.op == "mul":
            return _fadd(_fmul(da, b), _fmul(a, db))
        # quotient rule: (a'b - ab') / b^2
        return _fdiv(_fsub(_fmul(da, b), _fmul(a, db)), pow2(b))

    (a,) = expr.args
    da = partial_derivative(a, var_index)
    if expr.op == "neg":
        return _fneg(da)
    if expr.op == "sin":
        return _fmul(cos(a), da)
    if expr.op == "cos":
        return _fmul(_fneg(sin(a)), da)
    if expr.op == "exp":
        return _fmul(exp(a), da)
    if expr.op == "log":
        return _fdiv(da, a)
    if expr.op == "sqrt":
        return _fdiv(da, _fmul(const(2.0), sqrt(a)))
    if expr.op == "inv":
        return _fneg(_fdiv(da, pow2(a)))
    if expr.op == "pow2":
        return _fmul(_fmul(const(2.0), a), da)
    # pow3
    return _fmul(_fmul(const(3.0), pow2(a)), da)


# --------------------------------------------------------------------------
# Structure helpers
# --------------------------------------------------------------------------


def free_variables(expr: Expression) -> set[int]:
    if expr.op == "var":
        return {expr.index}
    out: set[int] = set()
    for a in expr.args:
        out |= free_variables(a)
    return out


def count_nodes(expr: Expression) -> int:
    return 1 + sum(count_nodes(a) for a in expr.args)


def depth(expr: Expression) -> int:
    """Edge count from the root to the deepest node (a leaf has depth 0)."""
    if expr.is_leaf:
        return 0
    return 1 + max(depth(a) for a in expr.args)


def substitute(expr: Expression, replacements: dict[int, Expression]) -> Expression:
    """Replace each variable ``x_k`` in ``replacements`` with its expression."""
    if expr.op == "var":
        return replacements.get(expr.index, expr)
    if expr.op == "const":
        return expr
    return Expression(expr.op, tuple(substitute(a, replacements) for a in expr.args))


# --------------------------------------------------------------------------
# Prefix serialization
# --------------------------------------------------------------------------


def to_prefix(expr: Expression) -> list:
    """Pre-order symbol list; operators and variables as strings, constants
    as floats, e.g. ``['add', 'x_0', 'mul', 0.1, 'x_1']``."""
    out: list = []
    _prefix_walk(expr, out)
    return out


def _prefix_walk(expr, out):
    if expr.op == "const":
        out.append(expr.value)
    elif expr.op == "var":
        out.append(f"x_{expr.index}")
    else:
        out.append(expr.op)
        for a in expr.args:
            _prefix_walk(a, out)


def from_prefix(symbols: list) -> Expression:
    """Rebuild a tree from a pre-order symbol list (inverse of :func:`to_prefix`)."""
    expr, pos = _parse_prefix(symbols, 0)
    if pos != len(symbols):
        raise ParseError(f"unconsumed input at position {pos}", pos)
    return expr


def _parse_prefix(symbols, pos):
    if pos >= len(symbols):
        raise ParseError(f"incomplete expression at position {pos}", pos)
    tok = symbols[pos]
    if isinstance(tok, (int, float)) and not isinstance(tok, bool):
        if not np.isfinite(tok):
            raise ParseError(f"non-finite constant at position {pos}", pos)
        return const(float(tok)), pos + 1
    if not isinstance(tok, str):
        raise ParseError(f"unknown symbol {tok!r} at position {pos}", pos)
    m = _VAR_RE.match(tok)
    if m:
        return var(int(m.group(1))), pos + 1
    if tok in BINARY_OPS:
        a, pos = _parse_prefix(symbols, pos + 1)
        b, pos = _parse_prefix(symbols, pos)
        return Expression(tok, (a, b)), pos
    if tok in UNARY_OPS:
        a, pos = _parse_prefix(symbols, pos + 1)
        return Expression(tok, (a,)), pos
    raise ParseError(f"unknown symbol {tok!r} at position {pos}", pos)


def to_prefix_text(expr: Expression) -> str:
    """Prefix rendering as whitespace-separated text, constants via repr."""
    return " ".join(repr(s) if isinstance(s, float) else s for s in to_prefix(expr))


def parse_prefix(text: str) -> Expression:
    """Parse whitespace-separated prefix text, e.g. ``"add neg x_1 mul 0.1 x_0"``."""
    symbols: list = []
    for raw in text.split():
        try:
            symbols.append(float(raw))
        except ValueError:
            symbols.append(raw)
    return from_prefix(symbols)


# --------------------------------------------------------------------------
# Infix rendering and parsing (report text / CLI input)
# --------------------------------------------------------------------------

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 1}


def _fmt_const(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def to_infix(expr: Expression) -> str:
    """Human-readable rendering, e.g. ``2.1*x_0 - 0.5*x_0^2``."""
    return _infix(expr, 0)


def _infix(e: Expression, parent_prec: int) -> str:
    if e.op == "const":
        s = _fmt_const(e.value)
        return f"({s})" if e.value < 0 and parent_prec > 0 else s
    if e.op == "var":
        return f"x_{e.index}"
    if e.op in ("pow2", "pow3"):
        base = _infix(e.args[0], 3)
        if not e.args[0].is_leaf:
            base = f"({base})"
        return f"{base}^{2 if e.op == 'pow2' else 3}"
    if e.op == "inv":
        inner = _infix(e.args[0], 3)
        if not e.args[0].is_leaf:
            inner = f"({inner})"
        # reads as a division, so it binds like one
        return f"(1/{inner})" if parent_prec > 2 else f"1/{inner}"
    if e.op == "neg":
        inner = _infix(e.args[0], 2)
        return f"-{inner}" if parent_prec <= 1 else f"(-{inner})"
    if e.op in ("sin", "cos", "exp", "log", "sqrt"):
        return f"{e.op}({_infix(e.args[0], 0)})"

    prec = _PREC[e.op]
    lhs = _infix(e.args[0], prec)
    # right operand needs parens at equal precedence for non-associative ops
    rhs = _infix(e.args[1], prec + (1 if e.op in ("sub", "div") else 0))
    symbol = {"add": " + ", "sub": " - ", "mul": "*", "div": "/"}[e.op]
    text = f"{lhs}{symbol}{rhs}"
    return f"({text})" if prec < parent_prec else text


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[()+\-*/^]))"
)

_FUNCS = {"sin", "cos", "exp", "log", "sqrt", "inv"}


def _tokenize_infix(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            if text[pos:].strip() == "":
                break
            raise ParseError(f"unexpected character {text[pos]!r} at position {pos}", pos)
        if m.lastgroup == "num":
            tokens.append(("num", float(m.group("num"))))
        elif m.lastgroup == "name":
            tokens.append(("name", m.group("name")))
        else:
            op = m.group("op")
            tokens.append(("op", "^" if op == "**" else op))
        pos = m.end()
    return tokens


class _InfixParser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else (None, None)

    def take(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def expect_op(self, symbol):
        kind, val = self.take()
        if kind != "op" or val != symbol:
            raise ParseError(f"expected {symbol!r} at token {self.pos - 1}", self.pos - 1)

    def parse(self) -> Expression:
        e = self.expr()
        if self.pos != len(self.tokens):
            raise ParseError(f"trailing input at token {self.pos}", self.pos)
        return e

    def expr(self):
        e = self.term()
        while self.peek() == ("op", "+") or self.peek() == ("op", "-"):
            _, op = self.take()
            rhs = self.term()
            e = add(e, rhs) if op == "+" else sub(e, rhs)
        return e

    def term(self):
        e = self.factor()
        while self.peek() == ("op", "*") or self.peek() == ("op", "/"):
            _, op = self.take()
            rhs = self.factor()
            e = mul(e, rhs) if op == "*" else div(e, rhs)
        return e

    def factor(self):
        if self.peek() == ("op", "-"):
            self.take()
            return neg(self.factor())
        if self.peek() == ("op", "+"):
            self.take()
            return self.factor()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() == ("op", "^"):
            self.take()
            sign = 1
            if self.peek() == ("op", "-"):
                self.take()
                sign = -1
            kind, val = self.take()
            if kind != "num" or val != int(val):
                raise ParseError(f"expected integer exponent at token {self.pos - 1}", self.pos - 1)
            e = sign * int(val)
            if e == 2:
                return pow2(base)
            if e == 3:
                return pow3(base)
            if e == -1:
                return inv(base)
            if e == 1:
                return base
            raise ParseError(f"unsupported exponent {e} (only 2, 3, -1, 1)", self.pos - 1)
        return base

    def atom(self):
        kind, val = self.take()
        if kind == "num":
            return const(val)
        if kind == "name":
            m = _VAR_RE.match(val)
            if m:
                return var(int(m.group(1)))
            if val in _FUNCS:
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(")")
                return Expression(val, (arg,)) if val != "inv" else inv(arg)
            raise ParseError(f"unknown identifier {val!r} at token {self.pos - 1}", self.pos - 1)
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect_op(")")
            return e
        raise ParseError(f"unexpected token at position {self.pos - 1}", self.pos - 1)


def parse_infix(text: str) -> Expression:
    """Parse infix text such as ``"2.1*x_0 - 0.5*x_0^2"``."""
    tokens = _tokenize_infix(text)
    if not tokens:
        raise ParseError("empty expression", 0)
    return _InfixParser(tokens).parse()


def parse_expression(text: str) -> Expression:
    """Parse one equation given either as prefix or infix text."""
    try:
        return parse_prefix(text)
    except ParseError as prefix_err:
        try:
            return parse_infix(text)
        except ParseError:
            raise ParseError(
                f"could not parse {text!r} as prefix ({prefix_err}) or infix notation"
            ) from None
