"""Symbolic right-hand sides: a closed expression grammar, exact partial
derivatives and point evaluation.

Expressions are immutable trees.  Simplification is deliberately shallow
(constant folding and 0/1 elimination) so that differentiation never changes
the domain on which an expression can be evaluated.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

UNARY = ("neg", "sin", "cos", "exp", "log", "sqrt", "atan", "tanh")
BINARY = ("add", "sub", "mul", "div", "pow")

MAX_DERIVATIVE_ORDER = 64


class SingularEvaluation(ArithmeticError):
    """An expression produced a non-finite value at the requested point."""


class DerivativeOrderError(ValueError):
    """A code asked for more derivatives than the configured cap."""


@dataclass(frozen=True, eq=True)
class Expr:
    kind: str
    value: float | int | None = None
    children: tuple["Expr", ...] = ()
    _hash: int = field(default=0, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind == "const":
            arity = 0
        elif self.kind == "var":
            arity = 0
            if not isinstance(self.value, int) or self.value < 0:
                raise ValueError(f"variable axis must be a non-negative int, got {self.value!r}")
        elif self.kind in UNARY:
            arity = 1
        elif self.kind in BINARY:
            arity = 2 if self.kind != "pow" else 1
            if self.kind == "pow" and not isinstance(self.value, int):
                raise ValueError("only integer powers are supported")
        else:
            raise ValueError(f"unknown node kind {self.kind!r}")
        if len(self.children) != arity:
            raise ValueError(f"{self.kind} expects {arity} children, got {len(self.children)}")
        object.__setattr__(self, "_hash", hash((self.kind, self.value, self.children)))

    def __hash__(self):
        return self._hash

    # construction sugar
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __pow__(self, n):
        return power(self, n)

    def __neg__(self):
        return neg(self)

    def __str__(self):
        return to_string(self)

    @property
    def is_const(self) -> bool:
        return self.kind == "const"

    def max_axis(self) -> int:
        """Largest variable index used, or -1 for a constant expression."""
        if self.kind == "var":
            return self.value
        return max((c.max_axis() for c in self.children), default=-1)

    def polynomial_degree(self) -> int | None:
        """Total degree if the expression is a polynomial, else None."""
        k = self.kind
        if k == "const":
            return 0
        if k == "var":
            return 1
        if k == "neg":
            return self.children[0].polynomial_degree()
        if k in ("add", "sub", "mul"):
            a, b = (c.polynomial_degree() for c in self.children)
            if a is None or b is None:
                return None
            return max(a, b) if k != "mul" else a + b
        if k == "pow" and self.value >= 0:
            a = self.children[0].polynomial_degree()
            return None if a is None else a * self.value
        return None


def const(x) -> Expr:
    return Expr("const", float(x))


def var(i: int) -> Expr:
    return Expr("var", int(i))


ZERO = const(0.0)
ONE = const(1.0)


def as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, (int, float, np.floating, np.integer)):
        return const(x)
    raise TypeError(f"cannot convert {type(x).__name__} to Expr")


def _is(e: Expr, x: float) -> bool:
    return e.kind == "const" and e.value == x


_UNARY_FN = {
    "neg": lambda x: -x,
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
    "atan": math.atan,
    "tanh": math.tanh,
}


def _fold_unary(kind, a):
    try:
        return const(_UNARY_FN[kind](a.value))
    except (ValueError, OverflowError):
        return None


def unary(kind: str, a: Expr) -> Expr:
    if a.is_const:
        folded = _fold_unary(kind, a)
        if folded is not None and math.isfinite(folded.value):
            return folded
    if kind == "neg" and a.kind == "neg":
        return a.children[0]
    return Expr(kind, None, (a,))


def neg(a):
    return unary("neg", as_expr(a))


def sin(a):
    return unary("sin", as_expr(a))


def cos(a):
    return unary("cos", as_expr(a))


def exp(a):
    return unary("exp", as_expr(a))


def log(a):
    return unary("log", as_expr(a))


def sqrt(a):
    return unary("sqrt", as_expr(a))


def atan(a):
    return unary("atan", as_expr(a))


def tanh(a):
    return unary("tanh", as_expr(a))


def add(a: Expr, b: Expr) -> Expr:
    if a.is_const and b.is_const:
        return const(a.value + b.value)
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    return Expr("add", None, (a, b))


def sub(a: Expr, b: Expr) -> Expr:
    if a.is_const and b.is_const:
        return const(a.value - b.value)
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    return Expr("sub", None, (a, b))


def mul(a: Expr, b: Expr) -> Expr:
    if a.is_const and b.is_const:
        return const(a.value * b.value)
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    return Expr("mul", None, (a, b))


def div(a: Expr, b: Expr) -> Expr:
    if a.is_const and b.is_const and b.value != 0.0:
        return const(a.value / b.value)
    if _is(a, 0.0) and not _is(b, 0.0):
        return ZERO
    if _is(b, 1.0):
        return a
    return Expr("div", None, (a, b))


def power(a: Expr, n: int) -> Expr:
    if isinstance(n, float) and n.is_integer():
        n = int(n)
    if not isinstance(n, (int, np.integer)):
        raise ValueError("only integer powers are supported")
    n = int(n)
    a = as_expr(a)
    if n == 0:
        return ONE
    if n == 1:
        return a
    if a.is_const and (a.value != 0.0 or n > 0):
        return const(a.value**n)
    return Expr("pow", n, (a,))


def differentiate(e: Expr, axis: int) -> Expr:
    """Exact partial derivative of `e` with respect to variable `axis`."""
    memo: dict[Expr, Expr] = {}

    def d(x: Expr) -> Expr:
        hit = memo.get(x)
        if hit is not None:
            return hit
        k = x.kind
        if k == "const":
            r = ZERO
        elif k == "var":
            r = ONE if x.value == axis else ZERO
        elif k == "add":
            r = add(d(x.children[0]), d(x.children[1]))
        elif k == "sub":
            r = sub(d(x.children[0]), d(x.children[1]))
        elif k == "mul":
            u, v = x.children
            r = add(mul(d(u), v), mul(u, d(v)))
        elif k == "div":
            u, v = x.children
            du, dv = d(u), d(v)
            if _is(dv, 0.0):
                r = div(du, v)
            else:
                r = div(sub(mul(du, v), mul(u, dv)), power(v, 2))
        elif k == "pow":
            (u,) = x.children
            n = x.value
            r = mul(mul(const(n), power(u, n - 1)), d(u))
        else:
            (u,) = x.children
            du = d(u)
            if _is(du, 0.0):
                r = ZERO
            elif k == "neg":
                r = neg(du)
            elif k == "sin":
                r = mul(cos(u), du)
            elif k == "cos":
                r = neg(mul(sin(u), du))
            elif k == "exp":
                r = mul(x, du)
            elif k == "log":
                r = div(du, u)
            elif k == "sqrt":
                r = div(du, mul(const(2.0), x))
            elif k == "atan":
                r = div(du, add(ONE, power(u, 2)))
            elif k == "tanh":
                r = mul(sub(ONE, power(x, 2)), du)
            else:  # pragma: no cover - grammar is closed
                raise AssertionError(k)
        memo[x] = r
        return r

    return d(e)


def _evaluate(e: Expr, point: Sequence[float], memo: dict) -> float:
    hit = memo.get(e)
    if hit is not None:
        return hit
    k = e.kind
    if k == "const":
        r = e.value
    elif k == "var":
        r = float(point[e.value])
    elif k == "pow":
        base = _evaluate(e.children[0], point, memo)
        r = base**e.value
    elif k in BINARY:
        a = _evaluate(e.children[0], point, memo)
        b = _evaluate(e.children[1], point, memo)
        if k == "add":
            r = a + b
        elif k == "sub":
            r = a - b
        elif k == "mul":
            r = a * b
        else:
            r = a / b
    else:
        r = _UNARY_FN[k](_evaluate(e.children[0], point, memo))
    memo[e] = r
    return r


def evaluate(e: Expr, point: Sequence[float]) -> float:
    """Evaluate in double precision; non-finite results raise SingularEvaluation."""
    try:
        r = _evaluate(e, point, {})
    except (ZeroDivisionError, ValueError, OverflowError) as exc:
        raise SingularEvaluation(f"{e} is singular at {tuple(point)}: {exc}") from None
    if isinstance(r, complex) or not math.isfinite(r):
        raise SingularEvaluation(f"{e} is singular at {tuple(point)}")
    return float(r)


_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}


def to_string(e: Expr) -> str:
    k = e.kind
    if k == "const":
        v = e.value
        s = repr(int(v)) if float(v).is_integer() and abs(v) < 1e15 else repr(v)
        return s if v >= 0 else f"({s})"
    if k == "var":
        return f"y{e.value}"
    if k == "pow":
        (u,) = e.children
        inner = to_string(u)
        if u.kind in _PREC:
            inner = f"({inner})"
        return f"{inner}^{e.value}"
    if k == "neg":
        (u,) = e.children
        inner = to_string(u)
        if u.kind in ("add", "sub"):
            inner = f"({inner})"
        return f"-{inner}"
    if k in UNARY:
        return f"{k}({to_string(e.children[0])})"
    a, b = e.children
    op = {"add": "+", "sub": "-", "mul": "*", "div": "/"}[k]
    p = _PREC[k]
    sa, sb = to_string(a), to_string(b)
    if a.kind in _PREC and _PREC[a.kind] < p:
        sa = f"({sa})"
    if b.kind in _PREC and (_PREC[b.kind] < p or (_PREC[b.kind] == p and k in ("sub", "div"))):
        sb = f"({sb})"
    return f"{sa} {op} {sb}"


_FUNCS = {"sin": sin, "cos": cos, "exp": exp, "log": log, "sqrt": sqrt, "atan": atan, "tanh": tanh}


def parse(text: str, dimension: int | None = None) -> Expr:
    """Parse infix text such as ``(y1 + y0)/(y1 - y0)`` or ``y0^2``.

    Variables are ``y0 .. y{d-1}``; ``^`` takes an integer exponent.
    """
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse expression {text!r}: {exc.msg}") from None

    def walk(node) -> Expr:
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return const(node.value)
        if isinstance(node, ast.Name):
            name = node.id
            if name.startswith("y") and name[1:].isdigit():
                axis = int(name[1:])
                if dimension is not None and axis >= dimension:
                    raise ValueError(f"{name} out of range for dimension {dimension}")
                return var(axis)
            raise ValueError(f"unknown name {name!r} in {text!r}")
        if isinstance(node, ast.UnaryOp):
            operand = walk(node.operand)
            if isinstance(node.op, ast.USub):
                return neg(operand)
            if isinstance(node.op, ast.UAdd):
                return operand
        if isinstance(node, ast.BinOp):
            if isinstance(node.op, ast.Pow):
                exponent = walk(node.right)
                if not exponent.is_const or not float(exponent.value).is_integer():
                    raise ValueError(f"non-integer power in {text!r}")
                return power(walk(node.left), int(exponent.value))
            a, b = walk(node.left), walk(node.right)
            ops = {ast.Add: add, ast.Sub: sub, ast.Mult: mul, ast.Div: div}
            for op_type, fn in ops.items():
                if isinstance(node.op, op_type):
                    return fn(a, b)
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
            fn = _FUNCS.get(node.func.id)
            if fn is not None and len(node.args) == 1 and not node.keywords:
                return fn(walk(node.args[0]))
        raise ValueError(f"unsupported syntax in {text!r}: {ast.dump(node)[:60]}")

    return walk(tree)


class RhsSystem:
    """Autonomous system y' = f(y) with initial state y0 at time t0.

    ``time_axis`` marks the coordinate that carries time after autonomization
    (its component is f == 1 and its value is known exactly).
    """

    def __init__(self, components, y0, t0=0.0, time_axis=None, name=""):
        comps = [parse(c) if isinstance(c, str) else as_expr(c) for c in components]
        self.components: tuple[Expr, ...] = tuple(comps)
        self.y0 = np.array(y0, dtype=float).reshape(-1)
        self.t0 = float(t0)
        self.time_axis = time_axis
        self.name = name
        d = len(self.components)
        if d == 0:
            raise ValueError("system needs at least one component")
        if self.y0.shape != (d,):
            raise ValueError(f"y0 has {self.y0.size} entries, expected {d}")
        for i, c in enumerate(self.components):
            if c.max_axis() >= d:
                raise ValueError(f"component {i} uses y{c.max_axis()} but dimension is {d}")
        if time_axis is not None and not (0 <= time_axis < d):
            raise ValueError("time_axis out of range")

    @property
    def dimension(self) -> int:
        return len(self.components)

    def with_initial(self, y0, t0) -> "RhsSystem":
        return RhsSystem(self.components, y0, t0, self.time_axis, self.name)

    def rhs(self, y) -> np.ndarray:
        return np.array([evaluate(c, y) for c in self.components])

    def __repr__(self):
        comps = ", ".join(str(c) for c in self.components)
        return f"RhsSystem([{comps}], y0={self.y0.tolist()}, t0={self.t0})"
