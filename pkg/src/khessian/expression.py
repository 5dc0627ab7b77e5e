"""A small expression language for source terms and boundary data.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := base ('^' integer)?
    base   := number | variable | function '(' expr ')' | '(' expr ')' | '-' base

Variables are ``x1..xn``, ``t`` and ``z``; functions are ``exp`` and ``abs``.
Note that ``-x^2`` parses as ``(-x)^2`` under this grammar.

Trees evaluate on numpy arrays with broadcasting and can be differentiated
symbolically, which is how manufactured problems get exact derivatives.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ExpressionError

FUNCTIONS = ("exp", "abs")
_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


def default_variables(n: int = 8) -> tuple[str, ...]:
    return tuple(f"x{i}" for i in range(1, n + 1)) + ("t", "z")


class Expr:
    """Base node. Subclasses are frozen dataclasses; ``pos`` is not compared."""

    def evaluate(self, env: Mapping[str, object]):
        raise NotImplementedError

    def diff(self, var: str) -> "Expr":
        raise NotImplementedError

    def variables(self) -> frozenset:
        return frozenset()

    def __call__(self, **env):
        return self.evaluate(env)


@dataclass(frozen=True)
class Num(Expr):
    value: float
    pos: int = field(default=-1, compare=False)

    def evaluate(self, env):
        return self.value

    def diff(self, var):
        return ZERO

    def __str__(self):
        return repr(float(self.value))


@dataclass(frozen=True)
class Var(Expr):
    name: str
    pos: int = field(default=-1, compare=False)

    def evaluate(self, env):
        try:
            return env[self.name]
        except KeyError:
            raise ExpressionError(f"no value bound for variable {self.name!r}", self.pos) from None

    def diff(self, var):
        return ONE if var == self.name else ZERO

    def variables(self):
        return frozenset([self.name])

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr
    pos: int = field(default=-1, compare=False)

    def evaluate(self, env):
        return -self.arg.evaluate(env)

    def diff(self, var):
        return neg(self.arg.diff(var))

    def variables(self):
        return self.arg.variables()

    def __str__(self):
        return "-" + _wrap_base(self.arg)


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr
    pos: int = field(default=-1, compare=False)

    def evaluate(self, env):
        a = self.left.evaluate(env)
        b = self.right.evaluate(env)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if np.any(np.asarray(b) == 0):
            raise ExpressionError("division by zero", self.pos)
        return a / b

    def diff(self, var):
        a, b = self.left, self.right
        da, db = a.diff(var), b.diff(var)
        if self.op == "+":
            return add(da, db)
        if self.op == "-":
            return sub(da, db)
        if self.op == "*":
            return add(mul(da, b), mul(a, db))
        # (a/b)' = a'/b - a b' / b^2
        return sub(div(da, b), div(mul(a, db), power(b, 2)))

    def variables(self):
        return self.left.variables() | self.right.variables()

    def __str__(self):
        left = str(self.left)
        right = str(self.right)
        # Left-associative: the right operand needs parentheses at equal precedence.
        if _prec(self.left) < _PREC[self.op]:
            left = f"({left})"
        if _prec(self.right) <= _PREC[self.op]:
            right = f"({right})"
        return f"{left} {self.op} {right}"


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int
    pos: int = field(default=-1, compare=False)

    def evaluate(self, env):
        return self.base.evaluate(env) ** self.exponent

    def diff(self, var):
        if self.exponent == 0:
            return ZERO
        inner = self.base.diff(var)
        return mul(mul(Num(float(self.exponent)), power(self.base, self.exponent - 1)), inner)

    def variables(self):
        return self.base.variables()

    def __str__(self):
        return f"{_wrap_base(self.base)}^{self.exponent}"


@dataclass(frozen=True)
class Call(Expr):
    func: str
    arg: Expr
    pos: int = field(default=-1, compare=False)

    def evaluate(self, env):
        return _FUNCS[self.func](self.arg.evaluate(env))

    def diff(self, var):
        inner = self.arg.diff(var)
        if self.func == "exp":
            return mul(self, inner)
        return mul(Call("sign", self.arg), inner)

    def variables(self):
        return self.arg.variables()

    def __str__(self):
        return f"{self.func}({self.arg})"


# sign only appears in derivatives of abs; it is not part of the input grammar.
_FUNCS = {"exp": np.exp, "abs": np.abs, "sign": np.sign}
ZERO = Num(0.0)
ONE = Num(1.0)
_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _prec(node):
    if isinstance(node, BinOp):
        return _PREC[node.op]
    return 3


def _wrap_base(node):
    s = str(node)
    if isinstance(node, (Num, Var, Call)):
        if isinstance(node, Num) and node.value < 0:
            return f"({s})"
        return s
    return f"({s})"


def _is(node, v):
    return isinstance(node, Num) and node.value == v


def add(a, b):
    if _is(a, 0):
        return b
    if _is(b, 0):
        return a
    return BinOp("+", a, b)


def sub(a, b):
    if _is(b, 0):
        return a
    if _is(a, 0):
        return neg(b)
    return BinOp("-", a, b)


def mul(a, b):
    if _is(a, 0) or _is(b, 0):
        return ZERO
    if _is(a, 1):
        return b
    if _is(b, 1):
        return a
    return BinOp("*", a, b)


def div(a, b):
    if _is(a, 0):
        return ZERO
    if _is(b, 1):
        return a
    return BinOp("/", a, b)


def neg(a):
    if _is(a, 0):
        return ZERO
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def power(a, p):
    if p == 0:
        return ONE
    if p == 1:
        return a
    return Pow(a, p)


class _Parser:
    def __init__(self, text, variables):
        self.text = text
        self.allowed = set(variables)
        self.tokens = self._tokenize(text)
        self.i = 0
        self.unknown = []

    @staticmethod
    def _tokenize(text):
        tokens = []
        pos = 0
        while pos < len(text):
            if text[pos:].strip() == "":
                break
            m = _TOKEN.match(text, pos)
            if m is None or m.end() == pos:
                bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
                raise ExpressionError(f"unexpected character {text[bad]!r}", bad)
            kind = m.lastgroup
            start = m.start(kind)
            tokens.append((kind, m.group(kind), start))
            pos = m.end()
        tokens.append(("end", "", len(text)))
        return tokens

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.take()
        if val != value or kind == "end":
            got = "end of input" if kind == "end" else repr(val)
            raise ExpressionError(f"expected {value!r}, got {got}", pos)

    def parse(self):
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExpressionError(f"unexpected token {val!r}", pos)
        if self.unknown:
            names = sorted(set(n for n, _ in self.unknown))
            raise ExpressionError(
                "unknown identifier(s): " + ", ".join(names), self.unknown[0][1], names
            )
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            _, op, pos = self.take()
            node = BinOp(op, node, self.term(), pos)
        return node

    def term(self):
        node = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            _, op, pos = self.take()
            node = BinOp(op, node, self.factor(), pos)
        return node

    def factor(self):
        node = self.base()
        if self.peek()[1] == "^" and self.peek()[0] == "op":
            _, _, pos = self.take()
            kind, val, vpos = self.take()
            if kind != "num" or not val.isdigit():
                raise ExpressionError("exponent must be a non-negative integer literal", vpos)
            node = Pow(node, int(val), pos)
        return node

    def base(self):
        kind, val, pos = self.take()
        if kind == "num":
            return Num(float(val), pos)
        if kind == "name":
            if val in FUNCTIONS or self.peek()[1] == "(":
                if val not in FUNCTIONS:
                    self.unknown.append((val, pos))
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(val, arg, pos)
            if val not in self.allowed:
                self.unknown.append((val, pos))
            return Var(val, pos)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "op" and val == "-":
            return Neg(self.base(), pos)
        got = "end of input" if kind == "end" else repr(val)
        raise ExpressionError(f"unexpected {got}", pos)


def parse_expression(text: str, variables=None) -> Expr:
    """Parse ``text`` into an expression tree.

    ``variables`` restricts the admissible identifiers (default: ``x1..x8, t, z``).
    Raises :class:`ExpressionError` with the byte offset of the problem.
    """
    if not isinstance(text, str):
        raise ExpressionError(f"expression must be a string, got {type(text).__name__}")
    return _Parser(text, default_variables() if variables is None else variables).parse()


def evaluate_on(expr: Expr, x, t, z=None):
    """Evaluate at points ``x`` (shape ``(..., n)``), time ``t`` and state ``z``.

    The result is broadcast to the common shape of the inputs.
    """
    x = np.asarray(x, dtype=float)
    env = {f"x{i + 1}": x[..., i] for i in range(x.shape[-1])}
    env["t"] = np.asarray(t, dtype=float)
    if z is not None:
        env["z"] = np.asarray(z, dtype=float)
    shape = np.broadcast_shapes(x.shape[:-1], np.shape(t), np.shape(z) if z is not None else ())
    return np.broadcast_to(np.asarray(expr.evaluate(env), dtype=float), shape).copy()


def substitute(expr: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace variables by expression trees (simultaneously)."""
    if isinstance(expr, Var):
        return mapping.get(expr.name, expr)
    if isinstance(expr, Num):
        return expr
    if isinstance(expr, Neg):
        return Neg(substitute(expr.arg, mapping))
    if isinstance(expr, BinOp):
        return BinOp(expr.op, substitute(expr.left, mapping), substitute(expr.right, mapping))
    if isinstance(expr, Pow):
        return Pow(substitute(expr.base, mapping), expr.exponent)
    if isinstance(expr, Call):
        return Call(expr.func, substitute(expr.arg, mapping))
    raise TypeError(f"unknown node {expr!r}")
