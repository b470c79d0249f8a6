"""A small arithmetic expression language for coefficient functions.

Grammar (lowest to highest precedence)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := primary ('^' unary)?          # right-associative
    primary := NUMBER | 'pi' | 'e' | 'x1'..'xd'
             | FUNC '(' expr ')' | '(' expr ')'

with ``FUNC`` one of exp, log, sqrt, sin, cos, tanh.  Expressions evaluate
on plain floats or on numpy arrays of points ``(..., d)``, and can be
differentiated symbolically with :func:`deriv`.
"""

import math
import re
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import KramersError

__all__ = [
    "Expr", "Num", "Var", "Const", "Neg", "Bin", "Call",
    "ExprError", "ExprSyntaxError", "ExprDomainError",
    "parse", "evaluate", "deriv", "to_string", "num", "depends_on",
]


class ExprError(KramersError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class ExprDomainError(ExprError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (sub-expression at offset {offset})")
        self.offset = offset


# Every node carries ``pos``, the byte offset of the source text it came
# from (-1 for nodes synthesised by ``deriv``).  It is excluded from
# equality so structurally equal trees compare equal.

@dataclass(frozen=True)
class Num:
    value: float
    pos: int = field(default=-1, compare=False)


@dataclass(frozen=True)
class Var:
    index: int  # zero-based
    pos: int = field(default=-1, compare=False)


@dataclass(frozen=True)
class Const:
    name: str
    pos: int = field(default=-1, compare=False)


@dataclass(frozen=True)
class Neg:
    arg: "Expr"
    pos: int = field(default=-1, compare=False)


@dataclass(frozen=True)
class Bin:
    op: str
    left: "Expr"
    right: "Expr"
    pos: int = field(default=-1, compare=False)


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Expr"
    pos: int = field(default=-1, compare=False)


Expr = Union[Num, Var, Const, Neg, Bin, Call]

CONSTANTS = {"pi": math.pi, "e": math.e}
FUNCTIONS = ("exp", "log", "sqrt", "sin", "cos", "tanh")

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
""", re.VERBOSE)


def _tokenize(src):
    tokens = []
    pos = 0
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {src[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src, dim):
        self.tokens = _tokenize(src)
        self.i = 0
        self.dim = dim

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text):
        kind, val, pos = self.take()
        if val != text:
            found = "end of input" if kind == "end" else repr(val)
            raise ExprSyntaxError(f"expected {text!r}, found {found}", pos)

    def parse(self):
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {val!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            _, op, pos = self.take()
            node = Bin(op, node, self.term(), pos)
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            _, op, pos = self.take()
            node = Bin(op, node, self.unary(), pos)
        return node

    def unary(self):
        if self.peek()[1] == "-":
            _, _, pos = self.take()
            return Neg(self.unary(), pos)
        return self.power()

    def power(self):
        base = self.primary()
        if self.peek()[1] == "^":
            _, _, pos = self.take()
            return Bin("^", base, self.unary(), pos)
        return base

    def primary(self):
        kind, val, pos = self.take()
        if kind == "num":
            return Num(float(val), pos)
        if kind == "ident":
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                if self.peek()[1] == ",":
                    raise ExprSyntaxError(f"{val} takes exactly one argument", self.peek()[2])
                self.expect(")")
                return Call(val, arg, pos)
            if self.peek()[1] == "(":
                raise ExprSyntaxError(f"unknown function {val!r}", pos)
            if val in CONSTANTS:
                return Const(val, pos)
            m = re.fullmatch(r"x([1-9]\d*)", val)
            if m and int(m.group(1)) <= self.dim:
                return Var(int(m.group(1)) - 1, pos)
            raise ExprSyntaxError(f"unknown identifier {val!r}", pos)
        if val == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(val)
        raise ExprSyntaxError(f"unexpected {found}", pos)


def parse(src, dim):
    """Parse ``src`` into an expression over variables ``x1 .. x{dim}``."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    return _Parser(str(src), dim).parse()


# -- printing ---------------------------------------------------------------

def to_string(e):
    """Render ``e`` as source text that parses back to an equivalent tree."""
    if isinstance(e, Num):
        text = repr(float(e.value))
        return f"({text})" if e.value < 0 else text
    if isinstance(e, Var):
        return f"x{e.index + 1}"
    if isinstance(e, Const):
        return e.name
    if isinstance(e, Neg):
        return f"(-{to_string(e.arg)})"
    if isinstance(e, Bin):
        return f"({to_string(e.left)} {e.op} {to_string(e.right)})"
    if isinstance(e, Call):
        return f"{e.fn}({to_string(e.arg)})"
    raise TypeError(f"not an expression: {e!r}")


# -- evaluation -------------------------------------------------------------

def _check(values, node, what):
    if not np.all(np.isfinite(values)):
        raise ExprDomainError(what, node.pos)
    return values


def _eval(e, x):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return x[..., e.index]
    if isinstance(e, Const):
        return CONSTANTS[e.name]
    if isinstance(e, Neg):
        return -_eval(e.arg, x)
    if isinstance(e, Bin):
        a = _eval(e.left, x)
        b = _eval(e.right, x)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            if np.any(np.asarray(b) == 0):
                raise ExprDomainError("division by zero", e.pos)
            return _check(np.divide(a, b), e, "non-finite quotient")
        with np.errstate(all="ignore"):
            return _check(np.power(a, b), e, "invalid power")
    if isinstance(e, Call):
        a = _eval(e.arg, x)
        if e.fn in ("log", "sqrt"):
            bad = np.asarray(a) <= 0 if e.fn == "log" else np.asarray(a) < 0
            if np.any(bad):
                raise ExprDomainError(f"{e.fn} of argument outside its domain", e.pos)
        with np.errstate(all="ignore"):
            return _check(getattr(np, e.fn)(a), e, f"{e.fn} overflow")
    raise TypeError(f"not an expression: {e!r}")


def evaluate(e, x):
    """Evaluate ``e`` at a point (sequence of length d) or array ``(..., d)``.

    Returns a float for a single point and an array of shape ``x.shape[:-1]``
    otherwise.  Raises :class:`ExprDomainError` on division by zero or a
    log/sqrt/power argument outside its domain.
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 1
    if x.ndim == 0:
        x = x[None]
        scalar = True
    with np.errstate(over="ignore"):
        out = _eval(e, x)
    out = np.broadcast_to(np.asarray(out, dtype=float), x.shape[:-1])
    return float(out) if scalar else np.array(out)


# -- construction helpers with light simplification -------------------------

def num(v):
    return Num(float(v))


def _is_num(e, v=None):
    return isinstance(e, Num) and (v is None or e.value == v)


def add(a, b):
    if _is_num(a, 0):
        return b
    if _is_num(b, 0):
        return a
    if _is_num(a) and _is_num(b):
        return num(a.value + b.value)
    return Bin("+", a, b)


def sub(a, b):
    if _is_num(b, 0):
        return a
    if _is_num(a, 0):
        return neg(b)
    if _is_num(a) and _is_num(b):
        return num(a.value - b.value)
    return Bin("-", a, b)


def mul(a, b):
    if _is_num(a, 0) or _is_num(b, 0):
        return num(0)
    if _is_num(a, 1):
        return b
    if _is_num(b, 1):
        return a
    if _is_num(a) and _is_num(b):
        return num(a.value * b.value)
    return Bin("*", a, b)


def div(a, b):
    if _is_num(a, 0):
        return num(0)
    if _is_num(b, 1):
        return a
    return Bin("/", a, b)


def neg(a):
    if _is_num(a):
        return num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def power(a, b):
    if _is_num(b, 1):
        return a
    if _is_num(b, 0):
        return num(1)
    if _is_num(a) and _is_num(b):
        try:
            val = a.value ** b.value
        except (OverflowError, ZeroDivisionError):
            val = None
        if isinstance(val, float) and math.isfinite(val):
            return num(val)
    return Bin("^", a, b)


def call(fn, a):
    return Call(fn, a)


def depends_on(e, i=None):
    """True if ``e`` mentions ``x{i}`` (1-based; any variable when ``i`` is None)."""
    return _mentions(e, None if i is None else i - 1)


def _mentions(e, i):
    if isinstance(e, Var):
        return i is None or e.index == i
    if isinstance(e, (Num, Const)):
        return False
    if isinstance(e, (Neg, Call)):
        return _mentions(e.arg, i)
    return _mentions(e.left, i) or _mentions(e.right, i)


# -- differentiation --------------------------------------------------------

def deriv(e, i):
    """Symbolic partial derivative of ``e`` with respect to ``x{i}`` (1-based)."""
    return _d(e, i - 1)


def _d(e, i):
    if isinstance(e, (Num, Const)):
        return num(0)
    if isinstance(e, Var):
        return num(1 if e.index == i else 0)
    if not _mentions(e, i):
        return num(0)
    if isinstance(e, Neg):
        return neg(_d(e.arg, i))
    if isinstance(e, Bin):
        u, v = e.left, e.right
        if e.op == "+":
            return add(_d(u, i), _d(v, i))
        if e.op == "-":
            return sub(_d(u, i), _d(v, i))
        if e.op == "*":
            return add(mul(_d(u, i), v), mul(u, _d(v, i)))
        if e.op == "/":
            return div(sub(mul(_d(u, i), v), mul(u, _d(v, i))), power(v, num(2)))
        # u ^ v
        if not _mentions(v, i):
            return mul(mul(v, power(u, sub(v, num(1)))), _d(u, i))
        if not _mentions(u, i):
            return mul(mul(e, call("log", u)), _d(v, i))
        return mul(e, add(mul(_d(v, i), call("log", u)), div(mul(v, _d(u, i)), u)))
    if isinstance(e, Call):
        u = e.arg
        du = _d(u, i)
        if e.fn == "exp":
            outer = e
        elif e.fn == "log":
            return div(du, u)
        elif e.fn == "sqrt":
            return div(du, mul(num(2), e))
        elif e.fn == "sin":
            outer = call("cos", u)
        elif e.fn == "cos":
            outer = neg(call("sin", u))
        else:  # tanh
            outer = sub(num(1), power(e, num(2)))
        return mul(outer, du)
    raise TypeError(f"not an expression: {e!r}")
