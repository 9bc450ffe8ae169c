"""Closed-form interaction weights as functions of time.

A weight is written as an infix expression over the time variable ``t``, the
reserved scale parameter ``eps``, numeric literals, ``+ - * /``, unary minus,
parentheses and the smooth functions ``sin``, ``cos`` and ``exp``.  There is
no way to write ``abs``, ``floor`` or a conditional, so every expression is
infinitely differentiable in ``t`` wherever it is finite.

Evaluation accepts scalars or numpy arrays for ``t`` and ``eps``.
"""

from __future__ import annotations

from dataclasses import dataclass
import re
from typing import Callable, Union

import numpy as np

__all__ = ["ExprError", "WeightExpr", "parse", "evaluate"]

FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
VARIABLES = ("t", "eps")

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/()]))"
)


class ExprError(ValueError):
    """Syntax or name error in a weight expression.

    ``offset`` is the byte offset (UTF-8) in the source where the problem
    was detected.
    """

    def __init__(self, message: str, source: str, pos: int):
        self.offset = len(source[:pos].encode("utf-8"))
        self.source = source
        self.reason = message
        super().__init__(f"{message} at offset {self.offset} in {source!r}")


# -- expression tree -------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Var, Neg, BinOp, Call]

_BINARY = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.true_divide,
}


def _compile(node: Node) -> Callable:
    if isinstance(node, Num):
        value = np.float64(node.value)
        return lambda t, eps: value
    if isinstance(node, Var):
        if node.name == "t":
            return lambda t, eps: t
        return lambda t, eps: eps
    if isinstance(node, Neg):
        inner = _compile(node.arg)
        return lambda t, eps: np.negative(inner(t, eps))
    if isinstance(node, BinOp):
        left, right, fn = _compile(node.left), _compile(node.right), _BINARY[node.op]
        return lambda t, eps: fn(left(t, eps), right(t, eps))
    if isinstance(node, Call):
        inner, fn = _compile(node.arg), FUNCTIONS[node.func]
        return lambda t, eps: fn(inner(t, eps))
    raise TypeError(f"not an expression node: {node!r}")


def _render(node: Node) -> str:
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{_render(node.arg)})"
    if isinstance(node, BinOp):
        return f"({_render(node.left)} {node.op} {_render(node.right)})"
    return f"{node.func}({_render(node.arg)})"


def _uses(node: Node, name: str) -> bool:
    if isinstance(node, Var):
        return node.name == name
    if isinstance(node, Num):
        return False
    if isinstance(node, BinOp):
        return _uses(node.left, name) or _uses(node.right, name)
    return _uses(node.arg, name)


class WeightExpr:
    """An immutable parsed weight expression.

    Calling the object evaluates it; ``t`` and ``eps`` may be arrays, in which
    case the usual numpy broadcasting applies.
    """

    __slots__ = ("ast", "source", "_fn")

    def __init__(self, ast: Node, source: str | None = None):
        object.__setattr__(self, "ast", ast)
        object.__setattr__(self, "source", source if source is not None else _render(ast))
        object.__setattr__(self, "_fn", _compile(ast))

    def __setattr__(self, name, value):
        raise AttributeError("WeightExpr is immutable")

    def __call__(self, t, eps=1.0):
        with np.errstate(all="ignore"):
            return self._fn(np.asarray(t, dtype=float), np.asarray(eps, dtype=float))

    def __repr__(self):
        return f"WeightExpr({self.source!r})"

    def __eq__(self, other):
        return isinstance(other, WeightExpr) and self.ast == other.ast

    def __hash__(self):
        return hash(self.ast)

    def pretty(self) -> str:
        """Fully parenthesised source that reparses to the same tree."""
        return _render(self.ast)

    @property
    def depends_on_time(self) -> bool:
        return _uses(self.ast, "t")

    @property
    def depends_on_eps(self) -> bool:
        return _uses(self.ast, "eps")

    @property
    def is_zero(self) -> bool:
        return isinstance(self.ast, Num) and self.ast.value == 0.0


# -- recursive descent parser ----------------------------------------------


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = []  # (kind, text, pos)
        pos = 0
        while pos < len(source):
            if source[pos:].strip() == "":
                break
            m = _TOKEN.match(source, pos)
            if m is None or m.end() == pos:
                bad = pos + len(source[pos:]) - len(source[pos:].lstrip())
                raise ExprError(f"unexpected character {source[bad]!r}", source, bad)
            kind = m.lastgroup
            self.tokens.append((kind, m.group(kind), m.start(kind)))
            pos = m.end()
        self.i = 0

    def peek(self):
        if self.i < len(self.tokens):
            return self.tokens[self.i]
        return ("end", "", len(self.source))

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.peek()
        raise ExprError(message, self.source, tok[2])

    def parse(self) -> Node:
        if not self.tokens:
            raise ExprError("empty expression", self.source, 0)
        node = self.sum()
        if self.peek()[0] != "end":
            self.error(f"unexpected {self.peek()[1]!r}")
        return node

    def sum(self) -> Node:
        node = self.product()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.product())
        return node

    def product(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Neg(self.unary())
        return self.primary()

    def primary(self) -> Node:
        kind, text, pos = tok = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if text in VARIABLES:
                return Var(text)
            if text in FUNCTIONS:
                if self.peek()[:2] != ("op", "("):
                    self.error(f"expected '(' after {text!r}")
                self.take()
                arg = self.sum()
                self.expect_close()
                return Call(text, arg)
            self.error(f"unknown identifier {text!r}", tok)
        if (kind, text) == ("op", "("):
            node = self.sum()
            self.expect_close()
            return node
        if kind == "end":
            self.error("unexpected end of expression", tok)
        self.error(f"unexpected {text!r}", tok)

    def expect_close(self):
        if self.peek()[:2] != ("op", ")"):
            self.error("expected ')'")
        self.take()


def parse(source: str) -> WeightExpr:
    """Parse ``source`` into a :class:`WeightExpr`.

    Raises :class:`ExprError` on empty input, malformed syntax or any name
    other than ``t``, ``eps``, ``sin``, ``cos``, ``exp``.
    """
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    return WeightExpr(_Parser(source).parse(), source)


def evaluate(expr: WeightExpr, t, eps=1.0):
    """Evaluate ``expr`` at time ``t`` and scale ``eps`` in double precision.

    Scalar inputs give a Python float.  Division by zero gives ``inf``/``nan``
    rather than raising.
    """
    out = expr(t, eps)
    if np.ndim(out) == 0:
        return float(out)
    return out


def constant(value: float) -> WeightExpr:
    return WeightExpr(Num(float(value)), repr(float(value)))


ZERO = constant(0.0)
