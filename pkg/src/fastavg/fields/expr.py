"""Arithmetic expressions for user-defined vector fields.

Grammar (whitespace-insensitive)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := "-" unary | power
    power  := atom ("^" unary)?
    atom   := NUMBER | "pi" | VARIABLE | FUNC "(" expr ")" | "(" expr ")"

``^`` is right-associative and binds tighter than unary minus, so
``-x1^2`` is ``-(x1^2)`` while ``2^-t`` is ``2^(-t)``. Variables are ``t``,
``x1..xd``, ``xd1..xdd`` (state at ``t - delay``, delay fields only) and
``theta`` (initial-history expressions only). Functions: sin, cos, exp,
sqrt, abs, log.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "log": np.log,
}

HISTORY = "history"


class ExprError(ValueError):
    kind = "syntax"

    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (at byte {pos})")
        self.pos = pos


class ExprSyntaxError(ExprError):
    kind = "syntax"


class UnknownIdentifierError(ExprError):
    kind = "unknown_identifier"


class ArityError(ExprError):
    kind = "arity"


class UnbalancedParenError(ExprError):
    kind = "unbalanced_parentheses"


class DelayedVariableError(ExprError):
    kind = "delayed_variable"


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Const:
    name: str


@dataclass(frozen=True)
class Var:
    name: str  # "t" or "theta"


@dataclass(frozen=True)
class State:
    index: int  # 1-based


@dataclass(frozen=True)
class Delayed:
    index: int  # 1-based


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Const, Var, State, Delayed, Neg, BinOp, Call]

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
""", re.VERBOSE)
_STATE = re.compile(r"x(\d+)\Z")
_DELAYED = re.compile(r"xd(\d+)\Z")


def _tokenize(src: str):
    toks = []
    i = 0
    while i < len(src):
        m = _TOKEN.match(src, i)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {src[i]!r}", len(src[:i].encode()))
        if m.lastgroup != "ws":
            toks.append((m.lastgroup, m.group(), len(src[:i].encode())))
        i = m.end()
    toks.append(("end", "", len(src.encode())))
    return toks


class _Parser:
    def __init__(self, src: str, d: int, kind: str):
        self.toks = _tokenize(src)
        self.i = 0
        self.d = d
        self.kind = kind

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def parse(self) -> Node:
        if self.peek()[0] == "end":
            raise ExprSyntaxError("empty expression", 0)
        node = self.expr()
        kind, text, pos = self.peek()
        if text == ")":
            raise UnbalancedParenError("unmatched ')'", pos)
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {text!r}", pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        kind, text, pos = self.take()
        if kind == "num":
            return Num(float(text))
        if text == "(":
            node = self.expr()
            close = self.take()
            if close[1] != ")":
                if close[0] == "end":
                    raise UnbalancedParenError("'(' is never closed", pos)
                raise ExprSyntaxError(f"expected ')' but found {close[1]!r}", close[2])
            return node
        if kind == "ident":
            return self.identifier(text, pos)
        if kind == "end":
            raise ExprSyntaxError("unexpected end of expression", pos)
        if text == ")":
            raise UnbalancedParenError("unmatched ')'", pos)
        raise ExprSyntaxError(f"unexpected {text!r}", pos)

    def identifier(self, name: str, pos: int) -> Node:
        if name in FUNCTIONS:
            if self.peek()[1] != "(":
                raise ArityError(f"function {name} takes one argument in parentheses", pos)
            open_pos = self.take()[2]
            if self.peek()[1] == ")":
                raise ArityError(f"function {name} takes one argument, got none", pos)
            arg = self.expr()
            close = self.take()
            if close[1] == ",":
                raise ArityError(f"function {name} takes one argument", close[2])
            if close[1] != ")":
                if close[0] == "end":
                    raise UnbalancedParenError("'(' is never closed", open_pos)
                raise ExprSyntaxError(f"expected ')' but found {close[1]!r}", close[2])
            return Call(name, arg)
        history = self.kind == HISTORY
        if name == "pi":
            return Const("pi")
        if name == "t" and not history:
            return Var("t")
        if name == "theta" and history:
            return Var("theta")
        m = _DELAYED.match(name)
        if m and not history:
            idx = int(m.group(1))
            if not 1 <= idx <= self.d:
                raise UnknownIdentifierError(f"{name}: index outside 1..{self.d}", pos)
            if self.kind != "pointwise_delay":
                raise DelayedVariableError(
                    f"delayed variable not allowed in a {self.kind} field: {name}", pos)
            return Delayed(idx)
        m = _STATE.match(name)
        if m and not history:
            idx = int(m.group(1))
            if not 1 <= idx <= self.d:
                raise UnknownIdentifierError(f"{name}: index outside 1..{self.d}", pos)
            return State(idx)
        raise UnknownIdentifierError(f"unknown identifier {name!r}", pos)


def parse_field_expr(src: str, d: int = 1, kind: str = "pointwise_ode") -> Node:
    """Parse one component of a field (or, with ``kind="history"``, of an
    initial function of ``theta``)."""
    kind = getattr(kind, "value", kind)
    if kind not in ("pointwise_ode", "pointwise_delay", "functional", HISTORY):
        raise ValueError(f"unknown field kind {kind!r}")
    if d < 1:
        raise ValueError("dimension must be >= 1")
    return _Parser(src, d, kind).parse()


def _div(a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.true_divide(a, b)
    return np.where(np.asarray(b) == 0, np.nan, q)


_BINOPS = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": _div,
    "^": np.power,
}


def _eval(node: Node, env):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, State):
        return env["x"][node.index - 1]
    if isinstance(node, BinOp):
        left = _eval(node.left, env)
        right = _eval(node.right, env)
        return _BINOPS[node.op](left, right)
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Call):
        return FUNCTIONS[node.func](_eval(node.arg, env))
    if isinstance(node, Neg):
        return np.negative(_eval(node.operand, env))
    if isinstance(node, Delayed):
        xd = env["xd"]
        if xd is None:
            raise ValueError("expression reads a delayed state but none was given")
        return xd[node.index - 1]
    if isinstance(node, Const):
        return np.pi
    raise TypeError(f"not an expression node: {node!r}")


def eval_expr(ast: Node, t=0.0, x: Optional[Sequence[float]] = None,
              xd: Optional[Sequence[float]] = None, theta=None):
    """Evaluate in IEEE double precision; ``t`` may be an array.

    Division by zero and domain errors give NaN rather than raising.
    """
    env = {"t": t, "x": x, "xd": xd, "theta": theta}
    with np.errstate(all="ignore"):
        out = _eval(ast, env)
    if np.ndim(out) == 0:
        return float(out)
    return out


def _leaves(ast: Node):
    if isinstance(ast, Neg):
        yield from _leaves(ast.operand)
    elif isinstance(ast, BinOp):
        yield from _leaves(ast.left)
        yield from _leaves(ast.right)
    elif isinstance(ast, Call):
        yield from _leaves(ast.arg)
    else:
        yield ast


def uses_delay(ast: Node) -> bool:
    return any(isinstance(n, Delayed) for n in _leaves(ast))


def uses_time(ast: Node) -> bool:
    return any(n == Var("t") for n in _leaves(ast))


def to_source(ast: Node) -> str:
    """Fully parenthesised text that parses back to ``ast``."""
    if isinstance(ast, Num):
        # literals like 1e999 overflow to inf, which has no literal spelling
        return repr(ast.value) if np.isfinite(ast.value) else "1e999"
    if isinstance(ast, Const):
        return ast.name
    if isinstance(ast, Var):
        return ast.name
    if isinstance(ast, State):
        return f"x{ast.index}"
    if isinstance(ast, Delayed):
        return f"xd{ast.index}"
    if isinstance(ast, Neg):
        return f"(-{to_source(ast.operand)})"
    if isinstance(ast, BinOp):
        return f"({to_source(ast.left)} {ast.op} {to_source(ast.right)})"
    if isinstance(ast, Call):
        return f"{ast.func}({to_source(ast.arg)})"
    raise TypeError(f"not an expression node: {ast!r}")
