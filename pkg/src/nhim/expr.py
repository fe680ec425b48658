"""Expression trees for vector-field components.

A small recursive-descent parser for the grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom ('^' unary)?          # right associative
    atom   := NUMBER | 'pi' | NAME | FUNC '(' expr ')' | '(' expr ')'

Names are ``x<i>``, ``y<i>`` (1-based) or declared parameter names.
Compiled expressions are plain closures over numpy arrays, so they
evaluate element-wise on batches of points.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence, Union

import numpy as np

from .errors import ParseError

FUNCTIONS: dict[str, Callable] = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "tanh": np.tanh,
    "sqrt": np.sqrt,
    "abs": np.abs,
}

BINARY_OPS: dict[str, Callable] = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.divide,
    "^": np.power,
}


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    kind: str  # 'x' or 'y'
    index: int  # zero-based


@dataclass(frozen=True)
class Param:
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


Expr = Union[Const, Var, Param, Neg, BinOp, Call]


# ---------------------------------------------------------------- tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    pos: int


def _tokenize(text: str, line, col0: int) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col0 + pos + 1)
        if m.lastgroup != "ws":
            tokens.append(_Token(m.lastgroup, m.group(), pos))
        pos = m.end()
    tokens.append(_Token("eof", "", len(text)))
    return tokens


# ------------------------------------------------------------------- parser

class _Parser:
    def __init__(self, text, dx, dy, params, allow_y, line, col0):
        self.tokens = _tokenize(text, line, col0)
        self.i = 0
        self.dx = dx
        self.dy = dy
        self.params = set(params)
        self.allow_y = allow_y
        self.line = line
        self.col0 = col0

    def error(self, msg, tok=None):
        tok = tok or self.peek()
        return ParseError(msg, self.line, self.col0 + tok.pos + 1)

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text):
        tok = self.peek()
        if tok.text != text:
            found = tok.text or "end of expression"
            raise self.error(f"expected {text!r}, found {found!r}")
        return self.advance()

    def parse(self) -> Expr:
        if self.peek().kind == "eof":
            raise self.error("empty expression")
        node = self.expr()
        if self.peek().kind != "eof":
            raise self.error(f"unexpected token {self.peek().text!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek().text in ("+", "-"):
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek().text in ("*", "/"):
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek().text == "-":
            self.advance()
            return Neg(self.unary())
        if self.peek().text == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek().text == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        tok = self.peek()
        if tok.kind == "num":
            self.advance()
            return Const(float(tok.text))
        if tok.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        if tok.kind == "name":
            self.advance()
            if self.peek().text == "(":
                if tok.text not in FUNCTIONS:
                    raise self.error(f"unknown function {tok.text!r}", tok)
                self.advance()
                arg = self.expr()
                self.expect(")")
                return Call(tok.text, arg)
            return self.name(tok)
        found = tok.text or "end of expression"
        raise self.error(f"unexpected token {found!r}")

    def name(self, tok):
        text = tok.text
        if text in self.params:
            return Param(text)
        if text == "pi":
            return Const(math.pi)
        m = re.fullmatch(r"([xy])([1-9]\d*)", text)
        if m:
            kind, idx = m.group(1), int(m.group(2))
            limit = self.dx if kind == "x" else self.dy
            if kind == "y" and not self.allow_y:
                raise self.error(f"{text!r} not allowed here (expression depends on x only)", tok)
            if idx > limit:
                raise self.error(f"variable {text!r} exceeds dimension {limit}", tok)
            return Var(kind, idx - 1)
        if text in FUNCTIONS:
            raise self.error(f"function {text!r} requires an argument", tok)
        raise self.error(f"unknown identifier {text!r}", tok)


def parse_expr(
    text: str,
    dx: int,
    dy: int,
    params: Sequence[str] = (),
    allow_y: bool = True,
    line: int | None = None,
    column: int = 0,
) -> Expr:
    """Parse ``text`` into an expression tree.

    ``line``/``column`` locate the expression in its source file and are
    used only for error messages.
    """
    return _Parser(text, dx, dy, params, allow_y, line, column).parse()


# ------------------------------------------------------------ pretty printer

def to_string(node: Expr) -> str:
    """Fully parenthesised source text; parses back to an identical tree."""
    if isinstance(node, Const):
        return repr(float(node.value)) if node.value >= 0 else f"(-{-node.value!r})"
    if isinstance(node, Var):
        return f"{node.kind}{node.index + 1}"
    if isinstance(node, Param):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_string(node.operand)})"
    if isinstance(node, BinOp):
        return f"({to_string(node.left)} {node.op} {to_string(node.right)})"
    if isinstance(node, Call):
        return f"{node.func}({to_string(node.arg)})"
    raise TypeError(f"not an expression node: {node!r}")


def variables(node: Expr) -> set[tuple[str, int]]:
    """Set of ``(kind, index)`` state variables referenced by ``node``."""
    if isinstance(node, Var):
        return {(node.kind, node.index)}
    if isinstance(node, Neg):
        return variables(node.operand)
    if isinstance(node, BinOp):
        return variables(node.left) | variables(node.right)
    if isinstance(node, Call):
        return variables(node.arg)
    return set()


# ----------------------------------------------------------------- compiler

Compiled = Callable[[np.ndarray, np.ndarray], Union[np.ndarray, float]]


def compile_expr(node: Expr, params: Mapping[str, float]) -> Compiled:
    """Compile ``node`` to ``fn(x, y)`` with ``x[..., i]`` the i-th coordinate.

    Parameter values are frozen into the closure. Constant subtrees return
    a python float; callers broadcast.
    """
    if isinstance(node, Const):
        c = float(node.value)
        return lambda x, y: c
    if isinstance(node, Param):
        c = float(params[node.name])
        return lambda x, y: c
    if isinstance(node, Var):
        i = node.index
        if node.kind == "x":
            return lambda x, y: x[..., i]
        return lambda x, y: y[..., i]
    if isinstance(node, Neg):
        inner = compile_expr(node.operand, params)
        return lambda x, y: -inner(x, y)
    if isinstance(node, BinOp):
        left = compile_expr(node.left, params)
        right = compile_expr(node.right, params)
        op = BINARY_OPS[node.op]
        return lambda x, y: op(left(x, y), right(x, y))
    if isinstance(node, Call):
        arg = compile_expr(node.arg, params)
        fn = FUNCTIONS[node.func]
        return lambda x, y: fn(arg(x, y))
    raise TypeError(f"not an expression node: {node!r}")
