"""Small arithmetic expression language for scalar dynamics and stage costs.

Grammar (lowest to highest precedence)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | '+' unary | power
    power   := atom ('^' INTEGER)?
    atom    := NUMBER | 'x' | 'u' | '(' expr ')'

``^`` binds tighter than unary minus, so ``-x^2`` is ``-(x^2)``. Exponents are
restricted to non-negative integer literals.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np

VARIABLES = ("x", "u")


class ExpressionSyntaxError(ValueError):
    """Raised for malformed expressions; ``position`` is a 0-based offset."""

    def __init__(self, message: str, text: str, position: int):
        self.text = text
        self.position = position
        super().__init__(f"{message} at position {position}: {text!r}")


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: int


Node = Union[Num, Var, Neg, BinOp, Pow]


_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None:
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExpressionSyntaxError(f"unexpected character {text[bad]!r}", text, bad)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.peek()
        raise ExpressionSyntaxError(message, self.text, tok[2])

    def parse(self) -> Node:
        node = self.expr()
        if self.peek()[0] != "end":
            if self.peek()[1] == ")":
                self.error("unbalanced ')'")
            self.error(f"unexpected token {self.peek()[1]!r}")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        kind, value, _ = self.peek()
        if kind == "op" and value == "-":
            self.advance()
            return Neg(self.unary())
        if kind == "op" and value == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek()[1] == "^":
            self.advance()
            kind, value, _ = tok = self.advance()
            if kind != "num" or not re.fullmatch(r"\d+", value):
                self.error("exponent must be a non-negative integer literal", tok)
            if self.peek()[1] == "^":
                self.error("chained exponents are not supported")
            return Pow(base, int(value))
        return base

    def atom(self) -> Node:
        kind, value, pos = tok = self.advance()
        if kind == "num":
            return Num(float(value))
        if kind == "name":
            if value not in VARIABLES:
                self.error(f"unknown identifier {value!r}", tok)
            return Var(value)
        if value == "(":
            node = self.expr()
            if self.peek()[1] != ")":
                self.error("unbalanced '('", tok)
            self.advance()
            return node
        if kind == "end":
            self.error("empty operand", tok)
        self.error(f"empty operand before {value!r}", tok)


def parse_expression(text: str) -> Node:
    if not text or not text.strip():
        raise ExpressionSyntaxError("empty expression", text or "", 0)
    return _Parser(text).parse()


def evaluate(node: Node, x, u):
    """Evaluate ``node`` at ``(x, u)``; works elementwise on numpy arrays."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return x if node.name == "x" else u
    if isinstance(node, Neg):
        return -evaluate(node.operand, x, u)
    if isinstance(node, Pow):
        base = evaluate(node.base, x, u)
        result = np.ones_like(base, dtype=float) if isinstance(base, np.ndarray) else 1.0
        for _ in range(node.exponent):
            result = result * base
        return result
    left = evaluate(node.left, x, u)
    right = evaluate(node.right, x, u)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    return left / right


def to_string(node: Node) -> str:
    """Fully parenthesised rendering; ``parse_expression(to_string(t)) == t``."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_string(node.operand)})"
    if isinstance(node, Pow):
        return f"({to_string(node.base)}^{node.exponent})"
    return f"({to_string(node.left)} {node.op} {to_string(node.right)})"


@dataclass(frozen=True)
class Expression:
    """A parsed expression in ``x`` and ``u`` that can be called like ``f(x, u)``."""

    text: str
    tree: Node

    @classmethod
    def parse(cls, text: str) -> "Expression":
        return cls(text, parse_expression(text))

    def __call__(self, x, u):
        return evaluate(self.tree, x, u)

    def __str__(self):
        return to_string(self.tree)
