"""Arithmetic mini-language for model coefficients.

Coefficients are small closed-form expressions in one variable ``u`` (rate
profiles on [0,1]) or two variables ``u, v`` (interaction kernels on
[0,1]^2).  The grammar supports numeric literals, ``+ - * /``, unary minus,
parentheses and the function set sin, cos, exp, sqrt, abs (one argument) and
min, max (two arguments).

Parsed expressions evaluate vectorized over numpy arrays, print to a
canonical form, and re-parse from that form to an identical tree.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "ExpressionError",
    "ParseError",
    "UnknownIdentifierError",
    "ArityError",
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "CoefficientExpr",
    "parse_coefficient",
]


class ExpressionError(ValueError):
    """Base class for coefficient-expression failures."""


class ParseError(ExpressionError):
    """Syntax error; ``position`` is the 0-based offset into the source."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnknownIdentifierError(ParseError):
    """An identifier that is neither a variable nor a known function."""


class ArityError(ParseError):
    """Variable not available at the declared arity, or bad argument count."""


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str  # "u" or "v"


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    lhs: "Node"
    rhs: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["Node", ...]


Node = Union[Num, Var, Neg, BinOp, Call]

_FUNCTIONS = {"sin": 1, "cos": 1, "exp": 1, "sqrt": 1, "abs": 1, "min": 2, "max": 2}

_UFUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "min": np.minimum,
    "max": np.maximum,
}

# precedence levels used by both the parser and the canonical printer
_PREC_ADD = 1
_PREC_MUL = 2
_PREC_NEG = 3
_PREC_ATOM = 4


def _precedence(node: Node) -> int:
    if isinstance(node, BinOp):
        return _PREC_ADD if node.op in "+-" else _PREC_MUL
    if isinstance(node, Neg):
        return _PREC_NEG
    return _PREC_ATOM


def _format(node: Node) -> str:
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        inner = _format(node.operand)
        if _precedence(node.operand) < _PREC_NEG:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(_format(a) for a in node.args)})"
    lhs, rhs = _format(node.lhs), _format(node.rhs)
    prec = _precedence(node)
    if _precedence(node.lhs) < prec:
        lhs = f"({lhs})"
    # the grammar is left-associative, so a right child of equal precedence
    # must keep its parentheses to reproduce the tree (and its float value)
    if _precedence(node.rhs) <= prec:
        rhs = f"({rhs})"
    return f"{lhs} {node.op} {rhs}"


def _evaluate(node: Node, env: dict[str, np.ndarray]):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Neg):
        return -_evaluate(node.operand, env)
    if isinstance(node, Call):
        return _UFUNCS[node.func](*(_evaluate(a, env) for a in node.args))
    a = _evaluate(node.lhs, env)
    b = _evaluate(node.rhs, env)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    return a / b


# ---------------------------------------------------------------------------
# Tokenizer / parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/(),]))"
)


@dataclass(frozen=True)
class _Token:
    kind: str  # "num" | "name" | "op" | "end"
    text: str
    pos: int


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(source):
        match = _TOKEN_RE.match(source, pos)
        if match is None:
            # skip over trailing whitespace before declaring failure
            stripped = source[pos:].lstrip()
            if not stripped:
                break
            bad_at = len(source) - len(stripped)
            raise ParseError(f"unexpected character {source[bad_at]!r}", bad_at)
        kind = match.lastgroup
        tokens.append(_Token(kind, match.group(kind), match.start(kind)))
        pos = match.end()
    tokens.append(_Token("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str, arity: int):
        self.source = source
        self.arity = arity
        self.tokens = _tokenize(source)
        self.index = 0

    def peek(self) -> _Token:
        return self.tokens[self.index]

    def advance(self) -> _Token:
        tok = self.tokens[self.index]
        self.index += 1
        return tok

    def expect(self, text: str) -> _Token:
        tok = self.peek()
        if tok.kind != "op" or tok.text != text:
            raise ParseError(f"expected {text!r}", tok.pos)
        return self.advance()

    def parse(self) -> Node:
        node = self.sum()
        tok = self.peek()
        if tok.kind != "end":
            raise ParseError(f"unexpected {tok.text!r}", tok.pos)
        return node

    def sum(self) -> Node:
        node = self.product()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.advance().text
            node = BinOp(op, node, self.product())
        return node

    def product(self) -> Node:
        node = self.unary()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        tok = self.peek()
        if tok.kind == "op" and tok.text == "-":
            self.advance()
            return Neg(self.unary())
        return self.atom()

    def atom(self) -> Node:
        tok = self.advance()
        if tok.kind == "num":
            return Num(float(tok.text))
        if tok.kind == "name":
            if self.peek().kind == "op" and self.peek().text == "(":
                return self.call(tok)
            if tok.text in ("u", "v"):
                index = 1 if tok.text == "u" else 2
                if index > self.arity:
                    raise ArityError(
                        f"variable {tok.text!r} not allowed in a "
                        f"{self.arity}-variable coefficient",
                        tok.pos,
                    )
                return Var(tok.text)
            raise UnknownIdentifierError(f"unknown identifier {tok.text!r}", tok.pos)
        if tok.kind == "op" and tok.text == "(":
            node = self.sum()
            self.expect(")")
            return node
        raise ParseError(
            "expected a number, variable, function or '('"
            if tok.kind == "end"
            else f"unexpected {tok.text!r}",
            tok.pos,
        )

    def call(self, name: _Token) -> Node:
        if name.text not in _FUNCTIONS:
            raise UnknownIdentifierError(f"unknown function {name.text!r}", name.pos)
        self.expect("(")
        args = [self.sum()]
        while self.peek().kind == "op" and self.peek().text == ",":
            self.advance()
            args.append(self.sum())
        self.expect(")")
        want = _FUNCTIONS[name.text]
        if len(args) != want:
            raise ArityError(
                f"{name.text} takes {want} argument{'s' if want > 1 else ''}, "
                f"got {len(args)}",
                name.pos,
            )
        return Call(name.text, tuple(args))


# ---------------------------------------------------------------------------
# Public surface
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoefficientExpr:
    """A parsed coefficient: source text, AST and arity (1 or 2)."""

    source: str
    ast: Node
    arity: int

    def canonical(self) -> str:
        """Canonical printed form; re-parsing it reproduces ``self.ast``."""
        return _format(self.ast)

    def __call__(self, u, v=None):
        """Evaluate at ``u`` (and ``v`` for binary coefficients).

        Accepts scalars or numpy arrays; broadcasts the result to the
        broadcast shape of the inputs.
        """
        env = {"u": np.asarray(u, dtype=float)}
        shape = env["u"].shape
        if self.arity == 2:
            if v is None:
                raise TypeError("binary coefficient needs both u and v")
            env["v"] = np.asarray(v, dtype=float)
            shape = np.broadcast_shapes(shape, env["v"].shape)
        out = _evaluate(self.ast, env)
        arr = np.asarray(out, dtype=float)
        if arr.shape != shape:
            arr = np.broadcast_to(arr, shape).copy()
        return float(arr) if arr.shape == () else arr

    def __str__(self) -> str:
        return self.canonical()


def parse_coefficient(source: str, arity: int) -> CoefficientExpr:
    """Parse ``source`` as a coefficient in ``arity`` variables (1 or 2)."""
    if arity not in (1, 2):
        raise ValueError(f"arity must be 1 or 2, got {arity}")
    ast = _Parser(source, arity).parse()
    return CoefficientExpr(source=source, ast=ast, arity=arity)
