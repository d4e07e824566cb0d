"""Scalar expression grammar used for gains and ODE right-hand sides.

Grammar::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := '-' factor | atom ('^' atom)?
    atom   := number | identifier | func '(' expr (',' expr)? ')' | '(' expr ')'
    func   := exp | ln | min | max | abs | sign

Evaluation is vectorised over numpy arrays. Floating point faults (division
by zero, log of a non-positive number, overflow, NaN) raise
:class:`EvaluationError` instead of producing inf/nan.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np
from mpmath import iv

__all__ = [
    "ParseError",
    "EvaluationError",
    "Node",
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "parse",
]


class ParseError(ValueError):
    """Syntax error or unknown identifier, with a 0-based character position."""

    def __init__(self, message: str, position: int, text: str = ""):
        self.position = position
        self.text = text
        super().__init__(f"{message} at position {position}")


class EvaluationError(ArithmeticError):
    pass


FUNCTIONS = {"exp": 1, "ln": 1, "min": 2, "max": 2, "abs": 1, "sign": 1}

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),])"
    r")"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ParseError(f"unexpected character {text[bad]!r}", bad, text)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


# ---------------------------------------------------------------------------
# AST

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 3}


class Node:
    """Base AST node. Subclasses are frozen dataclasses."""

    def compile(self) -> Callable[[Mapping[str, np.ndarray]], np.ndarray]:
        raise NotImplementedError

    def eval_iv(self, env: Mapping[str, object]):
        raise NotImplementedError

    def variables(self) -> set[str]:
        raise NotImplementedError

    def to_str(self, subs: Mapping[str, str] | None = None) -> str:
        raise NotImplementedError

    def evaluate(self, env: Mapping[str, object]) -> np.ndarray:
        fn = self.compile()
        arrays = {k: np.asarray(v, dtype=float) for k, v in env.items()}
        return guarded(fn, arrays)

    def __str__(self) -> str:
        return self.to_str()


def guarded(fn, env):
    with np.errstate(divide="raise", invalid="raise", over="raise", under="ignore"):
        try:
            return fn(env)
        except FloatingPointError as exc:
            raise EvaluationError(str(exc)) from None
        except ZeroDivisionError as exc:
            raise EvaluationError("division by zero") from exc


@dataclass(frozen=True)
class Num(Node):
    value: float

    def compile(self):
        v = np.float64(self.value)
        return lambda env: v

    def eval_iv(self, env):
        return iv.mpf(self.value)

    def variables(self):
        return set()

    def to_str(self, subs=None):
        v = float(self.value)
        if v.is_integer() and abs(v) < 1e15:
            return str(int(v))
        return repr(v)


@dataclass(frozen=True)
class Var(Node):
    name: str

    def compile(self):
        name = self.name
        return lambda env: env[name]

    def eval_iv(self, env):
        return env[self.name]

    def variables(self):
        return {self.name}

    def to_str(self, subs=None):
        if subs and self.name in subs:
            return f"({subs[self.name]})"
        return self.name


@dataclass(frozen=True)
class Neg(Node):
    arg: Node

    def compile(self):
        f = self.arg.compile()
        return lambda env: -f(env)

    def eval_iv(self, env):
        return -self.arg.eval_iv(env)

    def variables(self):
        return self.arg.variables()

    def to_str(self, subs=None):
        inner = self.arg.to_str(subs)
        if isinstance(self.arg, BinOp):
            inner = f"({inner})"
        return f"-{inner}"


def _div(a, b):
    if np.any(np.asarray(b) == 0):
        raise EvaluationError("division by zero")
    return a / b


def _pow(a, b):
    out = np.power(a, b)
    if np.any(np.isnan(out)):
        raise EvaluationError("invalid power")
    return out


_BINARY = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": _div,
    "^": _pow,
}


def _check_finite(x):
    if not np.all(np.isfinite(x)):
        raise EvaluationError("non-finite result")
    return x


@dataclass(frozen=True)
class BinOp(Node):
    op: str
    left: Node
    right: Node

    def compile(self):
        f, g, op = self.left.compile(), self.right.compile(), _BINARY[self.op]
        if self.op == "^":
            return lambda env: _check_finite(op(f(env), g(env)))
        return lambda env: op(f(env), g(env))

    def eval_iv(self, env):
        a, b = self.left.eval_iv(env), self.right.eval_iv(env)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if self.op == "/":
            return a / b
        # integer exponents keep the sign information for negative bases
        if isinstance(self.right, Num) and float(self.right.value).is_integer():
            return a ** int(self.right.value)
        return a ** b

    def variables(self):
        return self.left.variables() | self.right.variables()

    def to_str(self, subs=None):
        p = _PREC[self.op]
        left = self.left.to_str(subs)
        right = self.right.to_str(subs)
        if isinstance(self.left, (BinOp, Neg)) and (
            isinstance(self.left, Neg) or _PREC[self.left.op] < p or self.op == "^"
        ):
            left = f"({left})"
        if isinstance(self.right, (BinOp, Neg)) and (
            isinstance(self.right, Neg)
            or _PREC[self.right.op] < p
            or (_PREC[self.right.op] == p)
        ):
            right = f"({right})"
        if self.op == "^" and isinstance(self.left, Num) and self.left.value < 0:
            left = f"({left})"
        if self.op == "^" and isinstance(self.right, Num) and self.right.value < 0:
            right = f"({right})"
        return f"{left}{self.op}{right}"


def _ln(x):
    if np.any(np.asarray(x) <= 0):
        raise EvaluationError("ln of non-positive argument")
    return np.log(x)


_CALLS = {
    "exp": np.exp,
    "ln": _ln,
    "min": np.minimum,
    "max": np.maximum,
    "abs": np.abs,
    "sign": np.sign,
}


def _iv_min(a, b):
    return iv.mpf([min(a.a, b.a), min(a.b, b.b)])


def _iv_max(a, b):
    return iv.mpf([max(a.a, b.a), max(a.b, b.b)])


def _iv_abs(a):
    if a.a >= 0:
        return a
    if a.b <= 0:
        return -a
    return iv.mpf([0, max(-a.a, a.b)])


def _iv_sign(a):
    if a.a > 0:
        return iv.mpf(1)
    if a.b < 0:
        return iv.mpf(-1)
    return iv.mpf([-1 if a.a < 0 else 0, 1 if a.b > 0 else 0])


_IV_CALLS = {
    "exp": lambda a: iv.exp(a),
    "ln": lambda a: iv.log(a),
    "min": _iv_min,
    "max": _iv_max,
    "abs": _iv_abs,
    "sign": _iv_sign,
}


@dataclass(frozen=True)
class Call(Node):
    func: str
    args: tuple[Node, ...]

    def compile(self):
        fn = _CALLS[self.func]
        fs = [a.compile() for a in self.args]
        if len(fs) == 1:
            f0 = fs[0]
            return lambda env: fn(f0(env))
        f0, f1 = fs
        return lambda env: fn(f0(env), f1(env))

    def eval_iv(self, env):
        return _IV_CALLS[self.func](*(a.eval_iv(env) for a in self.args))

    def variables(self):
        out: set[str] = set()
        for a in self.args:
            out |= a.variables()
        return out

    def to_str(self, subs=None):
        return f"{self.func}({', '.join(a.to_str(subs) for a in self.args)})"


# ---------------------------------------------------------------------------
# Recursive-descent parser


class _Parser:
    def __init__(self, text: str, variables: frozenset[str]):
        self.text = text
        self.variables = variables
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def tok(self):
        return self.tokens[self.i]

    def advance(self):
        t = self.tokens[self.i]
        self.i += 1
        return t

    def expect(self, value: str):
        kind, val, pos = self.tok
        if val != value or kind == "end":
            found = "end of input" if kind == "end" else repr(val)
            raise ParseError(f"expected {value!r}, found {found}", pos, self.text)
        self.advance()

    def parse(self) -> Node:
        node = self.expr()
        kind, val, pos = self.tok
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", pos, self.text)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok[0] == "op" and self.tok[1] in "+-":
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.tok[0] == "op" and self.tok[1] in "*/":
            op = self.advance()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Node:
        if self.tok[0] == "op" and self.tok[1] == "-":
            self.advance()
            return Neg(self.factor())
        base = self.atom()
        if self.tok[0] == "op" and self.tok[1] == "^":
            self.advance()
            return BinOp("^", base, self.atom())
        return base

    def atom(self) -> Node:
        kind, val, pos = self.tok
        if kind == "num":
            self.advance()
            return Num(float(val))
        if kind == "name":
            self.advance()
            if val in FUNCTIONS:
                self.expect("(")
                args = [self.expr()]
                if self.tok[1] == "," and self.tok[0] == "op":
                    self.advance()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != FUNCTIONS[val]:
                    raise ParseError(
                        f"{val} takes {FUNCTIONS[val]} argument(s), got {len(args)}",
                        pos,
                        self.text,
                    )
                return Call(val, tuple(args))
            if val in self.variables:
                return Var(val)
            raise ParseError(f"unknown identifier {val!r}", pos, self.text)
        if kind == "op" and val == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(val)
        raise ParseError(f"unexpected {found}", pos, self.text)


def parse(text: str, variables: Iterable[str] = ("r",)) -> Node:
    """Parse ``text`` into an AST over the given variable names."""
    if not isinstance(text, str):
        raise TypeError("expression must be a string")
    return _Parser(text, frozenset(variables)).parse()
