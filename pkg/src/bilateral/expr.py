"""Coefficient expressions in one spatial variable ``z``.

Grammar (whitespace insensitive)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom ('^' unary)?          # right associative, constant exponent
    atom   := number | 'z' | 'pi' | func '(' expr ')' | '(' expr ')'
    func   := 'exp' | 'sin' | 'cos' | 'sqrt'

Expressions are immutable trees.  Evaluation accepts scalars or numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

ArrayLike = Union[float, np.ndarray]

FUNCTIONS = ("exp", "sin", "cos", "sqrt")


class ExprSyntaxError(ValueError):
    """Malformed expression text; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class ExprDomainError(ArithmeticError):
    """Evaluation left the real domain (division by zero, root of a negative)."""


class Expr:
    """Base class of all expression nodes."""

    def __call__(self, z: ArrayLike) -> ArrayLike:
        return evaluate(self, z)

    def __str__(self) -> str:
        return to_string(self)


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    pass


@dataclass(frozen=True)
class Unary(Expr):
    op: str  # 'neg' or a name from FUNCTIONS
    arg: Expr


@dataclass(frozen=True)
class Binary(Expr):
    op: str  # one of + - * / ^
    left: Expr
    right: Expr


# ---------------------------------------------------------------- parsing


class _Parser:
    def __init__(self, text: str):
        self.src = text.encode("utf-8")
        self.pos = 0

    def error(self, message: str, offset: int | None = None) -> ExprSyntaxError:
        return ExprSyntaxError(message, self.pos if offset is None else offset)

    def skip(self) -> None:
        while self.pos < len(self.src) and self.src[self.pos] in b" \t\r\n":
            self.pos += 1

    def peek(self) -> str:
        self.skip()
        if self.pos >= len(self.src):
            return ""
        return chr(self.src[self.pos])

    def take(self, ch: str) -> bool:
        if self.peek() == ch:
            self.pos += 1
            return True
        return False

    def parse(self) -> Expr:
        node = self.expr()
        if self.peek() != "":
            raise self.error(f"unexpected character {self.peek()!r}")
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.peek() in ("+", "-"):
            op = self.peek()
            self.pos += 1
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.peek() in ("*", "/"):
            op = self.peek()
            self.pos += 1
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.take("-"):
            return _neg(self.unary())
        if self.take("+"):
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek() == "^":
            self.pos += 1
            start = self.pos
            exponent = self.unary()
            if _depends_on_z(exponent):
                raise self.error("exponent must be constant", start)
            return Binary("^", base, Const(float(evaluate(exponent, 0.0))))
        return base

    def atom(self) -> Expr:
        ch = self.peek()
        if ch == "":
            raise self.error("unexpected end of input")
        if ch == "(":
            self.pos += 1
            node = self.expr()
            if not self.take(")"):
                raise self.error("expected ')'")
            return node
        if ch.isdigit() or ch == ".":
            return self.number()
        if ch.isalpha() or ch == "_":
            start = self.pos
            while self.pos < len(self.src) and (
                chr(self.src[self.pos]).isalnum() or self.src[self.pos] == ord("_")
            ):
                self.pos += 1
            name = self.src[start:self.pos].decode()
            if name == "z":
                return Var()
            if name == "pi":
                return Const(math.pi)
            if name in FUNCTIONS:
                if not self.take("("):
                    raise self.error(f"expected '(' after {name}")
                arg = self.expr()
                if not self.take(")"):
                    raise self.error("expected ')'")
                return Unary(name, arg)
            raise self.error(f"unknown identifier {name!r}", start)
        raise self.error(f"unexpected character {ch!r}")

    def number(self) -> Expr:
        start = self.pos
        src = self.src
        while self.pos < len(src) and (chr(src[self.pos]).isdigit() or src[self.pos] == ord(".")):
            self.pos += 1
        if self.pos < len(src) and src[self.pos] in b"eE":
            mark = self.pos
            self.pos += 1
            if self.pos < len(src) and src[self.pos] in b"+-":
                self.pos += 1
            if self.pos < len(src) and chr(src[self.pos]).isdigit():
                while self.pos < len(src) and chr(src[self.pos]).isdigit():
                    self.pos += 1
            else:
                self.pos = mark
        text = src[start:self.pos].decode()
        try:
            return Const(float(text))
        except ValueError:
            raise self.error(f"malformed number {text!r}", start) from None


def parse(text: str) -> Expr:
    """Parse ``text`` into an expression tree."""
    return _Parser(text).parse()


# ---------------------------------------------------------------- evaluation


def _depends_on_z(e: Expr) -> bool:
    if isinstance(e, Var):
        return True
    if isinstance(e, Unary):
        return _depends_on_z(e.arg)
    if isinstance(e, Binary):
        return _depends_on_z(e.left) or _depends_on_z(e.right)
    return False


def evaluate(e: Expr, z: ArrayLike) -> ArrayLike:
    """Evaluate ``e`` at ``z`` (scalar or array). Raises ExprDomainError."""
    scalar = np.ndim(z) == 0
    out = _eval(e, np.asarray(z, dtype=float))
    if scalar:
        return float(out)
    return np.broadcast_to(out, np.shape(z)).astype(float)


def _eval(e: Expr, z: np.ndarray) -> np.ndarray:
    if isinstance(e, Const):
        return np.asarray(e.value)
    if isinstance(e, Var):
        return z
    if isinstance(e, Unary):
        a = _eval(e.arg, z)
        if e.op == "neg":
            return -a
        if e.op == "exp":
            return np.exp(a)
        if e.op == "sin":
            return np.sin(a)
        if e.op == "cos":
            return np.cos(a)
        if e.op == "sqrt":
            if np.any(a < 0):
                raise ExprDomainError("sqrt of a negative number")
            return np.sqrt(a)
        raise ValueError(f"unknown function {e.op}")
    if isinstance(e, Binary):
        a = _eval(e.left, z)
        b = _eval(e.right, z)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            if np.any(b == 0):
                raise ExprDomainError("division by zero")
            return a / b
        if e.op == "^":
            p = float(b)
            if p < 0 and np.any(a == 0):
                raise ExprDomainError("division by zero")
            if not float(p).is_integer() and np.any(a < 0):
                raise ExprDomainError("fractional power of a negative number")
            return np.power(a, p)
        raise ValueError(f"unknown operator {e.op}")
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------- construction helpers
# Light constant folding keeps derivative trees small.


def _num(e: Expr) -> float | None:
    return e.value if isinstance(e, Const) else None


def _neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    return Unary("neg", a)


def _add(a: Expr, b: Expr) -> Expr:
    if _num(a) == 0:
        return b
    if _num(b) == 0:
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    return Binary("+", a, b)


def _sub(a: Expr, b: Expr) -> Expr:
    if _num(b) == 0:
        return a
    if _num(a) == 0:
        return _neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    return Binary("-", a, b)


def _mul(a: Expr, b: Expr) -> Expr:
    if _num(a) == 0 or _num(b) == 0:
        return Const(0.0)
    if _num(a) == 1:
        return b
    if _num(b) == 1:
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return Binary("*", a, b)


def _div(a: Expr, b: Expr) -> Expr:
    if _num(a) == 0:
        return Const(0.0)
    if _num(b) == 1:
        return a
    return Binary("/", a, b)


def _pow(a: Expr, p: float) -> Expr:
    if p == 0:
        return Const(1.0)
    if p == 1:
        return a
    return Binary("^", a, Const(float(p)))


# ---------------------------------------------------------------- differentiation


def differentiate(e: Expr) -> Expr:
    """Symbolic d/dz of ``e``."""
    if isinstance(e, Const):
        return Const(0.0)
    if isinstance(e, Var):
        return Const(1.0)
    if isinstance(e, Unary):
        u = e.arg
        du = differentiate(u)
        if e.op == "neg":
            return _neg(du)
        if e.op == "exp":
            return _mul(e, du)
        if e.op == "sin":
            return _mul(Unary("cos", u), du)
        if e.op == "cos":
            return _neg(_mul(Unary("sin", u), du))
        if e.op == "sqrt":
            return _div(du, _mul(Const(2.0), e))
        raise ValueError(f"unknown function {e.op}")
    if isinstance(e, Binary):
        a, b = e.left, e.right
        if e.op == "+":
            return _add(differentiate(a), differentiate(b))
        if e.op == "-":
            return _sub(differentiate(a), differentiate(b))
        if e.op == "*":
            return _add(_mul(differentiate(a), b), _mul(a, differentiate(b)))
        if e.op == "/":
            num = _sub(_mul(differentiate(a), b), _mul(a, differentiate(b)))
            return _div(num, _pow(b, 2.0))
        if e.op == "^":
            p = _num(b)
            assert p is not None
            return _mul(_mul(Const(p), _pow(a, p - 1.0)), differentiate(a))
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------- printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def to_string(e: Expr) -> str:
    """Canonical text form; ``parse(to_string(e))`` evaluates identically to ``e``."""
    return _show(e)


def _show(e: Expr) -> str:
    if isinstance(e, Const):
        text = repr(float(e.value))
        if text in ("inf", "-inf", "nan"):
            raise ValueError("non-finite constant cannot be printed")
        return f"({text})" if e.value < 0 or text.startswith("-") else text
    if isinstance(e, Var):
        return "z"
    if isinstance(e, Unary):
        if e.op == "neg":
            return "-" + _wrap(e.arg, _PREC["neg"], strict=False)
        return f"{e.op}({_show(e.arg)})"
    if isinstance(e, Binary):
        p = _PREC[e.op]
        if e.op == "^":
            return f"{_wrap(e.left, p, strict=True)}^{_show(e.right)}"
        left = _wrap(e.left, p, strict=False)
        right = _wrap(e.right, p, strict=True)
        return f"{left}{e.op}{right}"
    raise TypeError(f"not an expression: {e!r}")


def _prec(e: Expr) -> int:
    if isinstance(e, Binary):
        return _PREC[e.op]
    if isinstance(e, Unary) and e.op == "neg":
        return _PREC["neg"]
    return 5


def _wrap(e: Expr, parent: int, strict: bool) -> str:
    inner = _show(e)
    mine = _prec(e)
    if mine < parent or (strict and mine == parent):
        return f"({inner})"
    return inner
