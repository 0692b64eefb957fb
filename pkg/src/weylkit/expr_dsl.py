"""Tiny expression language for real coefficient functions p_k(t).

Grammar (recursive descent, no implicit multiplication)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right associative
    atom   := NUMBER | 't' | FUNC '(' expr ')' | '(' expr ')'

FUNC is one of sin, cos, exp, log, sqrt, abs.  Numbers are decimal
literals with an optional exponent.

Example:
    >>> e = parse_expr("2*sin(t)+1")
    >>> eval_expr(e, 0.0)
    1.0
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "abs")


class ExprSyntaxError(ValueError):
    """Malformed expression text; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte {offset}")
        self.offset = offset


class UnknownIdentifier(ExprSyntaxError):
    pass


class ExprDomainError(ArithmeticError):
    """Evaluation left the real domain (log of non-positive, division by zero, ...)."""

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} at t={t!r}")
        self.t = t


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    pass


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
    name: str
    arg: "Node"


Node = Union[Num, Var, Neg, BinOp, Call]


@dataclass(frozen=True)
class Expression:
    root: Node
    text: str = ""

    def __call__(self, t):
        return eval_expr(self, t)

    def __str__(self) -> str:
        return to_text(self.root)

    @property
    def is_constant(self) -> bool:
        return not _has_var(self.root)


def _has_var(node: Node) -> bool:
    if isinstance(node, Var):
        return True
    if isinstance(node, Num):
        return False
    if isinstance(node, (Neg, Call)):
        return _has_var(node.arg)
    return _has_var(node.left) or _has_var(node.right)


# -- tokenizer ---------------------------------------------------------------

@dataclass(frozen=True)
class _Tok:
    kind: str  # num, ident, op, end
    text: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    i, n = 0, len(text)
    byte = lambda k: len(text[:k].encode("utf-8"))  # noqa: E731
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            while j < n and text[j].isdigit():
                j += 1
            if j < n and text[j] == ".":
                j += 1
                while j < n and text[j].isdigit():
                    j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    while k < n and text[k].isdigit():
                        k += 1
                    j = k
                else:
                    raise ExprSyntaxError("malformed exponent", byte(j))
            toks.append(_Tok("num", text[i:j], byte(i)))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            toks.append(_Tok("ident", text[i:j], byte(i)))
            i = j
            continue
        if c in "+-*/^()":
            toks.append(_Tok("op", c, byte(i)))
            i += 1
            continue
        raise ExprSyntaxError(f"unexpected character {c!r}", byte(i))
    toks.append(_Tok("end", "", byte(n)))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def cur(self) -> _Tok:
        return self.toks[self.i]

    def _take(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def _expect(self, s: str) -> None:
        if self.cur.kind != "op" or self.cur.text != s:
            raise ExprSyntaxError(f"expected {s!r}", self.cur.pos)
        self.i += 1

    def parse(self) -> Node:
        node = self.expr()
        if self.cur.kind != "end":
            raise ExprSyntaxError(f"unexpected {self.cur.text!r}", self.cur.pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.cur.kind == "op" and self.cur.text in "+-":
            op = self._take().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.cur.kind == "op" and self.cur.text in "*/":
            op = self._take().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.cur.kind == "op" and self.cur.text == "-":
            self.i += 1
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.cur.kind == "op" and self.cur.text == "^":
            self.i += 1
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        tok = self.cur
        if tok.kind == "num":
            self.i += 1
            return Num(float(tok.text))
        if tok.kind == "ident":
            self.i += 1
            if tok.text == "t":
                return Var()
            if tok.text in FUNCTIONS:
                self._expect("(")
                arg = self.expr()
                self._expect(")")
                return Call(tok.text, arg)
            raise UnknownIdentifier(f"unknown identifier {tok.text!r}", tok.pos)
        if tok.kind == "op" and tok.text == "(":
            self.i += 1
            node = self.expr()
            self._expect(")")
            return node
        what = "end of input" if tok.kind == "end" else repr(tok.text)
        raise ExprSyntaxError(f"unexpected {what}", tok.pos)


def parse_expr(text: str) -> Expression:
    """Parse ``text`` into an :class:`Expression`.

    Raises:
        ExprSyntaxError: malformed input (``offset`` gives the byte position).
        UnknownIdentifier: a name other than ``t`` or a whitelisted function.
    """
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 0)
    return Expression(_Parser(text).parse(), text)


# -- printing ----------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def _prec(node: Node) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return 3
    return 5


def to_text(node: Node) -> str:
    """Render with the minimal parentheses that re-parse to the same tree."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return "t"
    if isinstance(node, Call):
        return f"{node.name}({to_text(node.arg)})"
    if isinstance(node, Neg):
        inner = to_text(node.arg)
        return "-" + (f"({inner})" if _prec(node.arg) < 3 else inner)
    p = _PREC[node.op]
    left, right = to_text(node.left), to_text(node.right)
    if node.op == "^":
        if _prec(node.left) <= 4:
            left = f"({left})"
        if _prec(node.right) < 3:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(node.left) < p:
        left = f"({left})"
    if _prec(node.right) <= p:
        right = f"({right})"
    return f"{left} {node.op} {right}"


# -- evaluation --------------------------------------------------------------

def _first_bad(t, mask) -> float:
    if np.ndim(mask) == 0:
        return float(np.asarray(t).ravel()[0]) if np.ndim(t) else float(t)
    tt = np.broadcast_to(np.asarray(t, dtype=float), np.shape(mask))
    return float(tt[np.asarray(mask)].ravel()[0])


def _eval(node: Node, t):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return t
    if isinstance(node, Neg):
        return -_eval(node.arg, t)
    if isinstance(node, Call):
        x = _eval(node.arg, t)
        if node.name == "log":
            bad = np.asarray(x) <= 0
            if np.any(bad):
                raise ExprDomainError("log of non-positive value", _first_bad(t, bad))
            return np.log(x)
        if node.name == "sqrt":
            bad = np.asarray(x) < 0
            if np.any(bad):
                raise ExprDomainError("sqrt of negative value", _first_bad(t, bad))
            return np.sqrt(x)
        return getattr(np, node.name)(x)
    a = _eval(node.left, t)
    b = _eval(node.right, t)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        bad = np.asarray(b) == 0
        if np.any(bad):
            raise ExprDomainError("division by zero", _first_bad(t, bad))
        return a / b
    with np.errstate(all="ignore"):
        return np.power(a, b)


def eval_expr(e: Expression, t):
    """Evaluate at a real ``t`` (float or ndarray) in IEEE double.

    Raises ExprDomainError carrying the offending t when the result is not
    a finite real number.
    """
    scalar = np.ndim(t) == 0
    tt = float(t) if scalar else np.asarray(t, dtype=float)
    with np.errstate(all="ignore"):
        val = _eval(e.root, tt)
    val = np.asarray(val, dtype=float)
    finite = np.isfinite(val)
    if not np.all(finite):
        raise ExprDomainError("non-finite value", _first_bad(tt, ~finite))
    if scalar:
        return float(val)
    return np.broadcast_to(val, np.shape(tt)).copy()


__all__ = [
    "Expression", "Num", "Var", "Neg", "BinOp", "Call", "FUNCTIONS",
    "ExprSyntaxError", "UnknownIdentifier", "ExprDomainError",
    "parse_expr", "eval_expr", "to_text",
]
