"""Minimal S-expression reader with source positions.

Round and square brackets both make lists (square lists remember it, for
interval literals like ``[0 1]``).  ``;`` starts a line comment and double
quotes delimit strings.
"""

from __future__ import annotations

from fractions import Fraction
from typing import List, Union


class SExprError(ValueError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


class Sym(str):
    line = 0
    col = 0

    def __new__(cls, value: str, line: int = 0, col: int = 0):
        s = super().__new__(cls, value)
        s.line = line
        s.col = col
        return s


class Str(Sym):
    """A double-quoted string literal."""


class SList(list):
    def __init__(self, items=(), line: int = 0, col: int = 0, square: bool = False):
        super().__init__(items)
        self.line = line
        self.col = col
        self.square = square


SExpr = Union[Sym, SList]

_CLOSE = {"(": ")", "[": "]"}


def read_all(text: str) -> List[SExpr]:
    """Parse every top-level expression in ``text``."""
    out: List[SExpr] = []
    stack: List[SList] = []
    opener: List[str] = []
    i, n = 0, len(text)
    line, col = 1, 1

    def emit(x):
        (stack[-1] if stack else out).append(x)

    while i < n:
        c = text[i]
        if c == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if c in " \t\r\f":
            i += 1
            col += 1
            continue
        if c == ";":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if c in "([":
            stack.append(SList((), line, col, c == "["))
            opener.append(c)
            i += 1
            col += 1
            continue
        if c in ")]":
            if not stack:
                raise SExprError(f"unexpected '{c}'", line, col)
            want = _CLOSE[opener.pop()]
            if c != want:
                raise SExprError(f"expected '{want}' but found '{c}'", line, col)
            done = stack.pop()
            emit(done)
            i += 1
            col += 1
            continue
        if c == '"':
            j = i + 1
            while j < n and text[j] != '"':
                if text[j] == "\n":
                    raise SExprError("unterminated string", line, col)
                j += 1
            if j >= n:
                raise SExprError("unterminated string", line, col)
            emit(Str(text[i + 1 : j], line, col))
            col += j + 1 - i
            i = j + 1
            continue
        j = i
        while j < n and text[j] not in ' \t\r\f\n()[];"':
            j += 1
        emit(Sym(text[i:j], line, col))
        col += j - i
        i = j
    if stack:
        s = stack[-1]
        raise SExprError("unclosed '" + ("[" if s.square else "(") + "'", s.line, s.col)
    return out


def parse_number(s: Sym) -> Fraction:
    """Integer, ``num/den`` or decimal literal as an exact rational."""
    if isinstance(s, SList) or isinstance(s, Str):
        raise SExprError("number expected", getattr(s, "line", 0), getattr(s, "col", 0))
    text = str(s)
    if not text or not (text[0].isdigit() or (text[0] in "+-." and len(text) > 1)):
        raise SExprError(f"number expected, got '{text}'", s.line, s.col)
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise SExprError(f"malformed number '{text}'", s.line, s.col) from None


def is_number(s) -> bool:
    if not isinstance(s, Sym) or isinstance(s, Str):
        return False
    try:
        parse_number(s)
    except SExprError:
        return False
    return True
