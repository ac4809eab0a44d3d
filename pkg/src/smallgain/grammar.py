"""Text grammar for comparison functions used in problem files.

::

    expr  := comp ('+' comp)*
    comp  := unary ('.' unary)*          # f . g is the composition f o g
    unary := NUMBER '*' atom | atom
    atom  := 'id' | 's' | 's^' NUMBER | 's/(1+s)' | NUMBER
           | 'inv(' expr ')' | 'min(' expr ',' expr ')' | '(' expr ')'

``k*s`` is a linear scale, ``a*s/(1+s)`` a saturation, a bare number a
constant offset (``0`` is the zero function).  A trailing ``:K`` or
``:Kinf`` records a claimed class; the claim is checked later
with :func:`smallgain.calculus.classify`, not at parse time.
"""

from __future__ import annotations

import re

import numpy as np

from smallgain import calculus as cc
from smallgain.calculus import FnClass, ScalarFn

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[+*/^().,:]))")

_CLASS_NAMES = {"K": FnClass.K, "Kinf": FnClass.KINF, "KInf": FnClass.KINF,
                "Monotone": FnClass.MONOTONE, "PositiveAffine": FnClass.POSITIVE_AFFINE}


class GrammarError(ValueError):
    def __init__(self, text: str, pos: int, message: str):
        super().__init__(f"{message} at position {pos} in {text!r}")
        self.text = text
        self.pos = pos


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    text_stripped_end = len(text.rstrip())
    while pos < text_stripped_end:
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise GrammarError(text, pos, "unexpected character")
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, cap: float):
        self.text = text
        self.cap = cap
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self, k: int = 0):
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def take(self, value: str | None = None, kind: str | None = None):
        tok = self.peek()
        if (value is not None and tok[1] != value) or (kind is not None and tok[0] != kind):
            want = value if value is not None else kind
            raise GrammarError(self.text, tok[2], f"expected {want!r}, found {tok[1] or 'end'!r}")
        self.i += 1
        return tok

    def at(self, value: str) -> bool:
        return self.peek()[1] == value and self.peek()[0] in ("op", "name")

    def parse(self) -> tuple[ScalarFn, FnClass | None]:
        fn = self.expr()
        claim = None
        if self.at(":"):
            self.take(":")
            name = self.take(kind="name")
            if name[1] not in _CLASS_NAMES:
                raise GrammarError(self.text, name[2], f"unknown class {name[1]!r}")
            claim = _CLASS_NAMES[name[1]]
        self.take(kind="end")
        return fn, claim

    def expr(self) -> ScalarFn:
        fn = self.comp()
        while self.at("+"):
            self.take("+")
            fn = cc.fsum(fn, self.comp())
        return fn

    def comp(self) -> ScalarFn:
        parts = [self.unary()]
        while self.at("."):
            self.take(".")
            parts.append(self.unary())
        # build right to left so inner caps are known before outer compose
        fn = parts[-1]
        for outer in reversed(parts[:-1]):
            fn = cc.compose(_widen(outer, fn), fn)
        return fn

    def unary(self) -> ScalarFn:
        tok = self.peek()
        if tok[0] == "num" and self.peek(1)[1] == "*":
            k = float(self.take(kind="num")[1])
            self.take("*")
            if self._at_s():
                return self.s_form(k)
            inner = self.atom()
            return k * inner
        return self.atom()

    def _at_s(self) -> bool:
        tok = self.peek()
        return tok[0] == "name" and tok[1] == "s"

    def s_form(self, k: float | None) -> ScalarFn:
        self.take("s")
        if self.at("^"):
            self.take("^")
            p = float(self.take(kind="num")[1])
            base = cc.power(p, self.cap)
            return base if k is None else k * base
        if self.at("/"):
            start = self.peek()[2]
            self.take("/")
            self.take("(")
            one = self.take(kind="num")
            if float(one[1]) != 1.0:
                raise GrammarError(self.text, start, "only s/(1+s) saturation is supported")
            self.take("+")
            self.take("s")
            self.take(")")
            return cc.saturation(1.0 if k is None else k, self.cap)
        if k is None:
            return cc.identity(self.cap)
        return cc.linear(k, self.cap)

    def atom(self) -> ScalarFn:
        tok = self.peek()
        if tok[0] == "num":
            c = float(self.take(kind="num")[1])
            return cc.constant(c, self.cap)
        if tok[0] == "name":
            if tok[1] == "s":
                return self.s_form(None)
            if tok[1] == "id":
                self.take()
                return cc.identity(self.cap)
            if tok[1] == "inv":
                self.take()
                self.take("(")
                inner = self.expr()
                self.take(")")
                try:
                    return cc.inverse(inner)
                except cc.NotStrictlyMonotoneError as exc:
                    raise GrammarError(self.text, tok[2], str(exc)) from None
            if tok[1] == "min":
                self.take()
                self.take("(")
                a = self.expr()
                self.take(",")
                b = self.expr()
                self.take(")")
                return cc.fmin(a, b)
            raise GrammarError(self.text, tok[2], f"unknown name {tok[1]!r}")
        if tok[1] == "(":
            self.take("(")
            inner = self.expr()
            self.take(")")
            return inner
        raise GrammarError(self.text, tok[2], f"unexpected token {tok[1] or 'end'!r}")


def _widen(outer: ScalarFn, inner: ScalarFn) -> ScalarFn:
    """Stretch an outer atom's cap to cover the inner range (parsed atoms only)."""
    if outer.op in ("id", "lin", "pow", "sat"):
        top = float(inner._eval(np.asarray(inner.cap)))
        if top > outer.cap:
            return cc.with_cap(outer, top)
    return outer


def parse_annotated(text: str, cap: float = cc.DEFAULT_CAP) -> tuple[ScalarFn, FnClass | None]:
    """Parse ``text`` and return ``(function, claimed_class_or_None)``."""
    return _Parser(text, float(cap)).parse()


def parse_function(text: str, cap: float = cc.DEFAULT_CAP) -> ScalarFn:
    return parse_annotated(text, cap)[0]
