"""Recursive-descent parser for the expression language.

Grammar (EBNF)::

    expr    = term , { ("+" | "-") , term } ;
    term    = power , { ("*" | "/") , power } ;
    power   = unary , [ ("**" | "^") , power ] ;          (* right associative *)
    unary   = ("-" | "+") , unary | atom ;
    atom    = number | identifier | call | "(" , expr , ")" ;
    call    = function , "(" , expr , { "," , expr } , ")" ;

Precedence, tightest first: unary minus, power, multiplicative, additive. A minus
directly in front of a numeric literal folds into a negative constant.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .expr import BINARY_OPS, TERNARY_OPS, UNARY_OPS, Binary, Const, Expr, Ternary, Unary, Var, complexity
from .signature import Signature

ARITY = {**{op: 1 for op in UNARY_OPS}, **{op: 2 for op in BINARY_OPS}, **{op: 3 for op in TERNARY_OPS}}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(),]))"
)


class DslError(ValueError):
    def __init__(self, message: str, position: int | None = None):
        self.position = position
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)


class DslSyntaxError(DslError):
    pass


class UnknownIdentifierError(DslError):
    def __init__(self, name: str, position: int | None = None, kind: str = "identifier"):
        self.name = name
        super().__init__(f"unknown {kind} {name!r}", position)


class ExprTooLargeError(DslError):
    pass


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise DslSyntaxError(f"unexpected character {text[bad]!r}", bad)
        kind = m.lastgroup
        start = m.start(kind)
        toks.append(_Tok(kind, m.group(kind), start))
        pos = m.end()
    toks.append(_Tok("end", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str, sig: Signature | None):
        self.toks = _tokenize(text)
        self.i = 0
        self.sig = sig

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> _Tok:
        tok = self.take()
        if tok.text != text:
            found = tok.text or "end of input"
            raise DslSyntaxError(f"expected {text!r}, found {found!r}", tok.pos)
        return tok

    def expr(self) -> Expr:
        node = self.term()
        while self.peek().text in ("+", "-"):
            op = "add" if self.take().text == "+" else "sub"
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.power()
        while self.peek().text in ("*", "/"):
            op = "mul" if self.take().text == "*" else "div"
            node = Binary(op, node, self.power())
        return node

    def power(self) -> Expr:
        base = self.unary()
        if self.peek().text in ("**", "^"):
            self.take()
            return Binary("pow", base, self.power())
        return base

    def unary(self) -> Expr:
        tok = self.peek()
        if tok.text == "-":
            self.take()
            nxt = self.peek()
            if nxt.kind == "num":
                self.take()
                return Const(-float(nxt.text))
            return Unary("neg", self.unary())
        if tok.text == "+":
            self.take()
            return self.unary()
        return self.atom()

    def atom(self) -> Expr:
        tok = self.take()
        if tok.kind == "num":
            return Const(float(tok.text))
        if tok.text == "(":
            node = self.expr()
            self.expect(")")
            return node
        if tok.kind == "ident":
            if self.peek().text == "(":
                return self.call(tok)
            if self.sig is not None and tok.text not in self.sig:
                raise UnknownIdentifierError(tok.text, tok.pos, "variable")
            if tok.text in ARITY and (self.sig is None or tok.text not in self.sig):
                raise DslSyntaxError(f"function {tok.text!r} used without arguments", tok.pos)
            return Var(tok.text)
        found = tok.text or "end of input"
        raise DslSyntaxError(f"unexpected {found!r}", tok.pos)

    def call(self, name: _Tok) -> Expr:
        if name.text not in ARITY:
            raise UnknownIdentifierError(name.text, name.pos, "function")
        self.expect("(")
        args = [self.expr()]
        while self.peek().text == ",":
            self.take()
            args.append(self.expr())
        self.expect(")")
        arity = ARITY[name.text]
        if len(args) != arity:
            raise DslSyntaxError(
                f"{name.text} takes {arity} argument(s), got {len(args)}", name.pos
            )
        if arity == 1:
            return Unary(name.text, args[0])
        if arity == 2:
            return Binary(name.text, *args)
        return Ternary(name.text, *args)


def parse(text: str, sig: Signature | None = None, max_size: int | None = None) -> Expr:
    """Parse DSL text into an expression tree.

    Identifiers that are not functions must be variables of ``sig`` (when given).
    """
    p = _Parser(text, sig)
    node = p.expr()
    tok = p.peek()
    if tok.kind != "end":
        raise DslSyntaxError(f"unexpected {tok.text!r} after expression", tok.pos)
    if max_size is not None:
        n = complexity(node)
        if n > max_size:
            raise ExprTooLargeError(f"expression has {n} nodes, limit is {max_size}")
    return node
