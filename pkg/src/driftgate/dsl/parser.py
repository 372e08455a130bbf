"""Tokenizer and recursive-descent parser for rule text.

Grammar (EBNF, also published in docs/dsl.md):

    expr        = or_expr ;
    or_expr     = and_expr , { "or" , and_expr } ;
    and_expr    = not_expr , { "and" , not_expr } ;
    not_expr    = "not" , not_expr | comparison ;
    comparison  = additive , [ ( "<" | "<=" | ">" | ">=" | "=" | "==" ) , additive ] ;
    additive    = term , { ( "+" | "-" ) , term } ;
    term        = unary , { ( "*" | "/" ) , unary } ;
    unary       = "-" , unary | primary ;
    primary     = NUMBER | PARAM | IDENT | call | "(" , expr , ")" ;
    call        = IDENT , "(" , [ arglist ] , ")" ;
    arglist     = arg , { "," , arg } ;
    arg         = IDENT , "=" , expr | expr ;

Line comments start with "#" and run to end of line. Keyword arguments are
only recognized directly inside call parentheses; a comparison used as an
argument must be parenthesized or use "==".
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from ..errors import DslSyntaxError
from .nodes import (
    FUNCTIONS,
    PRICE_FIELDS,
    Arith,
    BoolOp,
    Compare,
    FuncCall,
    Literal,
    Neg,
    Node,
    Not,
    ParamRef,
    PriceRef,
)

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>\#[^\n]*)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<param>\$[A-Za-z_][A-Za-z0-9_]*)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|==|[<>=+\-*/(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # number | param | ident | op | end
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise DslSyntaxError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        raw = m.group()
        if kind not in ("ws", "comment"):
            tokens.append(Token(kind, raw, line, col))
        newlines = raw.count("\n")
        if newlines:
            line += newlines
            col = len(raw) - raw.rfind("\n")
        else:
            col += len(raw)
        pos = m.end()
    tokens.append(Token("end", "", line, col))
    return tokens


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.i = 0

    @property
    def cur(self) -> Token:
        return self.tokens[self.i]

    def advance(self) -> Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> Token:
        if self.cur.kind == "op" and self.cur.text == text:
            return self.advance()
        self.fail(f"expected {text!r}")

    def fail(self, message: str):
        tok = self.cur
        found = "end of input" if tok.kind == "end" else repr(tok.text)
        raise DslSyntaxError(f"{message}, found {found}", tok.line, tok.col)

    def at_op(self, *texts: str) -> bool:
        return self.cur.kind == "op" and self.cur.text in texts

    def at_keyword(self, word: str) -> bool:
        return self.cur.kind == "ident" and self.cur.text == word

    def parse(self) -> Node:
        node = self.or_expr()
        if self.cur.kind != "end":
            self.fail("unexpected trailing input")
        return node

    def or_expr(self) -> Node:
        node = self.and_expr()
        while self.at_keyword("or"):
            tok = self.advance()
            node = BoolOp(tok.line, tok.col, "or", node, self.and_expr())
        return node

    def and_expr(self) -> Node:
        node = self.not_expr()
        while self.at_keyword("and"):
            tok = self.advance()
            node = BoolOp(tok.line, tok.col, "and", node, self.not_expr())
        return node

    def not_expr(self) -> Node:
        if self.at_keyword("not"):
            tok = self.advance()
            return Not(tok.line, tok.col, self.not_expr())
        return self.comparison()

    def comparison(self) -> Node:
        node = self.additive()
        if self.at_op("<", "<=", ">", ">=", "=", "=="):
            tok = self.advance()
            op = "=" if tok.text == "==" else tok.text
            node = Compare(tok.line, tok.col, op, node, self.additive())
        return node

    def additive(self) -> Node:
        node = self.term()
        while self.at_op("+", "-"):
            tok = self.advance()
            node = Arith(tok.line, tok.col, tok.text, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.at_op("*", "/"):
            tok = self.advance()
            node = Arith(tok.line, tok.col, tok.text, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.at_op("-"):
            tok = self.advance()
            return Neg(tok.line, tok.col, self.unary())
        return self.primary()

    def primary(self) -> Node:
        tok = self.cur
        if tok.kind == "number":
            self.advance()
            return Literal(tok.line, tok.col, float(tok.text))
        if tok.kind == "param":
            self.advance()
            return ParamRef(tok.line, tok.col, tok.text[1:])
        if tok.kind == "ident":
            if tok.text in ("and", "or", "not"):
                self.fail("expected expression")
            self.advance()
            if self.at_op("("):
                return self.call(tok)
            if tok.text in PRICE_FIELDS:
                return PriceRef(tok.line, tok.col, tok.text)
            raise DslSyntaxError(f"unknown identifier {tok.text!r}", tok.line, tok.col)
        if self.at_op("("):
            self.advance()
            node = self.or_expr()
            self.expect(")")
            return node
        self.fail("expected expression")

    def call(self, name_tok: Token) -> Node:
        name = name_tok.text
        if name not in FUNCTIONS:
            raise DslSyntaxError(
                f"unknown function {name!r}", name_tok.line, name_tok.col
            )
        self.expect("(")
        args: list[Node] = []
        kwargs: list[tuple[str, Node]] = []
        if not self.at_op(")"):
            while True:
                if (
                    self.cur.kind == "ident"
                    and self.tokens[self.i + 1].kind == "op"
                    and self.tokens[self.i + 1].text == "="
                ):
                    key_tok = self.advance()
                    self.advance()  # '='
                    kwargs.append((key_tok.text, self.or_expr()))
                else:
                    if kwargs:
                        self.fail("positional argument after keyword argument")
                    args.append(self.or_expr())
                if self.at_op(","):
                    self.advance()
                    continue
                break
        self.expect(")")

        arities, allowed_kwargs, _ = FUNCTIONS[name]
        if len(args) not in arities:
            raise DslSyntaxError(
                f"{name}() takes {' or '.join(str(a) for a in arities)} "
                f"positional arguments, got {len(args)}",
                name_tok.line,
                name_tok.col,
            )
        for key, _node in kwargs:
            if key not in allowed_kwargs:
                raise DslSyntaxError(
                    f"{name}() got unexpected keyword argument {key!r}",
                    name_tok.line,
                    name_tok.col,
                )
        return FuncCall(name_tok.line, name_tok.col, name, tuple(args), tuple(kwargs))


def parse_rule(text: str) -> Node:
    """Parse rule text into an expression tree.

    Raises DslSyntaxError with line/column on malformed input and on
    unknown identifiers or functions.
    """
    if not text or not text.strip():
        raise DslSyntaxError("empty rule", 1, 1)
    return _Parser(tokenize(text)).parse()
