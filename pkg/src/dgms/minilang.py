"""Recursive-descent front end for MiniLang, a small imperative language.

Grammar::

    program := stmt*
    stmt    := assign | if | while | return | exprStmt
    assign  := IDENT "=" expr
    if      := "if" expr block ("else" block)?
    while   := "while" expr block
    return  := "return" expr?
    block   := "{" stmt* "}"
    expr    := term (("+"|"-"|"*"|"/"|"<"|">"|"==") term)*
    term    := IDENT | INT | STRING | call | "(" expr ")"
    call    := IDENT "(" (expr ("," expr)*)? ")"

Keywords, operators and punctuation are kept as AST terminals so they show
up as syntax tokens in the program graph. Binary operators associate left.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .codegraph import Ast, AstTree

KEYWORDS = {"if", "else", "while", "return"}
BINARY_OPS = {"+", "-", "*", "/", "<", ">", "=="}

_TOKEN_SPEC = [
    ("WS", r"[ \t\r]+"),
    ("NL", r"\n"),
    ("COMMENT", r"#[^\n]*"),
    ("IDENT", r"[A-Za-z_][A-Za-z0-9_]*"),
    ("INT", r"[0-9]+"),
    ("STRING", r'"[^"\n]*"'),
    ("OP", r"==|[+\-*/<>=]"),
    ("PUNCT", r"[(){},]"),
]
_MASTER = re.compile("|".join(f"(?P<{name}>{pat})" for name, pat in _TOKEN_SPEC))


class MiniLangSyntaxError(SyntaxError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Token:
    type: str  # IDENT, KEYWORD, INT, STRING, OP, PUNCT, EOF
    text: str
    line: int
    col: int


def tokenize(source: str) -> list[Token]:
    tokens = []
    line, line_start, pos = 1, 0, 0
    while pos < len(source):
        m = _MASTER.match(source, pos)
        if m is None:
            raise MiniLangSyntaxError(f"unexpected character {source[pos]!r}", line, pos - line_start + 1)
        kind, text = m.lastgroup, m.group()
        if kind == "NL":
            line, line_start = line + 1, m.end()
        elif kind not in ("WS", "COMMENT"):
            if kind == "IDENT" and text in KEYWORDS:
                kind = "KEYWORD"
            tokens.append(Token(kind, text, line, pos - line_start + 1))
        pos = m.end()
    tokens.append(Token("EOF", "", line, pos - line_start + 1))
    return tokens


class Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def peek(self, offset: int = 1) -> Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def fail(self, message: str):
        t = self.tok
        found = "end of input" if t.type == "EOF" else repr(t.text)
        raise MiniLangSyntaxError(f"{message}, found {found}", t.line, t.col)

    def check(self, type_: str, text: str | None = None) -> bool:
        return self.tok.type == type_ and (text is None or self.tok.text == text)

    def expect(self, type_: str, text: str | None = None) -> Token:
        if not self.check(type_, text):
            self.fail(f"expected {text or type_}")
        t = self.tok
        self.pos += 1
        return t

    def terminal(self, type_: str, text: str | None = None) -> Ast:
        t = self.expect(type_, text)
        kind = {
            "IDENT": "Identifier",
            "KEYWORD": "Keyword",
            "INT": "IntLiteral",
            "STRING": "StringLiteral",
            "OP": "Op",
            "PUNCT": "Punct",
        }[t.type]
        return Ast(kind, t.text, is_identifier=t.type == "IDENT")

    def program(self) -> Ast:
        stmts = []
        while not self.check("EOF"):
            stmts.append(self.statement())
        if not stmts:
            self.fail("expected at least one statement")
        return Ast("Program", children=stmts)

    def statement(self) -> Ast:
        if self.check("KEYWORD", "if"):
            return self.if_stmt()
        if self.check("KEYWORD", "while"):
            kw = self.terminal("KEYWORD", "while")
            return Ast("While", children=[kw, self.expr(), self.block()])
        if self.check("KEYWORD", "return"):
            kw = self.terminal("KEYWORD", "return")
            if self.starts_expr():
                return Ast("Return", children=[kw, self.expr()])
            return Ast("Return", children=[kw])
        if self.check("IDENT") and self.peek().type == "OP" and self.peek().text == "=":
            target = self.terminal("IDENT")
            eq = self.terminal("OP", "=")
            return Ast("Assign", children=[target, eq, self.expr()])
        if self.starts_expr():
            return Ast("ExprStmt", children=[self.expr()])
        self.fail("expected a statement")

    def if_stmt(self) -> Ast:
        kids = [self.terminal("KEYWORD", "if"), self.expr(), self.block()]
        if self.check("KEYWORD", "else"):
            kids += [self.terminal("KEYWORD", "else"), self.block()]
        return Ast("If", children=kids)

    def block(self) -> Ast:
        kids = [self.terminal("PUNCT", "{")]
        while not self.check("PUNCT", "}"):
            if self.check("EOF"):
                self.fail("expected '}'")
            kids.append(self.statement())
        kids.append(self.terminal("PUNCT", "}"))
        return Ast("Block", children=kids)

    def starts_expr(self) -> bool:
        return self.tok.type in ("IDENT", "INT", "STRING") or self.check("PUNCT", "(")

    def expr(self) -> Ast:
        left = self.term()
        while self.tok.type == "OP" and self.tok.text in BINARY_OPS:
            op = self.terminal("OP")
            left = Ast("BinOp", children=[left, op, self.term()])
        return left

    def term(self) -> Ast:
        if self.check("INT"):
            return self.terminal("INT")
        if self.check("STRING"):
            return self.terminal("STRING")
        if self.check("PUNCT", "("):
            lp = self.terminal("PUNCT", "(")
            inner = self.expr()
            return Ast("Paren", children=[lp, inner, self.terminal("PUNCT", ")")])
        if self.check("IDENT"):
            name = self.terminal("IDENT")
            if self.check("PUNCT", "("):
                kids = [name, self.terminal("PUNCT", "(")]
                if not self.check("PUNCT", ")"):
                    kids.append(self.expr())
                    while self.check("PUNCT", ","):
                        kids += [self.terminal("PUNCT", ","), self.expr()]
                kids.append(self.terminal("PUNCT", ")"))
                return Ast("Call", children=kids)
            return name
        self.fail("expected an expression")


def parse_minilang(source: str) -> AstTree:
    """Parse MiniLang source into an :class:`AstTree`.

    Raises :class:`MiniLangSyntaxError` carrying ``line``/``col`` on bad input.
    """
    return AstTree.from_nested(Parser(tokenize(source)).program())
