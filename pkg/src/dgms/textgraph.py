"""Text graphs from constituency parses plus a word-order chain."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .graph import GraphBuilder, GraphKind, LabeledMultigraph

CONSTITUENCY = "Constituency"
NEXT_WORD = "NextWord"
TEXT_RELATIONS = (CONSTITUENCY, NEXT_WORD)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class ParseError(ValueError):
    def __init__(self, message: str, position: int | None = None):
        if position is not None:
            message = f"{message} at position {position}"
        super().__init__(message)
        self.position = position


@dataclass(frozen=True)
class ParseTree:
    """A constituency tree node. Leaves (no children) carry a word as label."""

    label: str
    children: tuple["ParseTree", ...] = ()

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def leaves(self) -> list[str]:
        if self.is_leaf:
            return [self.label]
        return [w for c in self.children for w in c.leaves()]

    def symbols(self) -> set[str]:
        if self.is_leaf:
            return set()
        out = {self.label}
        for c in self.children:
            out |= c.symbols()
        return out

    def __str__(self) -> str:
        if self.is_leaf:
            return self.label
        return "(" + " ".join([self.label, *map(str, self.children)]) + ")"


def _lex_brackets(text: str):
    for m in re.finditer(r"\(|\)|[^\s()]+", text):
        yield m.group(), m.start()


def parse_bracketed(text: str) -> ParseTree:
    """Parse a Penn-Treebank-style bracketed tree such as ``(S (NP a) b)``."""
    tokens = list(_lex_brackets(text))
    if not tokens:
        raise ParseError("empty input", 0)
    pos = 0

    def node():
        nonlocal pos
        tok, at = tokens[pos]
        if tok != "(":
            raise ParseError(f"expected '(' but found {tok!r}", at)
        pos += 1
        if pos >= len(tokens):
            raise ParseError("unbalanced parentheses", len(text))
        label, at = tokens[pos]
        if label in ("(", ")"):
            raise ParseError("empty label", at)
        pos += 1
        children = []
        while True:
            if pos >= len(tokens):
                raise ParseError("unbalanced parentheses", len(text))
            tok, at = tokens[pos]
            if tok == ")":
                pos += 1
                break
            if tok == "(":
                children.append(node())
            else:
                children.append(ParseTree(tok))
                pos += 1
        if not children:
            raise ParseError(f"constituent {label!r} has no children", at)
        return ParseTree(label, tuple(children))

    tree = node()
    if pos != len(tokens):
        raise ParseError("trailing input after tree", tokens[pos][1])
    return tree


def tokenize(text: str) -> list[str]:
    """Whitespace-and-punctuation tokenization used for raw queries and docs."""
    return _TOKEN_RE.findall(text)


def flat_parse(tokens: list[str]) -> ParseTree:
    """Fallback parse: one ``S`` root with every token as a direct leaf."""
    if not tokens:
        raise ValueError("flat_parse needs at least one token")
    return ParseTree("S", tuple(ParseTree(t) for t in tokens))


def build_text_graph(parse: ParseTree) -> LabeledMultigraph:
    """One node per tree node, Constituency edges parent->child, NextWord chain."""
    b = GraphBuilder(GraphKind.TEXT, relations=list(TEXT_RELATIONS))
    leaf_ids: list[int] = []

    def visit(t: ParseTree) -> int:
        if t.is_leaf:
            nid = b.add_node(t.label.lower(), True)
            leaf_ids.append(nid)
            return nid
        nid = b.add_node(t.label, False)
        for c in t.children:
            b.add_edge(nid, visit(c), CONSTITUENCY)
        return nid

    visit(parse)
    for a, c in zip(leaf_ids, leaf_ids[1:]):
        b.add_edge(a, c, NEXT_WORD)
    return b.build()


def text_graph_from_string(text: str) -> LabeledMultigraph:
    """Bracketed parse when the text looks like one, otherwise the flat fallback."""
    stripped = text.strip()
    if stripped.startswith("("):
        return build_text_graph(parse_bracketed(stripped))
    return build_text_graph(flat_parse(tokenize(stripped)))
