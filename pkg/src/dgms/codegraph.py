"""Language-neutral ASTs and program graphs built from them.

A program graph has one node per AST node and three relations: ``Child``
(parent to child), ``NextToken`` (each terminal to its successor in source
order) and ``LastLexicalUse`` (each identifier occurrence to the previous
occurrence with the same spelling).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .graph import GraphBuilder, GraphKind, LabeledMultigraph

CHILD = "Child"
NEXT_TOKEN = "NextToken"
LAST_LEXICAL_USE = "LastLexicalUse"
CODE_RELATIONS = (CHILD, NEXT_TOKEN, LAST_LEXICAL_USE)


class AstFormatError(ValueError):
    pass


@dataclass(frozen=True)
class AstNode:
    kind: str
    value: str | None = None
    is_identifier: bool = False
    source_order: int | None = None

    @property
    def is_terminal(self) -> bool:
        return self.value is not None


@dataclass
class Ast:
    """Nested construction form used by front ends before flattening."""

    kind: str
    value: str | None = None
    is_identifier: bool = False
    children: list["Ast"] = field(default_factory=list)


@dataclass(frozen=True)
class AstTree:
    nodes: tuple[AstNode, ...]
    children: dict[int, tuple[int, ...]]
    root: int = 0

    @classmethod
    def from_nested(cls, root: Ast) -> "AstTree":
        """Flatten in pre-order; terminals get ``source_order`` left to right."""
        nodes: list[AstNode] = []
        children: dict[int, tuple[int, ...]] = {}
        order = 0

        def visit(a: Ast) -> int:
            nonlocal order
            if a.value is not None and a.children:
                raise AstFormatError(f"terminal {a.kind!r} cannot have children")
            if a.value is None and not a.children:
                raise AstFormatError(f"non-terminal {a.kind!r} needs at least one child")
            if not a.kind:
                raise AstFormatError("node kind must be non-empty")
            nid = len(nodes)
            if a.value is not None:
                nodes.append(AstNode(a.kind, a.value, a.is_identifier, order))
                order += 1
                return nid
            nodes.append(AstNode(a.kind))
            children[nid] = tuple(visit(c) for c in a.children)
            return nid

        visit(root)
        return cls(tuple(nodes), children, 0)

    def to_nested(self, nid: int | None = None) -> Ast:
        nid = self.root if nid is None else nid
        n = self.nodes[nid]
        if n.is_terminal:
            return Ast(n.kind, n.value, n.is_identifier)
        return Ast(n.kind, children=[self.to_nested(c) for c in self.children[nid]])

    def terminals(self) -> list[int]:
        """Terminal node ids in source order."""
        ts = [i for i, n in enumerate(self.nodes) if n.is_terminal]
        return sorted(ts, key=lambda i: self.nodes[i].source_order)

    def __len__(self) -> int:
        return len(self.nodes)


# -- AST JSON -----------------------------------------------------------------


def _ast_to_obj(a: Ast) -> dict:
    if a.value is not None:
        return {"kind": a.kind, "value": a.value, "id": a.is_identifier}
    return {"kind": a.kind, "children": [_ast_to_obj(c) for c in a.children]}


def encode_ast_json(tree: AstTree) -> bytes:
    return json.dumps(_ast_to_obj(tree.to_nested()), ensure_ascii=False, separators=(",", ":")).encode(
        "utf-8"
    )


def _obj_to_ast(obj: object, path: str) -> Ast:
    if not isinstance(obj, dict):
        raise AstFormatError(f"{path}: AST node must be an object")
    kind = obj.get("kind")
    if not isinstance(kind, str) or not kind:
        raise AstFormatError(f"{path}: 'kind' must be a non-empty string")
    value = obj.get("value")
    if value is not None and (not isinstance(value, str) or not value):
        raise AstFormatError(f"{path}: 'value' must be a non-empty string")
    is_id = obj.get("id", False)
    if not isinstance(is_id, bool):
        raise AstFormatError(f"{path}: 'id' must be a boolean")
    kids = obj.get("children", [])
    if not isinstance(kids, list):
        raise AstFormatError(f"{path}: 'children' must be a list")
    if value is not None and kids:
        raise AstFormatError(f"{path}: terminal node has children")
    if value is None and not kids:
        raise AstFormatError(f"{path}: non-terminal node has no children")
    return Ast(kind, value, is_id, [_obj_to_ast(c, f"{path}.children[{i}]") for i, c in enumerate(kids)])


def ast_from_obj(obj: object) -> AstTree:
    return AstTree.from_nested(_obj_to_ast(obj, "root"))


def decode_ast_json(data: bytes | str) -> AstTree:
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as exc:
        raise AstFormatError(f"invalid JSON: {exc}") from None
    return ast_from_obj(obj)


# -- program graph ------------------------------------------------------------


def build_program_graph(tree: AstTree) -> LabeledMultigraph:
    b = GraphBuilder(GraphKind.CODE, relations=list(CODE_RELATIONS))
    for n in tree.nodes:
        b.add_node(n.value if n.is_terminal else n.kind, n.is_terminal)
    for parent, kids in tree.children.items():
        for c in kids:
            b.add_edge(parent, c, CHILD)
    terms = tree.terminals()
    for a, c in zip(terms, terms[1:]):
        b.add_edge(a, c, NEXT_TOKEN)
    last_seen: dict[str, int] = {}
    for t in terms:
        node = tree.nodes[t]
        if not node.is_identifier:
            continue
        if node.value in last_seen:
            b.add_edge(t, last_seen[node.value], LAST_LEXICAL_USE)
        last_seen[node.value] = t
    return b.build()
