"""Directed labeled multigraphs shared by text and code graphs.

Node ids are dense 0-based indices in insertion order. Edges are
``(src, dst, rel)`` triples with ``rel`` indexing into the graph's relation
vocabulary. Graphs are immutable once built; use :class:`GraphBuilder` to
construct them.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

INVERSE_SUFFIX = "⁻¹"  # "⁻¹"

Edge = tuple[int, int, int]


class GraphError(ValueError):
    """Raised for invalid graph arguments or illegal state transitions."""


class GraphFormatError(ValueError):
    """Malformed graph JSON. ``offset`` is a byte offset when known."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class GraphKind(str, enum.Enum):
    TEXT = "text"
    CODE = "code"


def inverse_name(name: str) -> str:
    return name + INVERSE_SUFFIX


def is_inverse_name(name: str) -> bool:
    return name.endswith(INVERSE_SUFFIX)


@dataclass(frozen=True)
class GraphNode:
    token: str
    is_terminal: bool

    def __post_init__(self):
        if not self.token:
            raise GraphError("node token must be non-empty")


@dataclass(frozen=True)
class LabeledMultigraph:
    """A directed multigraph with typed relations.

    Edges are kept sorted and deduplicated, so two graphs with the same
    nodes, relations and edge set compare equal.
    """

    nodes: tuple[GraphNode, ...]
    edges: tuple[Edge, ...]
    relations: tuple[str, ...]
    kind: GraphKind

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "relations", tuple(self.relations))
        object.__setattr__(self, "kind", GraphKind(self.kind))
        object.__setattr__(
            self, "edges", tuple(sorted({(int(s), int(d), int(r)) for s, d, r in self.edges}))
        )
        if len(set(self.relations)) != len(self.relations):
            raise GraphError(f"duplicate relation names in {self.relations}")

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def augmented(self) -> bool:
        return any(is_inverse_name(r) for r in self.relations)

    def relation_id(self, name: str) -> int:
        try:
            return self.relations.index(name)
        except ValueError:
            raise GraphError(f"unknown relation {name!r}") from None

    def edges_of(self, name: str) -> list[tuple[int, int]]:
        """All (src, dst) pairs for the relation called ``name``."""
        if name not in self.relations:
            return []
        rid = self.relations.index(name)
        return [(s, d) for s, d, r in self.edges if r == rid]

    def tokens(self) -> list[str]:
        return [n.token for n in self.nodes]


@dataclass
class GraphBuilder:
    """Single-owner mutable builder; ``build()`` freezes the result."""

    kind: GraphKind
    relations: list[str] = field(default_factory=list)
    nodes: list[GraphNode] = field(default_factory=list)
    edges: list[Edge] = field(default_factory=list)

    def add_node(self, token: str, is_terminal: bool) -> int:
        self.nodes.append(GraphNode(token, is_terminal))
        return len(self.nodes) - 1

    def add_edge(self, src: int, dst: int, relation: str) -> None:
        if relation not in self.relations:
            self.relations.append(relation)
        self.edges.append((src, dst, self.relations.index(relation)))

    def build(self) -> LabeledMultigraph:
        g = LabeledMultigraph(tuple(self.nodes), tuple(self.edges), tuple(self.relations), self.kind)
        report = validate_graph(g)
        if not report.ok:
            raise GraphError("; ".join(report.violations))
        return g


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_graph(g: LabeledMultigraph, max_nodes: int | None = None) -> ValidationReport:
    problems = []
    n = g.num_nodes
    if n == 0:
        problems.append("empty graph")
    if max_nodes is not None and n > max_nodes:
        problems.append(f"node cap exceeded: {n} > {max_nodes}")
    for s, d, r in g.edges:
        if not (0 <= s < n and 0 <= d < n):
            problems.append(f"dangling endpoint in edge ({s}, {d}, {r})")
        if not 0 <= r < len(g.relations):
            problems.append(f"bad relation id in edge ({s}, {d}, {r})")
    return ValidationReport(tuple(problems))


def in_neighbors(g: LabeledMultigraph, node: int, rel: int) -> list[int]:
    """Sources of all ``rel`` edges ending at ``node``, ascending."""
    if not 0 <= node < g.num_nodes:
        raise GraphError(f"node id {node} out of range")
    if not 0 <= rel < len(g.relations):
        raise GraphError(f"relation id {rel} out of range")
    # edges are sorted and unique, so no further dedup is needed
    return sorted(s for s, d, r in g.edges if d == node and r == rel)


def augment_inverses(g: LabeledMultigraph) -> LabeledMultigraph:
    """Add an inverse edge ``(d, s, r⁻¹)`` for every edge ``(s, d, r)``."""
    if g.augmented:
        raise GraphError("graph is already inverse-augmented")
    k = len(g.relations)
    relations = g.relations + tuple(inverse_name(r) for r in g.relations)
    edges = list(g.edges) + [(d, s, r + k) for s, d, r in g.edges]
    return LabeledMultigraph(g.nodes, tuple(edges), relations, g.kind)


def ensure_augmented(g: LabeledMultigraph) -> LabeledMultigraph:
    return g if g.augmented else augment_inverses(g)


def permute_nodes(g: LabeledMultigraph, order: Sequence[int]) -> LabeledMultigraph:
    """Relabel nodes so that new node ``i`` is old node ``order[i]``."""
    if sorted(order) != list(range(g.num_nodes)):
        raise GraphError("order must be a permutation of node ids")
    new_id = {old: new for new, old in enumerate(order)}
    nodes = tuple(g.nodes[old] for old in order)
    edges = tuple((new_id[s], new_id[d], r) for s, d, r in g.edges)
    return LabeledMultigraph(nodes, edges, g.relations, g.kind)


# -- JSON -------------------------------------------------------------------


def graph_to_dict(g: LabeledMultigraph) -> dict:
    return {
        "kind": g.kind.value,
        "relations": list(g.relations),
        "nodes": [{"token": n.token, "terminal": n.is_terminal} for n in g.nodes],
        "edges": [list(e) for e in g.edges],
    }


def encode_graph_json(g: LabeledMultigraph) -> bytes:
    return json.dumps(graph_to_dict(g), ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def _byte_offset(text: str, char_pos: int) -> int:
    return len(text[:char_pos].encode("utf-8"))


def graph_from_dict(obj: object) -> LabeledMultigraph:
    if not isinstance(obj, dict):
        raise GraphFormatError("graph JSON must be an object", 0)
    for key in ("kind", "relations", "nodes", "edges"):
        if key not in obj:
            raise GraphFormatError(f"missing key {key!r}")
    if obj["kind"] not in ("text", "code"):
        raise GraphFormatError(f"bad kind {obj['kind']!r}")
    relations = obj["relations"]
    if not isinstance(relations, list) or not all(isinstance(r, str) for r in relations):
        raise GraphFormatError("relations must be a list of strings")
    nodes = []
    for i, n in enumerate(_as_list(obj["nodes"], "nodes")):
        if (
            not isinstance(n, dict)
            or not isinstance(n.get("token"), str)
            or not n["token"]
            or not isinstance(n.get("terminal"), bool)
        ):
            raise GraphFormatError(f"node {i} must be {{'token': non-empty str, 'terminal': bool}}")
        nodes.append(GraphNode(n["token"], n["terminal"]))
    edges = []
    for i, e in enumerate(_as_list(obj["edges"], "edges")):
        if (
            not isinstance(e, list)
            or len(e) != 3
            or not all(isinstance(x, int) and not isinstance(x, bool) for x in e)
        ):
            raise GraphFormatError(f"edge {i} must be [src, dst, relIndex]")
        edges.append(tuple(e))
    try:
        g = LabeledMultigraph(tuple(nodes), tuple(edges), tuple(relations), GraphKind(obj["kind"]))
    except GraphError as exc:
        raise GraphFormatError(str(exc)) from None
    report = validate_graph(g)
    if not report.ok:
        raise GraphFormatError("; ".join(report.violations))
    return g


def decode_graph_json(data: bytes | str) -> LabeledMultigraph:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphFormatError(exc.msg, _byte_offset(text, exc.pos)) from None
    return graph_from_dict(obj)


def _as_list(value: object, what: str) -> Iterable:
    if not isinstance(value, list):
        raise GraphFormatError(f"{what} must be a list")
    return value
