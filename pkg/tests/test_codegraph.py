import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgms.codegraph import (
    Ast,
    AstFormatError,
    AstTree,
    build_program_graph,
    decode_ast_json,
    encode_ast_json,
)
from dgms.minilang import MiniLangSyntaxError, parse_minilang

from .fixtures import TEN_LAST_LEXICAL_USE, TEN_STATEMENTS, TEN_TERMINALS, TEN_TREE, flatten_tree

IDENTS = ["x", "y", "z", "count", "total"]


@st.composite
def exprs(draw, depth=2):
    if depth == 0:
        return draw(st.one_of(st.sampled_from(IDENTS), st.integers(0, 99).map(str)))
    kind = draw(st.sampled_from(["leaf", "bin", "call", "paren"]))
    if kind == "leaf":
        return draw(exprs(depth=0))
    if kind == "bin":
        op = draw(st.sampled_from(["+", "-", "*", "/", "<", ">", "=="]))
        return f"{draw(exprs(depth=depth - 1))} {op} {draw(exprs(depth=depth - 1))}"
    if kind == "call":
        args = draw(st.lists(exprs(depth=depth - 1), max_size=3))
        return f"{draw(st.sampled_from(IDENTS))}({', '.join(args)})"
    return f"({draw(exprs(depth=depth - 1))})"


@st.composite
def programs(draw, depth=2):
    lines = []
    for _ in range(draw(st.integers(1, 4))):
        kind = draw(st.sampled_from(["assign", "if", "while", "return", "expr"] if depth else ["assign", "return"]))
        if kind == "assign":
            lines.append(f"{draw(st.sampled_from(IDENTS))} = {draw(exprs())}")
        elif kind == "return":
            lines.append(f"return {draw(exprs())}")
        elif kind == "expr":
            lines.append(f"{draw(st.sampled_from(IDENTS))}({draw(exprs())})")
        else:
            body = draw(programs(depth=depth - 1))
            lines.append(f"{kind} {draw(exprs())} {{\n{body}\n}}")
    return "\n".join(lines)


def kinds(tree, nid):
    return [tree.nodes[c].kind for c in tree.children[nid]]


class TestMiniLang:
    def test_assign(self):
        t = parse_minilang("x = 1")
        assert t.nodes[t.root].kind == "Program"
        assert kinds(t, 0) == ["Assign"]
        assert [(t.nodes[c].kind, t.nodes[c].value, t.nodes[c].source_order) for c in t.children[1]] == [
            ("Identifier", "x", 0),
            ("Op", "=", 1),
            ("IntLiteral", "1", 2),
        ]

    def test_if_block(self):
        t = parse_minilang("if x { y = x }")
        if_id = t.children[0][0]
        assert t.nodes[if_id].kind == "If"
        kw, cond, block = t.children[if_id]
        assert (t.nodes[cond].kind, t.nodes[cond].value) == ("Identifier", "x")
        assert t.nodes[block].kind == "Block"
        assert kinds(t, block) == ["Punct", "Assign", "Punct"]

    def test_else_and_return_without_value(self):
        t = parse_minilang('if a == "s" { return } else { b = f() }')
        if_id = t.children[0][0]
        assert kinds(t, if_id) == ["Keyword", "BinOp", "Block", "Keyword", "Block"]

    @pytest.mark.parametrize(
        "src,line,col",
        [("x = ", 1, 5), ("x = 1\ny = (2", 2, 7), ("if x { y = 1", 1, 13), ("x = 1 $", 1, 7), ("", 1, 1)],
    )
    def test_syntax_errors(self, src, line, col):
        with pytest.raises(MiniLangSyntaxError) as info:
            parse_minilang(src)
        assert (info.value.line, info.value.col) == (line, col)

    def test_left_associative(self):
        t = parse_minilang("x = 1 - 2 - 3")
        top = t.children[1][2]
        assert t.nodes[top].kind == "BinOp"
        left = t.children[top][0]
        assert t.nodes[left].kind == "BinOp"

    def test_ten_statement_tree(self):
        t = parse_minilang(TEN_STATEMENTS)
        expected_tokens, expected_edges = flatten_tree(TEN_TREE)
        g = build_program_graph(t)
        assert g.tokens() == expected_tokens
        assert set(g.edges_of("Child")) == expected_edges

    @given(programs())
    @settings(max_examples=100, deadline=None)
    def test_ast_invariants(self, src):
        t = parse_minilang(src)
        parents = {}
        for p, kids in t.children.items():
            assert kids, "non-terminals need children"
            assert not t.nodes[p].is_terminal
            for c in kids:
                assert c not in parents
                parents[c] = p
        assert set(parents) == set(range(len(t))) - {t.root}
        orders = sorted(t.nodes[i].source_order for i in t.terminals())
        assert orders == list(range(len(orders)))


class TestAstJson:
    def test_minimal(self):
        raw = json.dumps({"kind": "Name", "children": [{"kind": "Identifier", "value": "x", "id": True}]})
        t = decode_ast_json(raw)
        assert len(t) == 2
        assert t.nodes[1].is_identifier and t.nodes[1].source_order == 0

    @pytest.mark.parametrize(
        "obj",
        [
            {"kind": "Root", "children": [3]},
            {"kind": "Root", "children": []},
            {"kind": "Leaf", "value": "x", "children": [{"kind": "A", "value": "b"}]},
            {"kind": "", "value": "x"},
            {"kind": "Root", "children": [{"kind": "Leaf", "value": 5}]},
            [],
        ],
    )
    def test_schema_violations(self, obj):
        with pytest.raises(AstFormatError):
            decode_ast_json(json.dumps(obj))

    def test_not_json(self):
        with pytest.raises(AstFormatError):
            decode_ast_json(b"{nope")

    @given(programs())
    @settings(max_examples=50, deadline=None)
    def test_round_trip(self, src):
        t = parse_minilang(src)
        assert decode_ast_json(encode_ast_json(t)) == t


class TestProgramGraph:
    def test_assign_counts(self):
        g = build_program_graph(parse_minilang("x = 1"))
        assert len(g.edges_of("Child")) == 4
        assert len(g.edges_of("NextToken")) == 2
        assert g.edges_of("LastLexicalUse") == []

    def test_single_last_use(self):
        t = parse_minilang("x = 1\ny = x")
        g = build_program_graph(t)
        xs = [i for i in t.terminals() if t.nodes[i].value == "x"]
        assert g.edges_of("LastLexicalUse") == [(xs[1], xs[0])]

    def test_single_terminal(self):
        t = AstTree.from_nested(Ast("Root", children=[Ast("Identifier", "x", True)]))
        g = build_program_graph(t)
        assert g.edges_of("NextToken") == [] and g.edges_of("LastLexicalUse") == []

    def test_case_sensitive_identifiers(self):
        t = parse_minilang("x = 1\nX = x")
        g = build_program_graph(t)
        assert len(g.edges_of("LastLexicalUse")) == 1

    def test_ten_statement_fixture(self):
        t = parse_minilang(TEN_STATEMENTS)
        g = build_program_graph(t)
        terms = t.terminals()
        assert [t.nodes[i].value for i in terms] == TEN_TERMINALS
        order = {nid: t.nodes[nid].source_order for nid in terms}
        nt = {(order[a], order[b]) for a, b in g.edges_of("NextToken")}
        assert nt == {(k, k + 1) for k in range(len(TEN_TERMINALS) - 1)}
        llu = {(order[a], order[b]) for a, b in g.edges_of("LastLexicalUse")}
        assert llu == TEN_LAST_LEXICAL_USE

    @given(programs())
    @settings(max_examples=100, deadline=None)
    def test_edge_invariants(self, src):
        t = parse_minilang(src)
        g = build_program_graph(t)
        assert g.num_nodes == len(t)
        terms = t.terminals()
        # NextToken is one simple path over all terminals, in source order
        assert set(g.edges_of("NextToken")) == set(zip(terms, terms[1:]))
        # brute force: each identifier occurrence points at the closest earlier same spelling
        expected = set()
        for k, cur in enumerate(terms):
            node = t.nodes[cur]
            if not node.is_identifier:
                continue
            for prev in reversed(terms[:k]):
                if t.nodes[prev].is_identifier and t.nodes[prev].value == node.value:
                    expected.add((cur, prev))
                    break
        assert set(g.edges_of("LastLexicalUse")) == expected
        assert set(g.edges_of("Child")) == {(p, c) for p, kids in t.children.items() for c in kids}
