"""Hand-derived graph fixtures shared by unit and acceptance tests."""

CONFIGURE_PARSE = "(S (VP (VB Configure) (NP the window size)))"
CONFIGURE_PARSE_FULL_POS = "(S (VP (VB Configure) (NP (DT the) (NN window) (NN size))))"

# pre-order node ids for CONFIGURE_PARSE:
# 0 S, 1 VP, 2 VB, 3 configure, 4 NP, 5 the, 6 window, 7 size
CONFIGURE_TOKENS = ["S", "VP", "VB", "configure", "NP", "the", "window", "size"]
CONFIGURE_CONSTITUENCY = {(0, 1), (1, 2), (2, 3), (1, 4), (4, 5), (4, 6), (4, 7)}
CONFIGURE_NEXT_WORD = {(3, 5), (5, 6), (6, 7)}

TEN_STATEMENTS = """\
a = 1
b = a + 2
c = f(a, b)
if c > b { a = c }
while a < 10 { a = a + 1 }
print("done")
d = (a)
b = d * c
return b
x = a
"""

# terminals in source order (index = source_order)
TEN_TERMINALS = (
    "a = 1 "
    "b = a + 2 "
    "c = f ( a , b ) "
    "if c > b { a = c } "
    "while a < 10 { a = a + 1 } "
    'print ( "done" ) '
    "d = ( a ) "
    "b = d * c "
    "return b "
    "x = a"
).split()

# (current occurrence, previous occurrence) by source_order
TEN_LAST_LEXICAL_USE = {
    (5, 0), (12, 5), (21, 12), (26, 21), (30, 26), (32, 30), (43, 32), (54, 43),  # a
    (14, 3), (19, 14), (45, 19), (51, 45),  # b
    (17, 8), (23, 17), (49, 23),  # c
    (47, 40),  # d
}


def _t(kind, value):
    return (kind, value)


def _id(name):
    return ("Identifier", name)


def _op(o):
    return ("Op", o)


def _p(c):
    return ("Punct", c)


TEN_TREE = (
    "Program",
    [
        ("Assign", [_id("a"), _op("="), _t("IntLiteral", "1")]),
        ("Assign", [_id("b"), _op("="), ("BinOp", [_id("a"), _op("+"), _t("IntLiteral", "2")])]),
        ("Assign", [_id("c"), _op("="), ("Call", [_id("f"), _p("("), _id("a"), _p(","), _id("b"), _p(")")])]),
        (
            "If",
            [
                _t("Keyword", "if"),
                ("BinOp", [_id("c"), _op(">"), _id("b")]),
                ("Block", [_p("{"), ("Assign", [_id("a"), _op("="), _id("c")]), _p("}")]),
            ],
        ),
        (
            "While",
            [
                _t("Keyword", "while"),
                ("BinOp", [_id("a"), _op("<"), _t("IntLiteral", "10")]),
                (
                    "Block",
                    [
                        _p("{"),
                        ("Assign", [_id("a"), _op("="), ("BinOp", [_id("a"), _op("+"), _t("IntLiteral", "1")])]),
                        _p("}"),
                    ],
                ),
            ],
        ),
        ("ExprStmt", [("Call", [_id("print"), _p("("), _t("StringLiteral", '"done"'), _p(")")])]),
        ("Assign", [_id("d"), _op("="), ("Paren", [_p("("), _id("a"), _p(")")])]),
        ("Assign", [_id("b"), _op("="), ("BinOp", [_id("d"), _op("*"), _id("c")])]),
        ("Return", [_t("Keyword", "return"), _id("b")]),
        ("Assign", [_id("x"), _op("="), _id("a")]),
    ],
)


def flatten_tree(tree):
    """Pre-order (tokens, child edges) of a nested ``(kind, children|value)`` fixture."""
    tokens, edges = [], set()

    def visit(node):
        kind, rest = node
        nid = len(tokens)
        if isinstance(rest, str):
            tokens.append(rest)
            return nid
        tokens.append(kind)
        for child in rest:
            edges.add((nid, visit(child)))
        return nid

    visit(tree)
    return tokens, edges


def _prog(k):
    return f"v{k} = load(k)\nif v{k} > 0 {{ v{k} = v{k} - 1 }}\nreturn v{k}"


def crafted_raw_entries():
    """20 raw entries, each violating at most one filter.

    Returns ``(entries, expected_removed_counts, expected_kept_ids)``.
    """
    big = "\n".join(f"x{i} = a + b + c" for i in range(40))  # 40 * 10 + 1 nodes
    entries = [
        {"id": "ok00", "doc": "load a value and decrement it", "code": _prog(0)},
        {"id": "nodoc1", "code": _prog(1)},
        {"id": "ok01", "doc": "read the counter from storage", "code": _prog(2)},
        {"id": "nodoc2", "doc": "   ", "code": _prog(3)},
        {"id": "short1", "doc": "a one line program here", "code": "x = 1"},
        {"id": "ok02", "doc": "clamp the stored value at zero", "code": _prog(4)},
        {"id": "short2", "doc": "two lines of code only", "code": "x = 1\n\n   \ny = 2"},
        {"id": "short3", "doc": "empty code is short too", "code": ""},
        {"id": "ok03", "doc": "decrement while the value is positive", "code": _prog(5)},
        {"id": "few1", "doc": "Too short", "code": _prog(6)},
        {"id": "few2", "doc": "x", "code": _prog(7)},
        {"id": "ok04", "doc": "return the loaded value", "code": _prog(8)},
        {"id": "dup1", "doc": "load a value and decrement it", "code": _prog(9)},
        {"id": "ok05", "doc": "fetch a key then lower it", "code": _prog(10)},
        {"id": "dup2", "doc": "read the counter from storage", "code": _prog(11)},
        {"id": "big1", "doc": "a very long generated program", "code": big},
        {"id": "ok06", "doc": "update the loaded record value", "code": _prog(12)},
        {"id": "ok07", "doc": "Load value, decrement it.", "code": _prog(13)},
        {"id": "ok08", "doc": "three word doc", "code": _prog(14)},
        {"id": "ok09", "doc": "the last valid entry here", "code": _prog(15)},
    ]
    removed = {
        "unparsable": 0,
        "duplicate_id": 0,
        "missing_doc": 2,
        "min_lines": 3,
        "min_words": 2,
        "non_english": 0,
        "duplicate_doc": 2,
        "max_nodes": 1,
    }
    kept = [f"ok{i:02d}" for i in range(10)]
    return entries, removed, kept
