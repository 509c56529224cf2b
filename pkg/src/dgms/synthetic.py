"""Deterministic synthetic (doc, MiniLang code) pairs for smoke runs and tests.

Each pair comes from one of four program templates filled with two nouns.
Docs mention the nouns as words, code mentions them inside identifiers, so
matching has to go through sub-token features.
"""

from __future__ import annotations

import itertools

import numpy as np

NOUNS_A = ["price", "weight", "score", "length", "speed", "height", "balance", "volume"]
NOUNS_B = ["order", "user", "file", "node", "packet", "sensor", "account", "record"]

TEMPLATES = [
    (
        "sum the {a} values over all {b} items",
        "total{A} = 0\ni = 0\nwhile i < count{B}s() {{\n  total{A} = total{A} + {a}Of{B}(i)\n  i = i + 1\n}}\nreturn total{A}",
    ),
    (
        "find the largest {a} among the {b} entries",
        "best{A} = 0\ni = 0\nwhile i < num{B}s {{\n  v = get{A}({b}At(i))\n  if v > best{A} {{ best{A} = v }}\n  i = i + 1\n}}\nreturn best{A}",
    ),
    (
        "check whether the {a} of a {b} is valid",
        "{b} = load{B}(key)\nok = is{A}Valid({b}, \"{a}\")\nif ok {{\n  log(\"valid {a}\")\n}} else {{\n  report{B}Error({b})\n}}\nreturn ok",
    ),
    (
        "count how many {b} have a {a} above the limit",
        "n = 0\nfor{B} = list{B}s()\nwhile has(for{B}) {{\n  if {a}({b}(for{B})) > limit {{ n = n + 1 }}\n  for{B} = next(for{B})\n}}\nreturn n",
    ),
]


def synthetic_pairs(n: int = 64, seed: int = 0) -> list[dict]:
    """``n`` raw corpus records ``{"id", "doc", "code"}`` in a seeded order."""
    combos = list(itertools.product(range(len(TEMPLATES)), NOUNS_A, NOUNS_B))
    if n > len(combos):
        raise ValueError(f"at most {len(combos)} distinct synthetic pairs")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(combos), size=n, replace=False)
    out = []
    for k, idx in enumerate(picks):
        t, a, b = combos[idx]
        doc_t, code_t = TEMPLATES[t]
        fill = {"a": a, "b": b, "A": a.capitalize(), "B": b.capitalize()}
        out.append({"id": f"syn{k:04d}", "doc": doc_t.format(**fill), "code": code_t.format(**fill)})
    return out
