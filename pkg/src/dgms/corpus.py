"""Corpus ingestion: filtering raw (doc, code) pairs and building their graphs."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .codegraph import AstFormatError, AstTree, ast_from_obj, build_program_graph
from .graph import GraphError, GraphFormatError, LabeledMultigraph, graph_from_dict, graph_to_dict
from .minilang import MiniLangSyntaxError, parse_minilang
from .textgraph import ParseError, build_text_graph, flat_parse, parse_bracketed, tokenize

log = logging.getLogger(__name__)

# reported in this order
FILTERS = (
    "unparsable",
    "duplicate_id",
    "missing_doc",
    "min_lines",
    "min_words",
    "non_english",
    "duplicate_doc",
    "max_nodes",
)


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class FilterConfig:
    min_lines: int = 3
    min_words: int = 3
    max_nodes: int = 300
    dedupe_docs: bool = True
    # crude stand-in for language identification; off by default
    english_only: bool = False
    min_ascii_ratio: float = 0.9


@dataclass(frozen=True)
class CorpusEntry:
    id: str
    doc: str
    text_graph: LabeledMultigraph
    code_graph: LabeledMultigraph
    code: str | None = None
    ast: AstTree | None = None


@dataclass
class Corpus:
    entries: list[CorpusEntry] = field(default_factory=list)
    removed: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[CorpusEntry]:
        return iter(self.entries)

    def __getitem__(self, i: int) -> CorpusEntry:
        return self.entries[i]

    def ids(self) -> list[str]:
        return [e.id for e in self.entries]

    def by_id(self) -> dict[str, CorpusEntry]:
        return {e.id: e for e in self.entries}


def _code_lines(code: str) -> int:
    return sum(1 for line in code.splitlines() if line.strip())


def _ascii_ratio(text: str) -> float:
    letters = [c for c in text if c.isalpha()]
    if not letters:
        return 1.0
    return sum(c.isascii() for c in letters) / len(letters)


def doc_graph(doc: str, parse: str | None = None) -> LabeledMultigraph:
    if parse:
        return build_text_graph(parse_bracketed(parse))
    return build_text_graph(flat_parse(tokenize(doc)))


def ingest_corpus(raw: Iterable[dict], config: FilterConfig = FilterConfig()) -> Corpus:
    """Filter raw entries and build their text and code graphs.

    Filters run in this order: missing doc, short code, short doc,
    (optionally) non-English doc, duplicate doc (first kept), then graph
    building and the node cap. Entries that cannot be read or parsed are
    skipped and counted under ``unparsable``.
    """
    removed = Counter({name: 0 for name in FILTERS})
    seen_ids: set[str] = set()
    seen_docs: set[str] = set()
    entries = []
    for n, item in enumerate(raw):
        if not isinstance(item, dict) or not isinstance(item.get("id"), str):
            log.warning("entry %d skipped: missing string id", n)
            removed["unparsable"] += 1
            continue
        eid = item["id"]
        if eid in seen_ids:
            log.warning("entry %r skipped: duplicate id", eid)
            removed["duplicate_id"] += 1
            continue
        seen_ids.add(eid)
        doc = item.get("doc")
        if not isinstance(doc, str) or not doc.strip():
            removed["missing_doc"] += 1
            continue
        code = item.get("code")
        if code is not None and not isinstance(code, str):
            log.warning("entry %r skipped: 'code' is not a string", eid)
            removed["unparsable"] += 1
            continue
        if code is not None and _code_lines(code) < config.min_lines:
            removed["min_lines"] += 1
            continue
        if len(doc.split()) < config.min_words:
            removed["min_words"] += 1
            continue
        if config.english_only and _ascii_ratio(doc) < config.min_ascii_ratio:
            removed["non_english"] += 1
            continue
        if config.dedupe_docs:
            if doc in seen_docs:
                removed["duplicate_doc"] += 1
                continue
            seen_docs.add(doc)
        try:
            text_graph = doc_graph(doc, item.get("parse"))
            if code is not None:
                tree = parse_minilang(code)
            elif "ast" in item:
                tree = ast_from_obj(item["ast"])
            else:
                raise CorpusError("entry has neither 'code' nor 'ast'")
            code_graph = build_program_graph(tree)
        except (MiniLangSyntaxError, AstFormatError, ParseError, GraphError, CorpusError, ValueError) as exc:
            log.warning("entry %r skipped: %s", eid, exc)
            removed["unparsable"] += 1
            continue
        if max(text_graph.num_nodes, code_graph.num_nodes) > config.max_nodes:
            removed["max_nodes"] += 1
            continue
        entries.append(CorpusEntry(eid, doc, text_graph, code_graph, code, tree))
    return Corpus(entries, dict(removed))


def read_jsonl(path: str | Path) -> Iterator[object]:
    """Yield parsed JSON lines; malformed lines yield ``None`` after a warning."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                log.warning("%s:%d: skipped malformed JSON (%s)", path, lineno, exc.msg)
                yield None


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write a built corpus as JSONL with the graphs inlined."""
    with open(path, "w", encoding="utf-8") as fh:
        for e in corpus:
            rec = {
                "id": e.id,
                "doc": e.doc,
                "text_graph": graph_to_dict(e.text_graph),
                "code_graph": graph_to_dict(e.code_graph),
            }
            fh.write(json.dumps(rec, ensure_ascii=False, separators=(",", ":")) + "\n")


def load_corpus(path: str | Path, config: FilterConfig = FilterConfig()) -> Corpus:
    """Load a built corpus, or ingest a raw one if the lines carry no graphs."""
    records = list(read_jsonl(path))
    if records and all(isinstance(r, dict) and "code_graph" in r for r in records):
        entries = []
        for r in records:
            try:
                entries.append(
                    CorpusEntry(
                        r["id"], r["doc"], graph_from_dict(r["text_graph"]), graph_from_dict(r["code_graph"])
                    )
                )
            except (KeyError, GraphFormatError) as exc:
                raise CorpusError(f"bad built-corpus record {r.get('id')!r}: {exc}") from None
        return Corpus(entries, {})
    return ingest_corpus(records, config)
