"""Candidate pools, ranking, MRR / S@k, the node-embedding index and search."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Tensor
from .corpus import Corpus
from .graph import LabeledMultigraph
from .model import DgmsParams, PreparedGraph, encode, match_and_score, prepare_graph, tensor_from_obj, tensor_to_obj
from .textgraph import text_graph_from_string


class IndexMismatchError(ValueError):
    """The index was built with different parameters or embeddings."""


@dataclass(frozen=True)
class CandidatePool:
    query: str
    truth: str
    distractors: tuple[str, ...]
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "distractors", tuple(self.distractors))
        if self.truth in self.distractors:
            raise ValueError("ground truth appears among distractors")
        if len(set(self.distractors)) != len(self.distractors):
            raise ValueError("distractors must be distinct")

    @property
    def candidates(self) -> list[str]:
        return [self.truth, *self.distractors]

    def to_obj(self) -> dict:
        return {"query": self.query, "truth": self.truth, "distractors": list(self.distractors), "seed": self.seed}

    @classmethod
    def from_obj(cls, obj: dict) -> "CandidatePool":
        return cls(obj["query"], obj["truth"], tuple(obj["distractors"]), int(obj["seed"]))


@dataclass(frozen=True)
class RankedList:
    items: tuple[tuple[str, float], ...]
    frank: int | None = None

    def ids(self) -> list[str]:
        return [i for i, _ in self.items]


def build_pools(corpus: Corpus, pool_size: int, seed: int) -> list[CandidatePool]:
    """One pool per entry: its own code plus ``pool_size - 1`` random others."""
    n = len(corpus)
    if pool_size < 1:
        raise ValueError("pool_size must be >= 1")
    if n < pool_size:
        raise ValueError(f"corpus of {n} entries is smaller than pool size {pool_size}")
    rng = np.random.default_rng(seed)
    ids = corpus.ids()
    pools = []
    for i, eid in enumerate(ids):
        others = rng.choice(n - 1, size=pool_size - 1, replace=False)
        picked = tuple(ids[j + 1 if j >= i else j] for j in others)
        pools.append(CandidatePool(eid, eid, picked, seed))
    return pools


def sort_scores(scores: dict[str, float]) -> list[tuple[str, float]]:
    """Descending score, ties broken by ascending id."""
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))


def frank_of(ranked: Sequence[tuple[str, float]], truth: str) -> int:
    for pos, (cid, _) in enumerate(ranked, 1):
        if cid == truth:
            return pos
    raise ValueError(f"{truth!r} not in ranking")


def mrr(franks: Sequence[int]) -> float:
    """Mean reciprocal rank, summed exactly and rounded once (order-independent)."""
    if not franks:
        raise ValueError("mrr of an empty list")
    if any(f < 1 for f in franks):
        raise ValueError("ranks start at 1")
    return float(sum(Fraction(1, f) for f in franks) / len(franks))


def success_at_k(franks: Sequence[int], k: int) -> float:
    if not franks:
        raise ValueError("success_at_k of an empty list")
    if k < 1:
        raise ValueError("k must be >= 1")
    return sum(1 for f in franks if f <= k) / len(franks)


@dataclass
class EmbeddingIndex:
    """Per-code-graph RGCN node embeddings, keyed by corpus id."""

    fingerprint: str
    rgcn_dim: int
    embeddings: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.embeddings)

    def check(self, params: DgmsParams, table) -> None:
        if self.fingerprint != params.fingerprint(table):
            raise IndexMismatchError("index fingerprint does not match the given checkpoint/embeddings")

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        (d / "tensors").mkdir(parents=True, exist_ok=True)
        ids = list(self.embeddings)
        for n, eid in enumerate(ids):
            (d / "tensors" / f"{n:06d}.json").write_text(
                json.dumps(tensor_to_obj(self.embeddings[eid]), separators=(",", ":"))
            )
        manifest = {"params_fingerprint": self.fingerprint, "rgcn_dim": self.rgcn_dim, "count": len(ids), "ids": ids}
        (d / "manifest.json").write_text(json.dumps(manifest, ensure_ascii=False, separators=(",", ":")))

    @classmethod
    def load(cls, directory: str | Path, params: DgmsParams | None = None, table=None) -> "EmbeddingIndex":
        d = Path(directory)
        try:
            manifest = json.loads((d / "manifest.json").read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValueError(f"cannot read index manifest in {d}: {exc}") from None
        ids = manifest["ids"]
        if len(ids) != manifest["count"]:
            raise ValueError("index manifest count does not match its id list")
        emb = {
            eid: tensor_from_obj(json.loads((d / "tensors" / f"{n:06d}.json").read_text()))
            for n, eid in enumerate(ids)
        }
        index = cls(manifest["params_fingerprint"], manifest["rgcn_dim"], emb)
        if params is not None:
            index.check(params, table)
        return index


class Scorer:
    """Scores queries against corpus codes, caching prepared graphs.

    Code-side RGCN encodings come from ``index`` when one is given; the
    cross-attention matching and pooling always run per pair.
    """

    def __init__(self, corpus: Corpus, params: DgmsParams, table, index: EmbeddingIndex | None = None):
        if index is not None:
            index.check(params, table)
        self.corpus = corpus.by_id()
        self.params = params
        self.table = table
        self.index = index
        self._prepared: dict[tuple[str, str], PreparedGraph] = {}

    def _prepare(self, key: tuple[str, str], g: LabeledMultigraph) -> PreparedGraph:
        if key not in self._prepared:
            self._prepared[key] = prepare_graph(g, self.table, self.params.config, self.params.dtype)
        return self._prepared[key]

    def encode_text(self, g: LabeledMultigraph, key: str | None = None) -> Tensor:
        prep = self._prepare(("text", key), g) if key is not None else prepare_graph(
            g, self.table, self.params.config, self.params.dtype
        )
        return encode(prep, self.params)

    def encode_code(self, eid: str) -> Tensor:
        if self.index is not None and eid in self.index.embeddings:
            return Tensor(self.index.embeddings[eid])
        return encode(self._prepare(("code", eid), self.corpus[eid].code_graph), self.params)

    def scores(self, query: Tensor, ids: Sequence[str]) -> dict[str, float]:
        return {cid: match_and_score(query, self.encode_code(cid), self.params).item() for cid in ids}


def rank_candidates(
    pool: CandidatePool,
    params: DgmsParams,
    corpus: Corpus,
    table,
    index: EmbeddingIndex | None = None,
    scorer: Scorer | None = None,
) -> RankedList:
    scorer = scorer or Scorer(corpus, params, table, index)
    q = scorer.encode_text(scorer.corpus[pool.query].text_graph, key=pool.query)
    ranked = sort_scores(scorer.scores(q, pool.candidates))
    return RankedList(tuple(ranked), frank_of(ranked, pool.truth))


def build_index(corpus: Corpus, params: DgmsParams, table) -> EmbeddingIndex:
    scorer = Scorer(corpus, params, table)
    emb = {e.id: scorer.encode_code(e.id).data for e in corpus}
    return EmbeddingIndex(params.fingerprint(table), params.config.rgcn_dim, emb)


def evaluate(
    corpus: Corpus,
    params: DgmsParams,
    table,
    pool_size: int = 100,
    seed: int = 0,
    ks: Sequence[int] = (1, 5, 10),
    index: EmbeddingIndex | None = None,
    pools: Sequence[CandidatePool] | None = None,
    threads: int = 1,
) -> dict:
    """Rank every pool and summarize as the evaluation report dict."""
    pools = list(pools) if pools is not None else build_pools(corpus, pool_size, seed)
    scorer = Scorer(corpus, params, table, index)
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(threads) as ex:
            # separate scorers per pool keep the shared cache out of the threads
            ranked = list(ex.map(lambda p: rank_candidates(p, params, corpus, table, index), pools))
    else:
        ranked = [rank_candidates(p, params, corpus, table, scorer=scorer) for p in pools]
    franks = [r.frank for r in ranked]
    return {
        "mrr": mrr(franks),
        "s_at": {str(k): success_at_k(franks, k) for k in ks},
        "pool_size": len(pools[0].candidates) if pools else pool_size,
        "queries": len(pools),
        "seed": seed,
    }


def search(
    query: str | LabeledMultigraph,
    corpus: Corpus,
    params: DgmsParams,
    table,
    top_k: int = 10,
    index: EmbeddingIndex | None = None,
    scorer: Scorer | None = None,
) -> RankedList:
    """Rank the whole corpus for a free-text (or bracketed-parse) query."""
    if top_k < 0:
        raise ValueError("top_k must be >= 0")
    graph = query if isinstance(query, LabeledMultigraph) else text_graph_from_string(query)
    scorer = scorer or Scorer(corpus, params, table, index)
    q = scorer.encode_text(graph)
    ranked = sort_scores(scorer.scores(q, corpus.ids()))
    return RankedList(tuple(ranked[:top_k]))


def write_json(path: str | os.PathLike, obj) -> None:
    Path(path).write_text(json.dumps(obj, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
