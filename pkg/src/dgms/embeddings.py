"""Initial node features from pretrained word vectors.

Lookup policy per node token: exact lowercase hit, else the mean of the
sub-token vectors that are found, else a zero vector. Features are frozen
inputs; nothing here is trained.
"""

from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .graph import LabeledMultigraph

log = logging.getLogger(__name__)

_SUBTOKEN_RE = re.compile(r"[A-Z]+(?=[A-Z][a-z])|[A-Z]?[a-z]+|[A-Z]+|[0-9]+")


class EmbeddingFormatError(ValueError):
    pass


def split_subtokens(token: str) -> list[str]:
    """Split on CamelCase, underscores and letter/digit boundaries.

    >>> split_subtokens("getWindowSize")
    ['get', 'window', 'size']
    >>> split_subtokens("max_value2")
    ['max', 'value', '2']
    """
    return [p.lower() for p in _SUBTOKEN_RE.findall(token)]


@dataclass
class EmbeddingTable:
    vocab: dict[str, int] = field(default_factory=dict)
    matrix: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=np.float32))
    dim: int | None = None

    def __len__(self) -> int:
        return len(self.vocab)

    def get(self, token: str) -> np.ndarray | None:
        row = self.vocab.get(token)
        return None if row is None else self.matrix[row]

    def exact(self, token: str) -> np.ndarray | None:
        return self.get(token.lower())

    def digest(self) -> str:
        h = hashlib.sha256()
        for tok, row in self.vocab.items():
            h.update(tok.encode("utf-8") + b"\0")
            h.update(np.ascontiguousarray(self.matrix[row], dtype=np.float32).tobytes())
        return "table:" + h.hexdigest()

    def describe(self) -> dict:
        return {"kind": "file", "dim": self.dim, "tokens": len(self.vocab)}


@dataclass(frozen=True)
class HashedEmbeddings:
    """Deterministic pseudo-embeddings for use when no vector file is given.

    Any token gets a fixed random vector derived from its spelling and
    ``seed``. Exact lookups only hit for atomic tokens (at most one
    sub-token), so compound identifiers fall through to the sub-token
    average just as out-of-vocabulary words would with a real table.
    Entries are Gaussian with standard deviation ``scale``, which defaults to
    ``1/sqrt(dim)`` so vectors have roughly unit norm.
    """

    dim: int = 300
    seed: int = 0
    scale: float | None = None

    def __post_init__(self):
        if self.scale is None:
            object.__setattr__(self, "scale", 1.0 / float(np.sqrt(self.dim)))

    def exact(self, token: str) -> np.ndarray | None:
        if len(split_subtokens(token)) > 1:
            return None
        return self.get(token.lower())

    def get(self, token: str) -> np.ndarray | None:
        digest = hashlib.sha256(f"{self.seed}:{token}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        return (self.scale * rng.standard_normal(self.dim)).astype(np.float32)

    def digest(self) -> str:
        return f"hashed:{self.dim}:{self.seed}:{self.scale!r}"

    def describe(self) -> dict:
        return {"kind": "hashed", "dim": self.dim, "seed": self.seed, "scale": self.scale}


def load_embeddings(path: str | Path, restrict_to: Iterable[str] | None = None) -> EmbeddingTable:
    """Load a GloVe-format text file (``token f1 ... fd`` per line).

    Tokens are lowercased and the first occurrence wins. ``restrict_to``
    limits loading to the given tokens (and their sub-tokens) to save memory.
    """
    keep = None
    if restrict_to is not None:
        keep = set()
        for t in restrict_to:
            keep.add(t.lower())
            keep.update(split_subtokens(t))
    vocab: dict[str, int] = {}
    rows: list[np.ndarray] = []
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            parts = [p for p in parts if p]
            if not parts:
                continue
            width = len(parts) - 1
            if dim is None:
                if width < 1:
                    raise EmbeddingFormatError(f"line {lineno}: no vector values")
                dim = width
            elif width != dim:
                raise EmbeddingFormatError(f"line {lineno}: expected {dim} values, got {width}")
            token = parts[0].lower()
            if token in vocab or (keep is not None and token not in keep):
                continue
            try:
                rows.append(np.asarray(parts[1:], dtype=np.float32))
            except ValueError:
                raise EmbeddingFormatError(f"line {lineno}: non-numeric value") from None
            vocab[token] = len(rows) - 1
    matrix = np.stack(rows) if rows else np.zeros((0, dim or 0), dtype=np.float32)
    log.info("loaded %d embeddings of dim %s from %s", len(vocab), dim, path)
    return EmbeddingTable(vocab, matrix, dim)


def token_feature(token: str, table, dim: int) -> np.ndarray:
    hit = table.exact(token)
    if hit is not None:
        return np.asarray(hit, dtype=np.float32)
    found = [v for v in (table.get(s) for s in split_subtokens(token)) if v is not None]
    if found:
        return np.mean(np.stack(found).astype(np.float32), axis=0)
    return np.zeros(dim, dtype=np.float32)


def node_features(g: LabeledMultigraph, table, dim: int | None = None) -> np.ndarray:
    """``(num_nodes, dim)`` float32 feature matrix for ``g``.

    ``dim`` is only needed when ``table`` is empty and has no dimension yet.
    """
    dim = table.dim if table.dim is not None else dim
    if dim is None:
        raise ValueError("embedding dimension unknown: table is empty and no dim given")
    return np.stack([token_feature(n.token, table, dim) for n in g.nodes])
