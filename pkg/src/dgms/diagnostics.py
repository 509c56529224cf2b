"""Random small graphs and a whole-model gradient check.

The generators build graphs through the real text/code builders so every
edge family (constituency, word chain, child, token chain, lexical use) shows
up with its usual structure, just at toy sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import KinkError, central_difference, grad_check_coords, rel_error
from .codegraph import Ast, AstTree, build_program_graph
from .embeddings import HashedEmbeddings
from .graph import LabeledMultigraph
from .model import AggOp, MatchOp, ModelConfig, encode, init_params, prepare_graph
from .textgraph import ParseTree, build_text_graph
from .training import triple_loss

WORDS = ["get", "set", "the", "size", "window", "value", "list", "sum", "max", "file", "name", "count"]
PHRASES = ["S", "NP", "VP", "PP"]
IDENTS = ["x", "y", "size", "getSize", "total", "i"]
KINDS = ["Assign", "Call", "BinOp", "Block", "Return"]


def _random_parents(rng: np.random.Generator, n: int) -> list[list[int]]:
    kids: list[list[int]] = [[] for _ in range(n)]
    for i in range(1, n):
        kids[int(rng.integers(i))].append(i)
    return kids


def random_text_graph(rng: np.random.Generator, n: int) -> LabeledMultigraph:
    """A constituency-style graph with exactly ``n >= 2`` nodes."""
    if n < 2:
        raise ValueError("a text graph needs a root and at least one word")
    kids = _random_parents(rng, n)

    def build(i: int) -> ParseTree:
        if not kids[i]:
            return ParseTree(str(rng.choice(WORDS)))
        return ParseTree(str(rng.choice(PHRASES)), tuple(build(c) for c in kids[i]))

    return build_text_graph(build(0))


def random_code_graph(rng: np.random.Generator, n: int) -> LabeledMultigraph:
    """A program graph over a random AST with exactly ``n >= 2`` nodes."""
    if n < 2:
        raise ValueError("a program graph needs a root and at least one terminal")
    kids = _random_parents(rng, n)

    def build(i: int) -> Ast:
        if not kids[i]:
            if rng.random() < 0.7:
                return Ast("Identifier", str(rng.choice(IDENTS)), True)
            return Ast("IntLiteral", str(int(rng.integers(10))))
        return Ast(str(rng.choice(KINDS)), children=[build(c) for c in kids[i]])

    return build_program_graph(AstTree.from_nested(build(0)))


def random_graph(rng: np.random.Generator, n: int) -> LabeledMultigraph:
    return random_text_graph(rng, n) if rng.random() < 0.5 else random_code_graph(rng, n)


@dataclass(frozen=True)
class CoordFailure:
    """A coordinate over tolerance, re-measured with a larger step."""

    pair: int
    param: str
    index: int
    analytic: float
    numeric: float
    recheck_h: float
    recheck_numeric: float

    @property
    def rel_error(self) -> float:
        return float(rel_error(self.analytic, self.numeric))

    @property
    def recheck_rel_error(self) -> float:
        return float(rel_error(self.analytic, self.recheck_numeric))


@dataclass(frozen=True)
class GradcheckReport:
    max_rel_error: float
    pairs: int
    resamples: int
    seconds: float
    coords: int = 0
    failures: tuple[CoordFailure, ...] = ()

    def to_dict(self) -> dict:
        return {
            "max_rel_error": self.max_rel_error,
            "pairs": self.pairs,
            "coords": self.coords,
            "resamples": self.resamples,
            "seconds": round(self.seconds, 3),
            "failures": [
                {
                    "pair": c.pair,
                    "param": c.param,
                    "index": c.index,
                    "analytic": c.analytic,
                    "numeric": c.numeric,
                    "rel_error": c.rel_error,
                    "recheck_h": c.recheck_h,
                    "recheck_rel_error": c.recheck_rel_error,
                }
                for c in self.failures
            ],
        }


def model_gradcheck(
    seed: int = 0,
    pairs: int = 20,
    min_nodes: int = 3,
    max_nodes: int = 8,
    h: float = 1e-5,
    config: ModelConfig | None = None,
    margin: float = 0.5,
    max_resamples: int = 100,
    feature_scale: float | None = None,
    tolerance: float = 1e-4,
    recheck_h: float = 1e-3,
) -> GradcheckReport:
    """Check the full triple loss gradient on random small (text, code, code) triples.

    Each pair gets fresh graphs and fresh float64 parameters. Draws where
    the hinge is inactive (loss exactly 0, gradient trivially 0) are redrawn,
    as are points too close to any kink, so every counted pair exercises the
    whole path.

    Coordinates whose error exceeds ``tolerance`` are listed in the report
    with a second central difference at ``recheck_h``: a true gradient bug
    stays wrong at any step, while float64 roundoff on a near-zero gradient
    shrinks as the step grows.
    """
    import time

    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    base = config or ModelConfig(rgcn_dim=5, agg_dim=4, input_dim=8, match_op=MatchOp.SUBMUL, agg_op=AggOp.FCMAX)
    table = HashedEmbeddings(dim=base.input_dim, seed=seed, scale=feature_scale)
    worst, resamples, done, coords = 0.0, 0, 0, 0
    failures: list[CoordFailure] = []
    while done < pairs:
        size = lambda: int(rng.integers(min_nodes, max_nodes + 1))  # noqa: E731
        cfg = ModelConfig(**{**base.to_dict(), "seed": int(rng.integers(2**31))})
        params = init_params(cfg, dtype=np.float64)
        q = prepare_graph(random_text_graph(rng, size()), table, cfg, np.float64)
        pos = prepare_graph(random_code_graph(rng, size()), table, cfg, np.float64)
        neg = prepare_graph(random_code_graph(rng, size()), table, cfg, np.float64)

        def loss():
            return triple_loss(encode(q, params), encode(pos, params), encode(neg, params), params, margin)

        try:
            if loss().item() == 0.0:
                raise KinkError("inactive hinge")
            measured = grad_check_coords(loss, params.parameters(), h=h)
        except KinkError:
            resamples += 1
            if resamples > max_resamples:
                raise
            continue
        for (name, tensor), (analytic, numeric) in zip(params.tensors.items(), measured):
            errs = rel_error(analytic, numeric)
            coords += errs.size
            worst = max(worst, float(errs.max()))
            for i in np.flatnonzero(errs >= tolerance):
                again = central_difference(loss, tensor, int(i), recheck_h)
                failures.append(CoordFailure(done, name, int(i), float(analytic[i]), float(numeric[i]), recheck_h, again))
        done += 1
    return GradcheckReport(worst, pairs, resamples, time.perf_counter() - start, coords, tuple(failures))
