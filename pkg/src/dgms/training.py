"""Margin-ranking training with triplet sampling and Adam."""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tape, Tensor, add, backward, hinge, scale, sub
from .corpus import Corpus
from .model import (
    DgmsParams,
    ModelConfig,
    PreparedGraph,
    encode,
    init_params,
    match_and_score,
    params_to_checkpoint,
    prepare_graph,
    tensor_to_obj,
)

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Triple:
    query: int
    positive: int
    negative: int

    def __post_init__(self):
        if self.positive == self.negative:
            raise ValueError("positive and negative must differ")


@dataclass(frozen=True)
class TrainConfig:
    margin: float = 0.5
    learning_rate: float = 1e-4
    batch_size: int = 10
    epochs: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    resample_negatives: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


def sample_triples(n: int, epoch: int, seed: int) -> list[Triple]:
    """One triple per (doc, code) pair with a uniform negative from the other codes.

    Entries are addressed by position; the stream depends only on
    ``(seed, epoch)``.
    """
    if n < 2:
        raise ValueError("need at least 2 corpus entries to sample negatives")
    rng = np.random.default_rng([seed, epoch])
    out = []
    for i in range(n):
        j = int(rng.integers(n - 1))
        out.append(Triple(i, i, j + 1 if j >= i else j))
    return out


def triple_loss(
    query: Tensor, positive: Tensor, negative: Tensor, params: DgmsParams, margin: float
) -> Tensor:
    """``max(0, margin - sim(q, e) + sim(q, e_neg))`` from encoded node embeddings."""
    s_pos = match_and_score(query, positive, params)
    s_neg = match_and_score(query, negative, params)
    gap = add(sub(s_neg, s_pos), Tensor(np.array([[margin]], dtype=params.dtype)))
    return hinge(gap)


def batch_loss(
    triples: Sequence[Triple],
    texts: Sequence[PreparedGraph],
    codes: Sequence[PreparedGraph],
    params: DgmsParams,
    margin: float,
) -> Tensor:
    """Mean triple loss over a batch, as one differentiable expression."""
    total = None
    for t in triples:
        loss = triple_loss(
            encode(texts[t.query], params), encode(codes[t.positive], params), encode(codes[t.negative], params),
            params, margin,
        )
        total = loss if total is None else add(total, loss)
    return scale(total, 1.0 / len(triples))


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "AdamState":
        return AdamState(self.step, {k: a.copy() for k, a in self.m.items()}, {k: a.copy() for k, a in self.v.items()})

    def to_obj(self) -> dict:
        return {
            "step": self.step,
            "m": {k: tensor_to_obj(a) for k, a in self.m.items()},
            "v": {k: tensor_to_obj(a) for k, a in self.v.items()},
        }


def adam_step(params: DgmsParams, grads: dict[str, np.ndarray], state: AdamState, config: TrainConfig) -> None:
    """In-place bias-corrected Adam update of ``params`` keyed by tensor name."""
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    for name, p in params.tensors.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p.data = (p.data - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)).astype(p.dtype)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class TrainResult:
    best_params: DgmsParams
    best_epoch: int | None
    best_val_loss: float
    history: list[EpochRecord]
    final_params: DgmsParams
    adam: AdamState
    best_adam: AdamState

    def best_val_so_far(self) -> list[float]:
        out, best = [], math.inf
        for r in self.history:
            best = min(best, r.val_loss)
            out.append(best)
        return out

    def checkpoint(self, table=None, train_config: TrainConfig | None = None) -> dict:
        extra = {"adam": self.best_adam.to_obj()}
        if train_config is not None:
            extra["train_config"] = asdict(train_config)
        if table is not None:
            extra["embeddings"] = table.describe()
        return params_to_checkpoint(self.best_params, **extra)


class Trainer:
    """Holds prepared graphs for a corpus so each is featurized once."""

    def __init__(self, corpus: Corpus, params: DgmsParams, table):
        self.params = params
        cfg = params.config
        self.texts = [prepare_graph(e.text_graph, table, cfg, params.dtype) for e in corpus]
        self.codes = [prepare_graph(e.code_graph, table, cfg, params.dtype) for e in corpus]

    def triple_grad(self, t: Triple, margin: float) -> tuple[float, dict[str, np.ndarray]]:
        p = self.params
        with Tape():
            loss = triple_loss(encode(self.texts[t.query], p), encode(self.codes[t.positive], p),
                               encode(self.codes[t.negative], p), p, margin)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss {value} on triple {t}")
        if value == 0.0:
            return value, {}
        grads = backward(loss)
        return value, {name: grads[tensor] for name, tensor in p.tensors.items() if tensor in grads}

    def mean_loss(self, triples: Sequence[Triple], margin: float) -> float:
        p = self.params
        losses = [
            triple_loss(encode(self.texts[t.query], p), encode(self.codes[t.positive], p),
                        encode(self.codes[t.negative], p), p, margin).item()
            for t in triples
        ]
        return float(np.mean(losses))


def train(
    corpus: Corpus,
    val_corpus: Corpus,
    model_config: ModelConfig,
    train_config: TrainConfig,
    table,
    params: DgmsParams | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    """Train with mean batch margin loss; keep the lowest-validation-loss params."""
    if len(corpus) == 0 or len(val_corpus) == 0:
        raise ValueError("training and validation corpora must be non-empty")
    params = params if params is not None else init_params(model_config)
    state = AdamState()
    best = params.copy()
    best_state = state.copy()
    best_val, best_epoch = math.inf, None
    history: list[EpochRecord] = []
    if train_config.epochs == 0:
        return TrainResult(best, None, best_val, history, params, state, best_state)

    trainer = Trainer(corpus, params, table)
    validator = Trainer(val_corpus, params, table)
    val_triples = sample_triples(len(val_corpus), 0, train_config.seed + 1_000_003)
    pool = ThreadPoolExecutor(train_config.threads) if train_config.threads > 1 else None
    try:
        for epoch in range(train_config.epochs):
            start = time.perf_counter()
            triples = sample_triples(
                len(corpus), epoch if train_config.resample_negatives else 0, train_config.seed
            )
            order = np.random.default_rng([train_config.seed, epoch, 1]).permutation(len(triples))
            triples = [triples[i] for i in order]
            epoch_losses = []
            for b in range(0, len(triples), train_config.batch_size):
                batch = triples[b : b + train_config.batch_size]
                work = lambda t: trainer.triple_grad(t, train_config.margin)  # noqa: E731
                results = list(pool.map(work, batch)) if pool else [work(t) for t in batch]
                grads: dict[str, np.ndarray] = {}
                for _, g in results:  # summed in batch order for determinism
                    for name, arr in g.items():
                        grads[name] = grads[name] + arr if name in grads else arr.copy()
                for name in grads:
                    grads[name] /= len(batch)
                epoch_losses.extend(v for v, _ in results)
                adam_step(params, grads, state, train_config)
            train_loss = float(np.mean(epoch_losses))
            val_loss = validator.mean_loss(val_triples, train_config.margin)
            if not math.isfinite(val_loss):
                raise TrainingError(f"non-finite validation loss at epoch {epoch}")
            rec = EpochRecord(epoch, train_loss, val_loss, time.perf_counter() - start)
            history.append(rec)
            log.info("epoch %d train %.4f val %.4f", epoch, train_loss, val_loss)
            if on_epoch:
                on_epoch(rec)
            if val_loss < best_val:
                best_val, best_epoch = val_loss, epoch
                best = params.copy()
                best_state = state.copy()
    finally:
        if pool:
            pool.shutdown()
    return TrainResult(best, best_epoch, best_val, history, params, state, best_state)
