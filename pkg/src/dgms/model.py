"""Graph matching model: relational graph convolution, cross-attention
matching, pooling and cosine scoring.

One parameter set is shared by the text and code branches. Relations come
from a single vocabulary covering both graph kinds plus inverses; a text
graph simply never touches the code relation weights and vice versa.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import (
    Tensor,
    add,
    col_max,
    col_mean,
    concat_cols,
    cosine,
    matmul,
    mul,
    relu,
    repeat_rows,
    row_normalize,
    scale,
    sub,
    transpose,
)
from .codegraph import CODE_RELATIONS
from .embeddings import node_features
from .graph import LabeledMultigraph, ensure_augmented, inverse_name
from .textgraph import TEXT_RELATIONS

CHECKPOINT_VERSION = 1

_CANONICAL = TEXT_RELATIONS + CODE_RELATIONS
UNIFIED_RELATIONS: tuple[str, ...] = _CANONICAL + tuple(inverse_name(r) for r in _CANONICAL)


class CheckpointError(ValueError):
    pass


class MatchOp(str, enum.Enum):
    NONE = "none"
    SUB = "sub"
    MUL = "mul"
    SUBMUL = "submul"


class AggOp(str, enum.Enum):
    AVERAGE = "avg"
    MAX = "max"
    FCAVG = "fcavg"
    FCMAX = "fcmax"

    @property
    def uses_fc(self) -> bool:
        return self in (AggOp.FCAVG, AggOp.FCMAX)


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 1
    rgcn_dim: int = 100
    match_op: MatchOp = MatchOp.SUBMUL
    agg_op: AggOp = AggOp.FCMAX
    agg_dim: int = 100
    input_dim: int = 300
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "match_op", MatchOp(self.match_op))
        object.__setattr__(self, "agg_op", AggOp(self.agg_op))
        for name in ("layers", "rgcn_dim", "agg_dim", "input_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def match_dim(self) -> int:
        """Node width after matching (d')."""
        return 2 * self.rgcn_dim if self.match_op is MatchOp.SUBMUL else self.rgcn_dim

    @property
    def graph_dim(self) -> int:
        """Width of the pooled graph vector."""
        return self.agg_dim if self.agg_op.uses_fc else self.match_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["match_op"] = self.match_op.value
        d["agg_op"] = self.agg_op.value
        return d


@dataclass
class DgmsParams:
    config: ModelConfig
    relations: tuple[str, ...]
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def self_weight(self, layer: int) -> Tensor:
        return self.tensors[f"rgcn.{layer}.self"]

    def rel_weight(self, layer: int, relation: str) -> Tensor:
        return self.tensors[f"rgcn.{layer}.rel.{relation}"]

    @property
    def fc_weight(self) -> Tensor:
        return self.tensors["fc.weight"]

    @property
    def fc_bias(self) -> Tensor:
        return self.tensors["fc.bias"]

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def expected_shapes(self) -> dict[str, tuple[int, int]]:
        return _param_shapes(self.config, self.relations)

    def astype(self, dtype) -> "DgmsParams":
        return DgmsParams(
            self.config,
            self.relations,
            {k: Tensor(t.data.astype(dtype), requires_grad=True, name=k) for k, t in self.tensors.items()},
        )

    def copy(self) -> "DgmsParams":
        return self.astype(self.dtype)

    def fingerprint(self, table=None) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.config.to_dict(), sort_keys=True).encode())
        h.update("\0".join(self.relations).encode("utf-8"))
        for name, t in self.tensors.items():
            h.update(name.encode() + b"\0")
            h.update(np.ascontiguousarray(t.data).tobytes())
        if table is not None:
            h.update(table.digest().encode())
        return h.hexdigest()


def _param_shapes(config: ModelConfig, relations) -> dict[str, tuple[int, int]]:
    shapes = {}
    d_in = config.input_dim
    for layer in range(config.layers):
        shapes[f"rgcn.{layer}.self"] = (d_in, config.rgcn_dim)
        for r in relations:
            shapes[f"rgcn.{layer}.rel.{r}"] = (d_in, config.rgcn_dim)
        d_in = config.rgcn_dim
    if config.agg_op.uses_fc:
        shapes["fc.weight"] = (config.match_dim, config.agg_dim)
        shapes["fc.bias"] = (1, config.agg_dim)
    return shapes


def init_params(config: ModelConfig, relations=UNIFIED_RELATIONS, dtype=np.float32) -> DgmsParams:
    """Glorot-uniform weights and zero biases drawn from ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    tensors = {}
    for name, (fan_in, fan_out) in _param_shapes(config, tuple(relations)).items():
        if name == "fc.bias":
            data = np.zeros((fan_in, fan_out))
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            data = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        tensors[name] = Tensor(data.astype(dtype), requires_grad=True, name=name)
    return DgmsParams(config, tuple(relations), tensors)


# -- graph preparation ------------------------------------------------------------


@dataclass(frozen=True)
class PreparedGraph:
    """Frozen inputs for one graph: node features and per-relation mean operators.

    ``adjacency`` holds ``(relation name, A)`` pairs where ``A[i, j]`` is
    ``1 / |N_i^r|`` for each in-neighbour ``j`` of ``i``. Relations without
    edges are omitted since they contribute nothing.
    """

    features: np.ndarray
    adjacency: tuple[tuple[str, np.ndarray], ...]

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    def astype(self, dtype) -> "PreparedGraph":
        return PreparedGraph(
            self.features.astype(dtype), tuple((r, a.astype(dtype)) for r, a in self.adjacency)
        )


def mean_adjacency(g: LabeledMultigraph) -> list[tuple[str, np.ndarray]]:
    n = g.num_nodes
    out = []
    for rid, name in enumerate(g.relations):
        a = np.zeros((n, n))
        for s, d, r in g.edges:
            if r == rid:
                a[d, s] = 1.0
        if not a.any():
            continue
        counts = a.sum(axis=1, keepdims=True)
        out.append((name, a / np.where(counts > 0, counts, 1)))
    return out


def prepare_graph(g: LabeledMultigraph, table, config: ModelConfig, dtype=np.float32) -> PreparedGraph:
    g = ensure_augmented(g)
    for name in g.relations:
        if name not in UNIFIED_RELATIONS:
            raise ValueError(f"relation {name!r} is not in the model's relation vocabulary")
    feats = node_features(g, table, dim=config.input_dim)
    if feats.shape[1] != config.input_dim:
        raise ValueError(f"feature dim {feats.shape[1]} != model input_dim {config.input_dim}")
    adj = tuple((r, a.astype(dtype)) for r, a in mean_adjacency(g))
    return PreparedGraph(feats.astype(dtype), adj)


# -- forward --------------------------------------------------------------------


def rgcn_forward(graph: PreparedGraph, x: Tensor, params: DgmsParams, layer: int) -> Tensor:
    """One propagation step: ``ReLU(x W_self + sum_r A_r x W_r)``."""
    if x.shape[0] != graph.num_nodes:
        raise ValueError(f"feature rows {x.shape[0]} != graph nodes {graph.num_nodes}")
    out = matmul(x, params.self_weight(layer))
    for rel, a in graph.adjacency:
        out = add(out, matmul(matmul(Tensor(a), x), params.rel_weight(layer, rel)))
    return relu(out)


def encode(graph: PreparedGraph, params: DgmsParams) -> Tensor:
    """Node embeddings after all RGCN layers. Query-independent, so cacheable."""
    x = Tensor(graph.features.astype(params.dtype, copy=False))
    for layer in range(params.config.layers):
        x = rgcn_forward(graph, x, params, layer)
    return x


def cross_attention(q: Tensor, e: Tensor) -> Tensor:
    """``alpha[i, j] = cosine(q_i, e_j)``; zero-norm rows give 0."""
    if q.shape[1] != e.shape[1]:
        raise ValueError(f"feature dims differ: {q.shape} vs {e.shape}")
    return matmul(row_normalize(q), transpose(row_normalize(e)))


def context_repr(alpha: Tensor, e: Tensor) -> Tensor:
    """Row i is ``(1/N) * sum_j alpha[i, j] * e_j`` (plain 1/N, no softmax)."""
    return scale(matmul(alpha, e), 1.0 / e.shape[0])


def match_nodes(x: Tensor, xbar: Tensor, op: MatchOp | str) -> Tensor:
    op = MatchOp(op)
    if x.shape != xbar.shape:
        raise ValueError(f"match_nodes: shape mismatch {x.shape} vs {xbar.shape}")
    if op is MatchOp.NONE:
        return x
    if op is MatchOp.MUL:
        return mul(x, xbar)
    diff = mul(sub(x, xbar), sub(xbar, x))
    if op is MatchOp.SUB:
        return diff
    return concat_cols(diff, mul(x, xbar))


def aggregate(x: Tensor, params: DgmsParams, op: AggOp | str) -> Tensor:
    op = AggOp(op)
    if x.shape[0] == 0:
        raise ValueError("cannot aggregate an empty node set")
    if op.uses_fc:
        x = add(matmul(x, params.fc_weight), repeat_rows(params.fc_bias, x.shape[0]))
    if op in (AggOp.MAX, AggOp.FCMAX):
        return col_max(x)
    return col_mean(x)


def match_and_score(hq: Tensor, he: Tensor, params: DgmsParams) -> Tensor:
    """Similarity of two encoded graphs (text rows ``hq``, code rows ``he``)."""
    cfg = params.config
    if cfg.match_op is MatchOp.NONE:
        mq, me = hq, he
    else:
        alpha = cross_attention(hq, he)
        mq = match_nodes(hq, context_repr(alpha, he), cfg.match_op)
        me = match_nodes(he, context_repr(transpose(alpha), hq), cfg.match_op)
    return cosine(aggregate(mq, params, cfg.agg_op), aggregate(me, params, cfg.agg_op))


def score_prepared(text: PreparedGraph, code: PreparedGraph, params: DgmsParams) -> Tensor:
    return match_and_score(encode(text, params), encode(code, params), params)


def score_pair(g_text: LabeledMultigraph, g_code: LabeledMultigraph, params: DgmsParams, table) -> float:
    """Cosine similarity in [-1, 1] between a text graph and a code graph."""
    cfg = params.config
    t = prepare_graph(g_text, table, cfg, params.dtype)
    c = prepare_graph(g_code, table, cfg, params.dtype)
    return score_prepared(t, c, params).item()


# -- checkpoints ------------------------------------------------------------------


def tensor_to_obj(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(v) for v in a.reshape(-1)]}


def tensor_from_obj(obj: dict, dtype=np.float32) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in obj["shape"])
        data = np.asarray(obj["data"], dtype=np.float64).astype(dtype)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"bad tensor record: {exc}") from None
    if len(shape) != 2 or data.size != shape[0] * shape[1]:
        raise CheckpointError(f"tensor data length {data.size} does not match shape {shape}")
    return data.reshape(shape)


def params_to_checkpoint(params: DgmsParams, **extra) -> dict:
    ckpt = {
        "version": CHECKPOINT_VERSION,
        "config": params.config.to_dict(),
        "relations": list(params.relations),
        "tensors": {name: tensor_to_obj(t.data) for name, t in params.tensors.items()},
    }
    ckpt.update(extra)
    return ckpt


def params_from_checkpoint(ckpt: dict) -> DgmsParams:
    if ckpt.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {ckpt.get('version')!r}")
    try:
        config = ModelConfig(**ckpt["config"])
        relations = tuple(ckpt["relations"])
        records = ckpt["tensors"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from None
    expected = _param_shapes(config, relations)
    if set(records) != set(expected):
        raise CheckpointError(f"tensor names {sorted(records)} do not match config {sorted(expected)}")
    tensors = {}
    for name, shape in expected.items():
        data = tensor_from_obj(records[name])
        if data.shape != shape:
            raise CheckpointError(f"{name}: shape {data.shape} != expected {shape}")
        tensors[name] = Tensor(data, requires_grad=True, name=name)
    return DgmsParams(config, relations, tensors)


def dump_json(obj) -> bytes:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
