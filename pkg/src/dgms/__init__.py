"""Semantic code retrieval by deep graph matching over text and code graphs."""

from .graph import LabeledMultigraph, augment_inverses, decode_graph_json, encode_graph_json
from .model import DgmsParams, ModelConfig, init_params, score_pair

__version__ = "0.1.0"

__all__ = [
    "DgmsParams",
    "LabeledMultigraph",
    "ModelConfig",
    "augment_inverses",
    "decode_graph_json",
    "encode_graph_json",
    "init_params",
    "score_pair",
]
