"""
PR 04 — Feature Extraction

Node features in three modes plus the pooled session representation.

- metadata: one-hot(tool) ‖ param_hash ‖ min(response_length, 10000) / 10000   (n_tools + 2)
- content:  embed(args_text) ‖ embed(response_text)                             (2 × 384)
- combined: metadata ‖ content                                                  (n_tools + 770)

pooled_readout() concatenates the coordinatewise mean and max over nodes; it
is the input of the classical baselines.

Creates (CLI featurize): featurized_<part>.npz with an explicit JSON header.
"""

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from sessionguard.embedding_provider import DEFAULT_DIM, EmbeddingProvider
from sessionguard.graph_builder import (
    EDGE_KIND_CODES,
    PREFIX_WINDOW,
    Edge,
    SessionGraph,
    build_graph,
)
from sessionguard.session_model import AttackMode, Session, ToolCall, ToolVocab


class FeatureExtractionError(Exception):
    """Raised when node or pooled features cannot be computed"""
    pass


class FeatureConfigError(FeatureExtractionError):
    """Raised when the feature configuration cannot be satisfied"""
    pass


RESPONSE_CAP = 10000
HASH_MODULUS = 10000


class FeatureMode(str, Enum):
    METADATA = "metadata"
    CONTENT = "content"
    COMBINED = "combined"


VALID_FEATURE_MODES = [m.value for m in FeatureMode]


@dataclass
class FeatureConfig:
    mode: FeatureMode
    vocab: ToolVocab
    embedding_dim: int = DEFAULT_DIM
    response_cap: int = RESPONSE_CAP
    hash_modulus: int = HASH_MODULUS

    def __post_init__(self):
        try:
            self.mode = FeatureMode(self.mode)
        except ValueError:
            raise FeatureConfigError(f"mode must be one of {VALID_FEATURE_MODES}, got: {self.mode}")

    @property
    def needs_provider(self) -> bool:
        return self.mode != FeatureMode.METADATA

    @property
    def node_dim(self) -> int:
        metadata = self.vocab.n_tools + 2
        content = 2 * self.embedding_dim
        if self.mode == FeatureMode.METADATA:
            return metadata
        if self.mode == FeatureMode.CONTENT:
            return content
        return metadata + content

    @property
    def pooled_dim(self) -> int:
        return 2 * self.node_dim

    def to_dict(self) -> Dict:
        return {
            "mode": self.mode.value,
            "vocab": self.vocab.to_dict(),
            "embedding_dim": self.embedding_dim,
            "response_cap": self.response_cap,
            "hash_modulus": self.hash_modulus,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "FeatureConfig":
        return cls(
            mode=FeatureMode(data["mode"]),
            vocab=ToolVocab.from_dict(data["vocab"]),
            embedding_dim=int(data["embedding_dim"]),
            response_cap=int(data["response_cap"]),
            hash_modulus=int(data["hash_modulus"]),
        )

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def param_hash(args_text: str, modulus: int = HASH_MODULUS) -> float:
    """MD5 digest read as a big-endian 128-bit integer, mod `modulus`, scaled to [0, 1)."""
    digest = hashlib.md5(args_text.encode("utf-8")).digest()
    return (int.from_bytes(digest, "big") % modulus) / modulus


def metadata_features(
    call: ToolCall,
    vocab: ToolVocab,
    response_cap: int = RESPONSE_CAP,
    hash_modulus: int = HASH_MODULUS,
) -> np.ndarray:
    """Tools outside the vocabulary get an all-zero one-hot block."""
    out = np.zeros(vocab.n_tools + 2, dtype=np.float64)
    position = vocab.position(call.tool_name)
    if position is not None:
        out[position] = 1.0
    out[-2] = param_hash(call.args_text, hash_modulus)
    # Length of the full response, before any truncation
    out[-1] = min(call.response_length, response_cap) / response_cap
    return out


def content_features(call: ToolCall, provider: EmbeddingProvider) -> np.ndarray:
    vectors = provider.embed([call.args_text, call.response_text])
    return np.concatenate([vectors[0], vectors[1]])


def _require_provider(config: FeatureConfig, provider: Optional[EmbeddingProvider]) -> None:
    if config.needs_provider and provider is None:
        raise FeatureConfigError(f"feature mode '{config.mode.value}' requires an embedding provider")
    if config.needs_provider and provider.dim != config.embedding_dim:
        raise FeatureConfigError(
            f"provider dim {provider.dim} does not match embedding_dim {config.embedding_dim}"
        )


def node_features(
    call: ToolCall,
    config: FeatureConfig,
    provider: Optional[EmbeddingProvider] = None,
) -> np.ndarray:
    _require_provider(config, provider)
    if config.mode == FeatureMode.METADATA:
        return metadata_features(call, config.vocab, config.response_cap, config.hash_modulus)
    if config.mode == FeatureMode.CONTENT:
        return content_features(call, provider)
    return np.concatenate([
        metadata_features(call, config.vocab, config.response_cap, config.hash_modulus),
        content_features(call, provider),
    ])


def node_matrix(
    calls: Sequence[ToolCall],
    config: FeatureConfig,
    provider: Optional[EmbeddingProvider] = None,
) -> np.ndarray:
    """All node features of one session, with a single batched embed call."""
    _require_provider(config, provider)
    blocks = []
    if config.mode != FeatureMode.CONTENT:
        blocks.append(np.stack([
            metadata_features(c, config.vocab, config.response_cap, config.hash_modulus)
            for c in calls
        ]))
    if config.mode != FeatureMode.METADATA:
        texts = [c.args_text for c in calls] + [c.response_text for c in calls]
        vectors = provider.embed(texts)
        n = len(calls)
        blocks.append(np.concatenate([vectors[:n], vectors[n:]], axis=1))
    return np.concatenate(blocks, axis=1)


def pooled_readout(matrix: np.ndarray) -> np.ndarray:
    """
    mean ‖ max over rows.

    Columns are sorted before reduction so the result does not depend on row
    order, bit for bit.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] == 0:
        raise FeatureExtractionError("pooled_readout needs at least one node row")
    ordered = np.sort(matrix, axis=0)
    return np.concatenate([ordered.mean(axis=0), ordered[-1]])


def featurize_graph(
    graph: SessionGraph,
    calls: Sequence[ToolCall],
    config: FeatureConfig,
    provider: Optional[EmbeddingProvider] = None,
) -> SessionGraph:
    """Fill the node matrix of an already built graph in place."""
    if len(calls) != graph.n_nodes:
        raise FeatureExtractionError(
            f"graph {graph.session_id} has {graph.n_nodes} nodes but {len(calls)} calls were given"
        )
    graph.node_features = node_matrix(calls, config, provider)
    return graph


def featurize_session(
    session: Session,
    config: FeatureConfig,
    provider: Optional[EmbeddingProvider] = None,
    prefix_window: int = PREFIX_WINDOW,
) -> SessionGraph:
    graph = build_graph(session, prefix_window=prefix_window)
    return featurize_graph(graph, session.calls, config, provider)


def featurize_corpus(
    sessions: Sequence[Session],
    config: FeatureConfig,
    provider: Optional[EmbeddingProvider] = None,
    prefix_window: int = PREFIX_WINDOW,
) -> List[SessionGraph]:
    _require_provider(config, provider)
    return [featurize_session(s, config, provider, prefix_window) for s in sessions]


def pooled_matrix(graphs: Sequence[SessionGraph]) -> np.ndarray:
    if not graphs:
        raise FeatureExtractionError("no graphs to pool")
    return np.stack([pooled_readout(g.node_features) for g in graphs])


def graph_labels(graphs: Sequence[SessionGraph]) -> np.ndarray:
    return np.asarray([g.label for g in graphs], dtype=np.int64)


def save_featurized(path: Path, graphs: Sequence[SessionGraph], config: FeatureConfig) -> Path:
    """
    Write a featurized corpus as .npz: "header" (JSON text with mode, dims,
    feature config and per-session metadata), then per session i "nodes_<i>"
    (n×d), "edges_<i>" (E×3: src, dst, kind code) and a stacked "pooled" matrix.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format": "sessionguard.featurized",
        "version": 1,
        "mode": config.mode.value,
        "node_dim": config.node_dim,
        "pooled_dim": config.pooled_dim,
        "feature_config": config.to_dict(),
        "feature_digest": config.digest(),
        "sessions": [
            {
                "session_id": g.session_id,
                "label": g.label,
                "attack_mode": g.attack_category,
                "task_id": g.task_id,
                "source": g.source,
                "n_nodes": g.n_nodes,
            }
            for g in graphs
        ],
    }
    arrays: Dict[str, np.ndarray] = {"header": np.array(json.dumps(header, sort_keys=True))}
    for i, g in enumerate(graphs):
        if g.feature_dim != config.node_dim:
            raise FeatureExtractionError(
                f"graph {g.session_id} has dim {g.feature_dim}, expected {config.node_dim}"
            )
        arrays[f"nodes_{i}"] = g.node_features
        arrays[f"edges_{i}"] = np.asarray(
            [(e.src, e.dst, EDGE_KIND_CODES[e.kind]) for e in g.edges], dtype=np.int64
        ).reshape(-1, 3)
    arrays["pooled"] = pooled_matrix(graphs) if graphs else np.zeros((0, config.pooled_dim))
    np.savez(path, **arrays)
    return path


def load_featurized(path: Path) -> Tuple[List[SessionGraph], FeatureConfig]:
    kinds = {code: kind for kind, code in EDGE_KIND_CODES.items()}
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("format") != "sessionguard.featurized":
            raise FeatureExtractionError(f"{path} is not a featurized corpus")
        config = FeatureConfig.from_dict(header["feature_config"])
        graphs = []
        for i, meta in enumerate(header["sessions"]):
            edges = [Edge(int(s), int(d), kinds[int(k)]) for s, d, k in data[f"edges_{i}"]]
            graphs.append(SessionGraph(
                session_id=meta["session_id"],
                n_nodes=int(meta["n_nodes"]),
                edges=edges,
                label=int(meta["label"]),
                attack_mode=AttackMode.parse(meta["attack_mode"]) if meta["attack_mode"] else None,
                task_id=meta["task_id"],
                source=meta["source"],
                node_features=np.asarray(data[f"nodes_{i}"], dtype=np.float64),
            ))
    return graphs, config


__all__ = [
    "FeatureExtractionError",
    "FeatureConfigError",
    "RESPONSE_CAP",
    "HASH_MODULUS",
    "FeatureMode",
    "VALID_FEATURE_MODES",
    "FeatureConfig",
    "param_hash",
    "metadata_features",
    "content_features",
    "node_features",
    "node_matrix",
    "pooled_readout",
    "featurize_graph",
    "featurize_session",
    "featurize_corpus",
    "pooled_matrix",
    "graph_labels",
    "save_featurized",
    "load_featurized",
]
