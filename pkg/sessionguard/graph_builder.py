"""
PR 02 — Session Graph Builder

Encodes one Session as a SessionGraph: one node per tool call, bidirectional
sequential edges between consecutive calls, bidirectional data-flow edges
where an earlier response visibly feeds a later call's arguments, and a
single self-loop for one-call sessions.

Data-flow rule for calls i < j (response_i non-empty, at most 1000 chars):
- the first PREFIX_WINDOW characters of response_i occur in args_j, or
- one of the first TOKEN_WINDOW whitespace tokens of response_i, longer
  than MIN_TOKEN_LEN characters, occurs in args_j
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from sessionguard.session_model import AttackMode, Session, ToolCall


logger = logging.getLogger("sessionguard.graph_builder")


class GraphBuildError(Exception):
    """Raised when a graph cannot be built from a session"""
    pass


PREFIX_WINDOW = 50
TOKEN_WINDOW = 5
MIN_TOKEN_LEN = 4
MAX_RESPONSE_CHARS = 1000


class EdgeKind(str, Enum):
    SEQUENTIAL = "sequential"
    DATA_FLOW = "data_flow"
    SELF_LOOP = "self_loop"


# Stable integer codes for binary dumps
EDGE_KIND_CODES = {EdgeKind.SEQUENTIAL: 0, EdgeKind.DATA_FLOW: 1, EdgeKind.SELF_LOOP: 2}


@dataclass(frozen=True, order=True)
class Edge:
    src: int
    dst: int
    kind: EdgeKind


@dataclass
class SessionGraph:
    session_id: str
    n_nodes: int
    edges: List[Edge]
    label: int
    attack_mode: Optional[AttackMode] = None
    task_id: Optional[str] = None
    source: str = ""
    node_features: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.node_features is None:
            self.node_features = np.zeros((self.n_nodes, 0), dtype=np.float64)

    @property
    def attack_category(self) -> Optional[str]:
        return self.attack_mode.name if self.attack_mode is not None else None

    @property
    def feature_dim(self) -> int:
        return int(self.node_features.shape[1])


def sequential_edges(n: int) -> List[Edge]:
    """v_i <-> v_(i+1) for consecutive calls; empty for a single call."""
    if n < 1:
        raise GraphBuildError(f"node count must be >= 1, got {n}")
    edges = []
    for i in range(n - 1):
        edges.append(Edge(i, i + 1, EdgeKind.SEQUENTIAL))
        edges.append(Edge(i + 1, i, EdgeKind.SEQUENTIAL))
    return edges


def response_tokens(response_text: str) -> List[str]:
    """First TOKEN_WINDOW whitespace tokens, then keep those longer than MIN_TOKEN_LEN."""
    return [t for t in response_text.split()[:TOKEN_WINDOW] if len(t) > MIN_TOKEN_LEN]


def data_flow_edges(calls: Sequence[ToolCall], prefix_window: int = PREFIX_WINDOW) -> List[Edge]:
    if prefix_window < 1:
        raise GraphBuildError(f"prefix_window must be >= 1, got {prefix_window}")
    found = set()
    for i, source in enumerate(calls):
        response = source.response_text
        # Over-long responses are skipped for both rules
        if not response.strip() or source.response_length > MAX_RESPONSE_CHARS:
            continue
        prefix = response[:prefix_window]
        tokens = response_tokens(response)
        for j in range(i + 1, len(calls)):
            args = calls[j].args_text
            if prefix in args or any(t in args for t in tokens):
                found.add(Edge(i, j, EdgeKind.DATA_FLOW))
                found.add(Edge(j, i, EdgeKind.DATA_FLOW))
    return sorted(found)


def build_graph(session: Session, prefix_window: int = PREFIX_WINDOW) -> SessionGraph:
    """
    Encode a session. Node features stay an n×0 placeholder until featurization.
    """
    n = len(session.calls)
    if n == 1:
        edges = [Edge(0, 0, EdgeKind.SELF_LOOP)]
    else:
        edges = sorted(set(sequential_edges(n)) | set(data_flow_edges(session.calls, prefix_window)))
    return SessionGraph(
        session_id=session.session_id,
        n_nodes=n,
        edges=edges,
        label=1 if session.is_attack else 0,
        attack_mode=session.attack_mode,
        task_id=session.task_id,
        source=session.source,
    )


def edge_index(graph: SessionGraph) -> np.ndarray:
    """
    2×E int64 array of distinct (src, dst) pairs. Kinds are dropped: message
    passing treats a pair carrying two kinds as one neighbor.
    """
    pairs = sorted({(e.src, e.dst) for e in graph.edges})
    if not pairs:
        return np.zeros((2, 0), dtype=np.int64)
    return np.asarray(pairs, dtype=np.int64).T.copy()


def node_degrees(graph: SessionGraph) -> np.ndarray:
    degrees = np.zeros(graph.n_nodes, dtype=np.int64)
    index = edge_index(graph)
    np.add.at(degrees, index[1], 1)
    return degrees


def graph_to_dict(graph: SessionGraph) -> Dict:
    """Debug dump: node count, typed edge list, label."""
    return {
        "session_id": graph.session_id,
        "n_nodes": graph.n_nodes,
        "label": graph.label,
        "attack_mode": graph.attack_category,
        "edges": [{"src": e.src, "dst": e.dst, "kind": e.kind.value} for e in graph.edges],
    }


def edge_counts(graphs: Iterable[SessionGraph]) -> Dict[str, int]:
    """Directed edge entries per kind, summed over graphs."""
    counts: Counter = Counter({k.value: 0 for k in EdgeKind})
    for graph in graphs:
        counts.update(e.kind.value for e in graph.edges)
    return dict(counts)


__all__ = [
    "GraphBuildError",
    "PREFIX_WINDOW",
    "TOKEN_WINDOW",
    "MIN_TOKEN_LEN",
    "MAX_RESPONSE_CHARS",
    "EdgeKind",
    "EDGE_KIND_CODES",
    "Edge",
    "SessionGraph",
    "sequential_edges",
    "response_tokens",
    "data_flow_edges",
    "build_graph",
    "edge_index",
    "node_degrees",
    "graph_to_dict",
    "edge_counts",
]
