"""K-hop answer graphs over embedding nearest neighborhoods.

Starting from a vocabulary of answer phrases, each expansion adds the k
nearest table words of every current node and directed edges from those
neighbor words into the node they expand.  After the final expansion,
edges that directly connect two original answers are dropped, so original
answers exchange information only through augmented word nodes.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .embeddings import EmbeddingTable, Phrase, embed_phrase, nearest_neighbors
from .errors import DataError

__all__ = [
    "NodeRecord",
    "AnswerGraph",
    "PairIndex",
    "neighbor_words",
    "expand_hop",
    "build_answer_graph",
    "neighborhood",
    "pair_index",
    "save_graph",
    "load_graph",
    "graph_to_dict",
]


@dataclass
class NodeRecord:
    """A graph node: its phrase, the hop at which it entered, its feature."""

    label: Phrase
    hop: int
    feature: np.ndarray


@dataclass
class AnswerGraph:
    """Directed answer graph.

    Nodes are ordered by ``(hop, label text)``.  Edges are ``(src, dst)``
    index pairs; messages flow from neighbor words toward the nodes they
    expand.  ``original`` holds the indices of hop-0 nodes.
    """

    nodes: list[NodeRecord]
    edges: set[tuple[int, int]]
    original: set[int]
    dim: int
    _index: dict[str, int] = field(init=False, repr=False)
    _pair_cache: "PairIndex | None" = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        self._index = {node.label.text: i for i, node in enumerate(self.nodes)}

    def node_index(self, label: Phrase) -> int:
        try:
            return self._index[label.text]
        except KeyError:
            raise KeyError(f"no node labeled {label.text!r}") from None

    def feature_matrix(self) -> np.ndarray:
        return np.stack([node.feature for node in self.nodes]).astype(np.float64)

    def original_rows(self) -> list[int]:
        """Hop-0 node indices in node order (so sorted by label text)."""
        return sorted(self.original)

    def original_answers(self) -> list[Phrase]:
        return [self.nodes[i].label for i in self.original_rows()]


def neighbor_words(table: EmbeddingTable, phrase: Phrase, k_neighbors: int) -> list[str]:
    """n(a): nearest table words to the phrase embedding.

    The phrase's own tokens are excluded.  A phrase with no in-table token
    has no embedding and therefore no neighbors.
    """
    vec = embed_phrase(table, phrase)
    if vec is None:
        return []
    pairs = nearest_neighbors(table, vec, k_neighbors, exclude=set(phrase.tokens))
    return [word for word, _ in pairs]


def expand_hop(
    current: set[Phrase], table: EmbeddingTable, k_neighbors: int
) -> tuple[set[Phrase], set[tuple[Phrase, Phrase]]]:
    """One expansion step.

    Returns the set of newly reached phrases and the full edge set of this
    application: a pair ``(neighbor, node)`` for every node in ``current``
    and every word in its neighborhood.
    """
    new_nodes: set[Phrase] = set()
    new_edges: set[tuple[Phrase, Phrase]] = set()
    for phrase in sorted(current, key=lambda p: p.text):
        for word in neighbor_words(table, phrase, k_neighbors):
            neighbor = Phrase(word)
            new_edges.add((neighbor, phrase))
            if neighbor not in current:
                new_nodes.add(neighbor)
    return new_nodes, new_edges


def build_answer_graph(
    vocab: Iterable[Phrase],
    table: EmbeddingTable,
    k_neighbors: int = 5,
    hops: int = 2,
) -> AnswerGraph:
    """Build the K-hop graph for a vocabulary.

    Args:
        vocab: original answer phrases (non-empty).
        table: embedding table supplying neighborhoods and node features.
        k_neighbors: neighborhood size per node.
        hops: number of expansions K; ``hops=0`` yields the vocabulary with
            no edges.

    Original answers with no in-table token get a zero feature vector and
    stay isolated; a warning lists them.
    """
    originals = set(vocab)
    if not originals:
        raise DataError("vocabulary is empty")
    if k_neighbors <= 0:
        raise ValueError("k_neighbors must be positive")
    if hops < 0:
        raise ValueError("hops must be non-negative")

    hop_of: dict[Phrase, int] = {p: 0 for p in originals}
    current = set(originals)
    edge_phrases: set[tuple[Phrase, Phrase]] = set()
    for k in range(1, hops + 1):
        new_nodes, new_edges = expand_hop(current, table, k_neighbors)
        for p in new_nodes:
            hop_of[p] = k
        current |= new_nodes
        edge_phrases |= new_edges
    # Edges directly between two original answers are dropped once, after
    # the final expansion.
    edge_phrases = {
        (j, i) for (j, i) in edge_phrases if not (hop_of[j] == 0 and hop_of[i] == 0)
    }

    ordered = sorted(current, key=lambda p: (hop_of[p], p.text))
    index = {p.text: i for i, p in enumerate(ordered)}
    features: list[np.ndarray] = []
    missing: list[str] = []
    for p in ordered:
        vec = embed_phrase(table, p)
        if vec is None:
            missing.append(p.text)
            vec = np.zeros(table.dim, dtype=np.float64)
        features.append(np.asarray(vec, dtype=np.float64))
    if missing:
        warnings.warn(
            "original answers without in-table tokens get zero features: "
            + ", ".join(missing)
        )

    nodes = [NodeRecord(p, hop_of[p], features[i]) for i, p in enumerate(ordered)]
    edges = {(index[j.text], index[i.text]) for (j, i) in edge_phrases}
    original = {i for i, p in enumerate(ordered) if hop_of[p] == 0}
    return AnswerGraph(nodes, edges, original, table.dim)


def neighborhood(graph: AnswerGraph, i: int) -> set[int]:
    """Aggregation neighborhood of node ``i``: itself plus in-edge sources."""
    if not 0 <= i < len(graph.nodes):
        raise IndexError(f"node index {i} out of range")
    return {i} | {src for (src, dst) in graph.edges if dst == i}


@dataclass(frozen=True)
class PairIndex:
    """Flat (dst, src) attention pairs, sorted by (dst, src).

    Every node contributes the self pair ``(i, i)``, so both the dst- and
    src-segmentations cover all nodes contiguously.  ``dst_starts`` and
    ``src_starts`` are the usual CSR-style offsets; ``src_perm`` sorts the
    pair arrays by source node.
    """

    dst: np.ndarray
    src: np.ndarray
    dst_starts: np.ndarray
    src_perm: np.ndarray
    src_starts: np.ndarray

    @property
    def n_pairs(self) -> int:
        return self.dst.shape[0]


def pair_index(graph: AnswerGraph) -> PairIndex:
    """Build (and cache on the graph) the attention pair arrays."""
    if graph._pair_cache is not None:
        return graph._pair_cache
    n = len(graph.nodes)
    pairs = sorted({(i, i) for i in range(n)} | {(d, s) for (s, d) in graph.edges})
    dst = np.array([p[0] for p in pairs], dtype=np.intp)
    src = np.array([p[1] for p in pairs], dtype=np.intp)
    dst_starts = np.concatenate(([0], np.cumsum(np.bincount(dst, minlength=n)))).astype(np.intp)
    src_perm = np.lexsort((dst, src)).astype(np.intp)
    src_starts = np.concatenate(([0], np.cumsum(np.bincount(src, minlength=n)))).astype(np.intp)
    idx = PairIndex(dst, src, dst_starts, src_perm, src_starts)
    graph._pair_cache = idx
    return idx


def graph_to_dict(graph: AnswerGraph, meta: dict | None = None) -> dict:
    return {
        "dim": graph.dim,
        "nodes": [{"label": n.label.text, "hop": n.hop} for n in graph.nodes],
        "edges": sorted([int(s), int(d)] for (s, d) in graph.edges),
        "original": sorted(int(i) for i in graph.original),
        "features": [[float(v) for v in n.feature] for n in graph.nodes],
        "meta": meta or {},
    }


def save_graph(graph: AnswerGraph, path: str, meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(graph_to_dict(graph, meta), handle, sort_keys=True, separators=(",", ":"))
        handle.write("\n")


def load_graph(path: str) -> AnswerGraph:
    with open(path, "r", encoding="utf-8") as handle:
        try:
            obj = json.load(handle)
        except json.JSONDecodeError:
            raise DataError(f"{path}: invalid JSON") from None
    try:
        dim = int(obj["dim"])
        labels = [(str(n["label"]), int(n["hop"])) for n in obj["nodes"]]
        edges = {(int(s), int(d)) for s, d in obj["edges"]}
        original = {int(i) for i in obj["original"]}
        features = [np.array(f, dtype=np.float64) for f in obj["features"]]
    except (KeyError, TypeError, ValueError):
        raise DataError(f"{path}: malformed graph file") from None
    if len(features) != len(labels):
        raise DataError(f"{path}: feature block does not match node count")
    n = len(labels)
    for s, d in edges:
        if not (0 <= s < n and 0 <= d < n):
            raise DataError(f"{path}: edge index out of range")
    nodes = []
    for (text, hop), feat in zip(labels, features):
        if feat.shape != (dim,):
            raise DataError(f"{path}: feature dimension mismatch for {text!r}")
        nodes.append(NodeRecord(Phrase(text), hop, feat))
    return AnswerGraph(nodes, edges, original, dim)
