"""Attention-based graph smoothing of answer embeddings.

Each layer scores every (destination, source) pair in a node's
neighborhood with a bilinear form passed through a LeakyReLU,

    e_ij = LeakyReLU((W_dst h_i)^T (W_src h_j)),

normalizes the scores per destination with a max-subtracted softmax, and
aggregates source vectors:  h_i <- sum_j alpha_ij h_j.  The layer applies
no output transform beyond the aggregation.  After L layers the rows of
the original answers are mixed with their input features,

    H_hat = epsilon * V + (1 - epsilon) * H,

which is the smoothed embedding matrix used by the prediction head.  The
input features are constants: gradients stop at V, and only the per-layer
W_src / W_dst matrices are trainable.  Backpropagation here is written by
hand and is exact, which the test suite checks against central finite
differences.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DivergenceError
from .graph import AnswerGraph, PairIndex, pair_index
from .embeddings import Phrase

__all__ = [
    "VerbalizerLayer",
    "VerbalizerModel",
    "AttentionMatrix",
    "SmoothedEmbeddings",
    "VerbalizerForward",
    "segment_softmax",
    "attention_scores",
    "propagate_layer",
    "forward",
    "smooth_embeddings",
    "verbalizer_gradients",
    "export_attention_csv",
]


@dataclass
class VerbalizerLayer:
    """Learnable score transforms of one layer; both are (D, D)."""

    w_src: np.ndarray
    w_dst: np.ndarray


@dataclass
class VerbalizerModel:
    """L attention layers plus the residual mixing weight epsilon."""

    layers: list[VerbalizerLayer]
    epsilon: float
    leaky_slope: float = 0.2

    def __post_init__(self) -> None:
        if len(self.layers) < 1:
            raise ValueError("at least one layer required")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        if self.leaky_slope <= 0.0:
            raise ValueError("leaky_slope must be positive")
        dim = self.layers[0].w_src.shape[0]
        for layer in self.layers:
            for w in (layer.w_src, layer.w_dst):
                if w.shape != (dim, dim):
                    raise ValueError("weight matrices must all be (D, D)")
                if not np.isfinite(w).all():
                    raise ValueError("weight matrices must be finite")

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def dim(self) -> int:
        return self.layers[0].w_src.shape[0]

    @classmethod
    def initialize(
        cls,
        dim: int,
        n_layers: int = 2,
        epsilon: float = 0.7,
        leaky_slope: float = 0.2,
        seed: int = 0,
    ) -> "VerbalizerModel":
        """Identity weights plus uniform noise in [-0.01, 0.01], seeded."""
        rng = np.random.default_rng(seed)
        layers = []
        for _ in range(n_layers):
            w_src = np.eye(dim) + rng.uniform(-0.01, 0.01, size=(dim, dim))
            w_dst = np.eye(dim) + rng.uniform(-0.01, 0.01, size=(dim, dim))
            layers.append(VerbalizerLayer(w_src, w_dst))
        return cls(layers, epsilon, leaky_slope)


@dataclass
class AttentionMatrix:
    """Attention weights for one layer as flat (dst, src, alpha) triples."""

    dst: np.ndarray
    src: np.ndarray
    alpha: np.ndarray
    n_nodes: int

    def row(self, i: int) -> dict[int, float]:
        """Weights over the neighborhood of destination node ``i``."""
        sel = self.dst == i
        return {int(s): float(a) for s, a in zip(self.src[sel], self.alpha[sel])}

    def row_sums(self) -> np.ndarray:
        sums = np.zeros(self.n_nodes)
        np.add.at(sums, self.dst, self.alpha)
        return sums


@dataclass
class SmoothedEmbeddings:
    """Smoothed embeddings of the original answers, one row per answer.

    Rows follow the vocabulary's deterministic order (answers sorted by
    text), which matches the graph's hop-0 node order.
    """

    matrix: np.ndarray
    answers: list[Phrase]


@dataclass
class VerbalizerForward:
    """Cached forward pass, needed to compute gradients.

    ``hidden[l]`` is the node matrix entering layer ``l``; ``alphas[l]``
    and ``scores[l]`` are that layer's attention weights and pre-activation
    pair scores.
    """

    hidden: list[np.ndarray]
    alphas: list[np.ndarray]
    scores: list[np.ndarray]
    smoothed: np.ndarray
    epsilon_one: bool


def segment_softmax(scores: np.ndarray, starts: np.ndarray) -> np.ndarray:
    """Softmax over contiguous segments of ``scores``.

    The per-segment maximum is subtracted before exponentiation, so adding
    one scalar to every score of a segment cannot overflow and leaves the
    result unchanged.
    """
    counts = np.diff(starts)
    seg_max = np.maximum.reduceat(scores, starts[:-1])
    shifted = scores - np.repeat(seg_max, counts)
    exps = np.exp(shifted)
    sums = np.add.reduceat(exps, starts[:-1])
    return exps / np.repeat(sums, counts)


def _pair_scores(
    layer: VerbalizerLayer, h_prev: np.ndarray, idx: PairIndex
) -> np.ndarray:
    q = h_prev @ layer.w_dst.T
    k = h_prev @ layer.w_src.T
    return np.einsum("ed,ed->e", q[idx.dst], k[idx.src])


def _layer_attention(
    layer: VerbalizerLayer, h_prev: np.ndarray, idx: PairIndex, slope: float
) -> tuple[np.ndarray, np.ndarray]:
    """Attention weights and pre-activation scores for one layer."""
    z = _pair_scores(layer, h_prev, idx)
    activated = np.where(z >= 0.0, z, slope * z)
    alpha = segment_softmax(activated, idx.dst_starts)
    return alpha, z


def _aggregate(alpha: np.ndarray, h_prev: np.ndarray, idx: PairIndex) -> np.ndarray:
    weighted = alpha[:, None] * h_prev[idx.src]
    return np.add.reduceat(weighted, idx.dst_starts[:-1], axis=0)


def attention_scores(
    model: VerbalizerModel, layer: int, h_prev: np.ndarray, graph: AnswerGraph
) -> AttentionMatrix:
    """Attention weights of one layer given its input node matrix.

    Args:
        model: verbalizer holding the layer weights.
        layer: layer index, 0-based.
        h_prev: node matrix entering the layer, shape (n_nodes, D).
        graph: graph supplying the neighborhood structure.
    """
    if not 0 <= layer < model.n_layers:
        raise IndexError(f"layer {layer} out of range")
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if h_prev.shape != (len(graph.nodes), model.dim):
        raise ValueError("h_prev must have shape (n_nodes, dim)")
    idx = pair_index(graph)
    alpha, z = _layer_attention(model.layers[layer], h_prev, idx, model.leaky_slope)
    if not np.isfinite(alpha).all():
        raise DivergenceError("non-finite attention weights")
    return AttentionMatrix(idx.dst.copy(), idx.src.copy(), alpha, len(graph.nodes))


def propagate_layer(
    model: VerbalizerModel, layer: int, h_prev: np.ndarray, graph: AnswerGraph
) -> np.ndarray:
    """Apply one layer: attention-weighted average over each neighborhood."""
    att = attention_scores(model, layer, h_prev, graph)
    idx = pair_index(graph)
    h = _aggregate(att.alpha, np.asarray(h_prev, dtype=np.float64), idx)
    if not np.isfinite(h).all():
        raise DivergenceError("non-finite node features after propagation")
    return h


def forward(model: VerbalizerModel, graph: AnswerGraph) -> VerbalizerForward:
    """Run all layers and mix with the input features of the answers.

    With ``epsilon == 1`` the smoothed matrix is exactly the input features
    (bit for bit); propagation is skipped because no weight can influence
    the output.
    """
    features = graph.feature_matrix()
    orig = np.array(graph.original_rows(), dtype=np.intp)
    if orig.size == 0:
        raise DataError("graph has no original answers")
    if model.dim != features.shape[1]:
        raise ValueError("model dimension does not match graph features")
    if model.epsilon == 1.0:
        return VerbalizerForward([features], [], [], features[orig], True)
    idx = pair_index(graph)
    h = features
    hidden = [features]
    alphas: list[np.ndarray] = []
    scores: list[np.ndarray] = []
    for layer in model.layers:
        alpha, z = _layer_attention(layer, h, idx, model.leaky_slope)
        h = _aggregate(alpha, h, idx)
        if not np.isfinite(h).all():
            raise DivergenceError("non-finite node features during smoothing")
        hidden.append(h)
        alphas.append(alpha)
        scores.append(z)
    smoothed = model.epsilon * features[orig] + (1.0 - model.epsilon) * h[orig]
    return VerbalizerForward(hidden, alphas, scores, smoothed, False)


def smooth_embeddings(model: VerbalizerModel, graph: AnswerGraph) -> SmoothedEmbeddings:
    """Smoothed embedding matrix for the graph's original answers."""
    fwd = forward(model, graph)
    return SmoothedEmbeddings(fwd.smoothed, graph.original_answers())


def _layer_backward(
    layer: VerbalizerLayer,
    h_prev: np.ndarray,
    alpha: np.ndarray,
    z: np.ndarray,
    idx: PairIndex,
    gh: np.ndarray,
    slope: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backprop one layer; returns (dW_src, dW_dst, dL/dh_prev)."""
    counts = np.diff(idx.dst_starts)
    q = h_prev @ layer.w_dst.T
    k = h_prev @ layer.w_src.T

    # aggregation: h_i = sum_j alpha_ij h_j
    dalpha = np.einsum("ed,ed->e", gh[idx.dst], h_prev[idx.src])
    contrib = alpha[:, None] * gh[idx.dst]
    gh_prev = np.add.reduceat(contrib[idx.src_perm], idx.src_starts[:-1], axis=0)

    # softmax over each destination row
    inner = alpha * dalpha
    row_dot = np.add.reduceat(inner, idx.dst_starts[:-1])
    de = alpha * (dalpha - np.repeat(row_dot, counts))

    # LeakyReLU on the raw bilinear score
    dz = de * np.where(z >= 0.0, 1.0, slope)

    # z_ij = q_i . k_j
    dq_pairs = dz[:, None] * k[idx.src]
    dq = np.add.reduceat(dq_pairs, idx.dst_starts[:-1], axis=0)
    dk_pairs = dz[:, None] * q[idx.dst]
    dk = np.add.reduceat(dk_pairs[idx.src_perm], idx.src_starts[:-1], axis=0)

    dw_dst = dq.T @ h_prev
    dw_src = dk.T @ h_prev
    gh_prev = gh_prev + dq @ layer.w_dst + dk @ layer.w_src
    return dw_src, dw_dst, gh_prev


def verbalizer_gradients(
    model: VerbalizerModel,
    graph: AnswerGraph,
    upstream: np.ndarray,
    cache: VerbalizerForward | None = None,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Exact gradients of every layer's (W_src, W_dst).

    Args:
        model: the verbalizer that produced ``cache``.
        graph: the graph the forward pass ran on.
        upstream: dLoss/dSmoothed, shape (n_original, D).
        cache: the forward pass to differentiate; required.

    The answer input features are constants, so no gradient is produced
    (or used) for them beyond the internal chain through the layers.
    """
    if cache is None:
        raise ValueError("forward cache required; run forward() first")
    upstream = np.asarray(upstream, dtype=np.float64)
    orig = np.array(graph.original_rows(), dtype=np.intp)
    if upstream.shape != (orig.size, model.dim):
        raise ValueError("upstream must have shape (n_original, dim)")
    if cache.epsilon_one:
        return [
            (np.zeros_like(layer.w_src), np.zeros_like(layer.w_dst))
            for layer in model.layers
        ]
    idx = pair_index(graph)
    n = len(graph.nodes)
    gh = np.zeros((n, model.dim))
    gh[orig] = (1.0 - model.epsilon) * upstream
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * model.n_layers  # type: ignore
    for l in range(model.n_layers - 1, -1, -1):
        dw_src, dw_dst, gh = _layer_backward(
            model.layers[l],
            cache.hidden[l],
            cache.alphas[l],
            cache.scores[l],
            idx,
            gh,
            model.leaky_slope,
        )
        grads[l] = (dw_src, dw_dst)
    return grads


def export_attention_csv(
    model: VerbalizerModel, graph: AnswerGraph, path: str, comment: str | None = None
) -> None:
    """Write per-layer attention weights as ``layer,dst_label,src_label,alpha``.

    Layers are numbered from 1; rows follow the deterministic pair order.
    An optional ``#`` comment line carries provenance.
    """
    idx = pair_index(graph)
    labels = [node.label.text for node in graph.nodes]
    h = graph.feature_matrix()
    with open(path, "w", encoding="utf-8", newline="") as handle:
        if comment:
            handle.write(f"# {comment}\n")
        writer = csv.writer(handle)
        writer.writerow(["layer", "dst_label", "src_label", "alpha"])
        for l, layer in enumerate(model.layers, start=1):
            alpha, _ = _layer_attention(layer, h, idx, model.leaky_slope)
            for d, s, a in zip(idx.dst, idx.src, alpha):
                writer.writerow([l, labels[d], labels[s], repr(float(a))])
            h = _aggregate(alpha, h, idx)
