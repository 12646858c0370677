"""Open-vocabulary prediction head and training loop.

A sample's feature vector is projected into the answer-embedding space,
``m = P x``, and scored against the smoothed answer embeddings,
``logits = H_hat m / temperature``.  Training minimizes cross-entropy over
the training vocabulary with plain gradient descent, updating both P and
the verbalizer's attention weights with exact analytic gradients.

A fixed-vocabulary head over the top-k most frequent training answers is
included as the closed baseline; by construction it can never produce an
answer outside its vocabulary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import checkpoint
from .embeddings import Phrase
from .errors import DataError, DivergenceError
from .graph import AnswerGraph
from .seeding import derive_seed
from .verbalizer import (
    VerbalizerForward,
    VerbalizerLayer,
    VerbalizerModel,
    forward,
    verbalizer_gradients,
)
from .vocabulary import AnswerVocabulary, QaSample

__all__ = [
    "BackboneProjection",
    "TrainConfig",
    "ClosedHead",
    "Prediction",
    "answer_logits",
    "training_loss",
    "batch_loss",
    "batch_gradients",
    "gradient_step",
    "train_open_head",
    "predict_answer",
    "predict_all",
    "top_k_train_answers",
    "closed_vocab_predict",
    "train_closed_head",
    "save_open_checkpoint",
    "load_open_checkpoint",
    "save_closed_checkpoint",
    "load_closed_checkpoint",
    "write_predictions",
    "load_predictions",
]


@dataclass
class BackboneProjection:
    """Linear map from feature space to answer-embedding space, (D, F)."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ValueError("projection must be a matrix")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.matrix.shape[1]

    @classmethod
    def initialize(cls, dim: int, feature_dim: int, seed: int = 0) -> "BackboneProjection":
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, 0.01, size=(dim, feature_dim)))


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters of one training run."""

    learning_rate: float
    epochs: int
    batch_size: int
    seed: int
    epsilon: float
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")


def compute_mask_feature(proj: BackboneProjection, sample: QaSample) -> np.ndarray:
    """Project a sample's feature into the answer-embedding space."""
    if sample.feature.shape != (proj.feature_dim,):
        raise ValueError(
            f"sample {sample.sample_id}: feature dim {sample.feature.shape[0]} "
            f"!= projection dim {proj.feature_dim}"
        )
    return proj.matrix @ sample.feature


def answer_logits(m: np.ndarray, smoothed: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Similarity of ``m`` to every smoothed answer embedding."""
    m = np.asarray(m, dtype=np.float64)
    if not np.isfinite(m).all():
        raise DivergenceError("non-finite projected feature")
    return (smoothed @ m) / temperature


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    # Max subtraction keeps the exponentials bounded for any offset.
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def training_loss(logits: np.ndarray, gt_index: int) -> float:
    """Cross-entropy of one sample, computed with a max-subtracted LSE."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= gt_index < logits.shape[0]:
        raise IndexError(f"gt_index {gt_index} out of range")
    return float(-_log_softmax(logits)[gt_index])


def _smoothed_for_step(
    model: VerbalizerModel, graph: AnswerGraph, use_verbalizer: bool
) -> tuple[np.ndarray, VerbalizerForward | None]:
    if use_verbalizer:
        cache = forward(model, graph)
        return cache.smoothed, cache
    features = graph.feature_matrix()
    rows = np.array(graph.original_rows(), dtype=np.intp)
    return features[rows], None


def batch_loss(
    proj: BackboneProjection,
    model: VerbalizerModel,
    graph: AnswerGraph,
    features: np.ndarray,
    gt: np.ndarray,
    temperature: float = 1.0,
    use_verbalizer: bool = True,
) -> float:
    """Mean cross-entropy of a batch, forward pass only."""
    smoothed, _ = _smoothed_for_step(model, graph, use_verbalizer)
    m = features @ proj.matrix.T
    logits = (m @ smoothed.T) / temperature
    if not np.isfinite(logits).all():
        raise DivergenceError("non-finite logits")
    logp = _log_softmax(logits)
    return float(-logp[np.arange(gt.shape[0]), gt].mean())


def batch_gradients(
    proj: BackboneProjection,
    model: VerbalizerModel,
    graph: AnswerGraph,
    features: np.ndarray,
    gt: np.ndarray,
    temperature: float = 1.0,
    use_verbalizer: bool = True,
) -> tuple[float, np.ndarray, list[tuple[np.ndarray, np.ndarray]] | None]:
    """Mean batch loss plus exact gradients for P and every W_src/W_dst."""
    smoothed, cache = _smoothed_for_step(model, graph, use_verbalizer)
    n = features.shape[0]
    m = features @ proj.matrix.T
    logits = (m @ smoothed.T) / temperature
    if not np.isfinite(logits).all():
        raise DivergenceError("non-finite logits")
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(n), gt].mean())
    grad_logits = np.exp(logp)
    grad_logits[np.arange(n), gt] -= 1.0
    grad_logits /= n
    dm = (grad_logits @ smoothed) / temperature
    dp = dm.T @ features
    if not use_verbalizer:
        return loss, dp, None
    d_smoothed = (grad_logits.T @ m) / temperature
    w_grads = verbalizer_gradients(model, graph, d_smoothed, cache)
    return loss, dp, w_grads


def _step(
    proj: BackboneProjection,
    model: VerbalizerModel,
    graph: AnswerGraph,
    features: np.ndarray,
    gt: np.ndarray,
    config: TrainConfig,
    use_verbalizer: bool,
) -> float:
    loss, dp, w_grads = batch_gradients(
        proj, model, graph, features, gt, config.temperature, use_verbalizer
    )
    lr = config.learning_rate
    proj.matrix -= lr * dp
    if w_grads is not None:
        for layer, (dw_src, dw_dst) in zip(model.layers, w_grads):
            layer.w_src -= lr * dw_src
            layer.w_dst -= lr * dw_dst
    return loss


def _answer_rows(graph: AnswerGraph) -> dict[str, int]:
    return {p.text: r for r, p in enumerate(graph.original_answers())}


def gradient_step(
    proj: BackboneProjection,
    model: VerbalizerModel,
    graph: AnswerGraph,
    batch: Sequence[QaSample],
    vocab: AnswerVocabulary,
    config: TrainConfig,
    use_verbalizer: bool = True,
) -> float:
    """One gradient-descent update on a batch; returns the mean batch loss.

    ``proj`` and ``model`` are updated in place.  Every batch answer must
    belong to the training vocabulary (and hence to the graph).
    """
    if not batch:
        raise ValueError("batch is empty")
    rows = _answer_rows(graph)
    gt = []
    for s in batch:
        if s.answer not in vocab.train_answers:
            raise DataError(f"sample {s.sample_id}: answer {s.answer.text!r} not in training vocabulary")
        if s.answer.text not in rows:
            raise DataError(f"sample {s.sample_id}: answer {s.answer.text!r} not in graph")
        gt.append(rows[s.answer.text])
    features = np.stack([s.feature for s in batch])
    return _step(proj, model, graph, features, np.array(gt), config, use_verbalizer)


def train_open_head(
    samples: Sequence[QaSample],
    graph: AnswerGraph,
    model: VerbalizerModel,
    proj: BackboneProjection,
    config: TrainConfig,
    use_verbalizer: bool = True,
) -> list[float]:
    """Train P (and the verbalizer weights) over shuffled mini-batches.

    Returns the mean loss per epoch.  The batch order is drawn from a
    stream seeded by ``config.seed``, so identical inputs give identical
    parameter trajectories.
    """
    if not samples:
        raise DataError("no training samples")
    rows = _answer_rows(graph)
    try:
        gt = np.array([rows[s.answer.text] for s in samples])
    except KeyError as exc:
        raise DataError(f"training answer {exc.args[0]!r} not in graph") from None
    features = np.stack([s.feature for s in samples])
    rng = np.random.default_rng(derive_seed(config.seed, "batch-order"))
    losses: list[float] = []
    n = len(samples)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        batches = 0
        for start in range(0, n, config.batch_size):
            sel = order[start : start + config.batch_size]
            total += _step(proj, model, graph, features[sel], gt[sel], config, use_verbalizer)
            batches += 1
        losses.append(total / batches)
    return losses


@dataclass
class Prediction:
    """Predicted answer for one sample plus its top-scoring candidates."""

    sample_id: str
    predicted: Phrase
    gold: Phrase
    top: list[tuple[str, float]]


def _top_candidates(logits: np.ndarray, texts: np.ndarray, top_n: int) -> list[tuple[str, float]]:
    order = np.lexsort((texts, -logits))[:top_n]
    return [(str(texts[i]), float(logits[i])) for i in order]


def predict_all(
    proj: BackboneProjection,
    model: VerbalizerModel,
    test_graph: AnswerGraph,
    samples: Sequence[QaSample],
    temperature: float = 1.0,
    top_n: int = 5,
    use_verbalizer: bool = True,
) -> list[Prediction]:
    """Predict every sample over the test graph's answers.

    The winner is the argmax logit; exact ties go to the lexicographically
    smaller answer.
    """
    smoothed, _ = _smoothed_for_step(model, test_graph, use_verbalizer)
    answers = test_graph.original_answers()
    texts = np.array([p.text for p in answers])
    features = np.stack([s.feature for s in samples])
    m = features @ proj.matrix.T
    logits = (m @ smoothed.T) / temperature
    if not np.isfinite(logits).all():
        raise DivergenceError("non-finite logits at prediction")
    preds = []
    for b, sample in enumerate(samples):
        # rows are sorted by answer text, so the first argmax is the
        # lexicographically smallest among ties
        winner = int(np.argmax(logits[b]))
        preds.append(
            Prediction(
                sample.sample_id,
                answers[winner],
                sample.answer,
                _top_candidates(logits[b], texts, top_n),
            )
        )
    return preds


def predict_answer(
    proj: BackboneProjection,
    model: VerbalizerModel,
    test_graph: AnswerGraph,
    sample: QaSample,
    vocab: AnswerVocabulary | None = None,
    temperature: float = 1.0,
    use_verbalizer: bool = True,
) -> Phrase:
    """Predicted answer for one sample."""
    if vocab is not None and not vocab.test_answers:
        raise DataError("test vocabulary is empty")
    return predict_all(
        proj, model, test_graph, [sample], temperature, top_n=1, use_verbalizer=use_verbalizer
    )[0].predicted


@dataclass
class ClosedHead:
    """Fixed-vocabulary linear head over the top-k training answers."""

    vocab: list[Phrase]
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.shape[0] != len(self.vocab) or self.bias.shape != (len(self.vocab),):
            raise ValueError("head shapes must match the vocabulary size")

    @classmethod
    def initialize(cls, vocab: list[Phrase], dim: int, seed: int = 0) -> "ClosedHead":
        rng = np.random.default_rng(seed)
        return cls(list(vocab), rng.normal(0.0, 0.01, size=(len(vocab), dim)), np.zeros(len(vocab)))


def top_k_train_answers(vocab: AnswerVocabulary, k: int) -> list[Phrase]:
    """The k most frequent training answers; ties to the smaller text."""
    if k <= 0:
        raise ValueError("k must be positive")
    ranked = sorted(vocab.train_answers, key=lambda p: (-vocab.train_frequency[p], p.text))
    return ranked[:k]


def closed_vocab_predict(head: ClosedHead, m: np.ndarray) -> Phrase:
    """Argmax over the fixed vocabulary; never an out-of-vocabulary answer."""
    scores = head.weight @ np.asarray(m, dtype=np.float64) + head.bias
    texts = np.array([p.text for p in head.vocab])
    order = np.lexsort((texts, -scores))
    return head.vocab[int(order[0])]


def train_closed_head(
    samples: Sequence[QaSample],
    head: ClosedHead,
    proj: BackboneProjection,
    config: TrainConfig,
) -> list[float]:
    """Train the closed head and its projection with cross-entropy.

    Samples whose gold answer is outside the fixed vocabulary cannot be
    represented and are skipped.
    """
    index = {p.text: i for i, p in enumerate(head.vocab)}
    kept = [s for s in samples if s.answer.text in index]
    if not kept:
        raise DataError("no training sample has an in-vocabulary answer")
    gt = np.array([index[s.answer.text] for s in kept])
    features = np.stack([s.feature for s in kept])
    rng = np.random.default_rng(derive_seed(config.seed, "closed-batch-order"))
    n = len(kept)
    losses = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        batches = 0
        for start in range(0, n, config.batch_size):
            sel = order[start : start + config.batch_size]
            x = features[sel]
            m = x @ proj.matrix.T
            logits = (m @ head.weight.T + head.bias) / config.temperature
            if not np.isfinite(logits).all():
                raise DivergenceError("non-finite closed-head logits")
            logp = _log_softmax(logits)
            total += float(-logp[np.arange(sel.size), gt[sel]].mean())
            grad = np.exp(logp)
            grad[np.arange(sel.size), gt[sel]] -= 1.0
            grad /= sel.size
            grad /= config.temperature
            dw = grad.T @ m
            db = grad.sum(axis=0)
            dm = grad @ head.weight
            dp = dm.T @ x
            head.weight -= config.learning_rate * dw
            head.bias -= config.learning_rate * db
            proj.matrix -= config.learning_rate * dp
            batches += 1
        losses.append(total / batches)
    return losses


def save_open_checkpoint(
    path: str,
    proj: BackboneProjection,
    model: VerbalizerModel,
    meta: dict | None = None,
) -> None:
    """Persist the projection and verbalizer in the container format."""
    tensors = {"p": proj.matrix}
    for l, layer in enumerate(model.layers):
        tensors[f"w_src_{l}"] = layer.w_src
        tensors[f"w_dst_{l}"] = layer.w_dst
    full_meta = {
        "kind": "open",
        "layers": model.n_layers,
        "dim": model.dim,
        "feature_dim": proj.feature_dim,
        "epsilon": model.epsilon,
        "leaky_slope": model.leaky_slope,
    }
    full_meta.update(meta or {})
    checkpoint.save_checkpoint(path, full_meta, tensors)


def load_open_checkpoint(path: str) -> tuple[BackboneProjection, VerbalizerModel, dict]:
    meta, tensors = checkpoint.load_checkpoint(path)
    try:
        n_layers = int(meta["layers"])
        epsilon = float(meta["epsilon"])
        leaky_slope = float(meta["leaky_slope"])
        proj = BackboneProjection(tensors["p"])
        layers = [
            VerbalizerLayer(tensors[f"w_src_{l}"], tensors[f"w_dst_{l}"])
            for l in range(n_layers)
        ]
    except KeyError as exc:
        raise DataError(f"{path}: missing checkpoint entry {exc.args[0]!r}") from None
    return proj, VerbalizerModel(layers, epsilon, leaky_slope), meta


def save_closed_checkpoint(
    path: str, proj: BackboneProjection, head: ClosedHead, meta: dict | None = None
) -> None:
    full_meta = {
        "kind": "closed",
        "vocab": [p.text for p in head.vocab],
        "dim": head.weight.shape[1],
        "feature_dim": proj.feature_dim,
    }
    full_meta.update(meta or {})
    checkpoint.save_checkpoint(path, full_meta, {"p": proj.matrix, "w": head.weight, "b": head.bias})


def load_closed_checkpoint(path: str) -> tuple[BackboneProjection, ClosedHead, dict]:
    meta, tensors = checkpoint.load_checkpoint(path)
    try:
        vocab = [Phrase(t) for t in meta["vocab"]]
        head = ClosedHead(vocab, tensors["w"], tensors["b"])
        proj = BackboneProjection(tensors["p"])
    except KeyError as exc:
        raise DataError(f"{path}: missing checkpoint entry {exc.args[0]!r}") from None
    return proj, head, meta


def write_predictions(
    preds: Sequence[Prediction],
    vocab: AnswerVocabulary,
    path: str,
    meta: dict | None = None,
) -> None:
    """Write predictions as JSON Lines.

    Each line carries ``sample_id``, ``predicted``, ``gold``,
    ``gold_category`` and ``logit_top5``.  When ``meta`` is given it is
    written first as a single ``{"_meta": ...}`` line.
    """
    with open(path, "w", encoding="utf-8") as handle:
        if meta is not None:
            handle.write(json.dumps({"_meta": meta}, sort_keys=True) + "\n")
        for p in preds:
            category = vocab.category.get(p.gold)
            if category is None:
                raise DataError(f"gold answer {p.gold.text!r} has no category")
            obj = {
                "sample_id": p.sample_id,
                "predicted": p.predicted.text,
                "gold": p.gold.text,
                "gold_category": category,
                "logit_top5": [[t, s] for t, s in p.top],
            }
            handle.write(json.dumps(obj) + "\n")


def load_predictions(path: str) -> tuple[dict, list[Prediction]]:
    """Read back a predictions file; returns (meta, predictions)."""
    meta: dict = {}
    preds: list[Prediction] = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                raise DataError(f"{path}:{lineno}: invalid JSON") from None
            if "_meta" in obj:
                meta = obj["_meta"]
                continue
            try:
                preds.append(
                    Prediction(
                        str(obj["sample_id"]),
                        Phrase(obj["predicted"]),
                        Phrase(obj["gold"]),
                        [(str(t), float(s)) for t, s in obj["logit_top5"]],
                    )
                )
            except (KeyError, TypeError, ValueError):
                raise DataError(f"{path}:{lineno}: malformed prediction") from None
    return meta, preds
