"""Seeded synthetic long-tail datasets.

Answers are table words.  Training answers follow a truncated Zipf law, a
seeded fraction of answers is withheld from training entirely, and each
sample's feature is a fixed mixing of the gold answer's embedding plus
isotropic gaussian noise.  With zero noise and an invertible mixing the
gold answer is exactly recoverable from the feature, which gives the
pipeline a 100%-accuracy ceiling to test against.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .embeddings import EmbeddingTable, Phrase
from .errors import ConfigError, DataError
from .seeding import derive_seed
from .vocabulary import QaSample

__all__ = [
    "GenConfig",
    "make_toy_table",
    "split_unseen",
    "zipf_weights",
    "sample_dataset",
    "gen_manifest",
]


@dataclass(frozen=True)
class GenConfig:
    """Parameters of one synthetic dataset."""

    n_answers: int
    zipf_exponent: float
    n_train: int
    n_test: int
    unseen_fraction: float
    feature_dim: int
    noise_sigma: float
    seed: int

    def __post_init__(self) -> None:
        if self.n_answers <= 0:
            raise ConfigError("n_answers must be positive")
        if self.zipf_exponent <= 0.0:
            raise ConfigError("zipf_exponent must be positive")
        if self.n_train <= 0 or self.n_test <= 0:
            raise ConfigError("n_train and n_test must be positive")
        if not 0.0 <= self.unseen_fraction < 1.0:
            raise ConfigError("unseen_fraction must be in [0, 1)")
        if self.feature_dim <= 0:
            raise ConfigError("feature_dim must be positive")
        if self.noise_sigma < 0.0:
            raise ConfigError("noise_sigma must be non-negative")


def make_toy_table(
    n_words: int,
    dim: int,
    n_clusters: int,
    cluster_spread: float,
    seed: int,
) -> EmbeddingTable:
    """Random unit-norm word vectors grouped around cluster directions.

    Words are named ``w0000``, ``w0001``, ... and assigned to clusters
    round-robin, so each cluster holds roughly ``n_words / n_clusters``
    words whose vectors deviate from the cluster direction by gaussian
    noise of scale ``cluster_spread``.
    """
    if n_words <= 0 or dim <= 0 or n_clusters <= 0:
        raise ConfigError("n_words, dim and n_clusters must be positive")
    if cluster_spread < 0.0:
        raise ConfigError("cluster_spread must be non-negative")
    rng = np.random.default_rng(derive_seed(seed, "toy-table"))
    centers = rng.normal(size=(n_clusters, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    vectors = np.empty((n_words, dim))
    for i in range(n_words):
        vec = centers[i % n_clusters] + cluster_spread * rng.normal(size=dim)
        vectors[i] = vec / np.linalg.norm(vec)
    words = [f"w{i:04d}" for i in range(n_words)]
    return EmbeddingTable(words, vectors)


def split_unseen(
    answers: Sequence[Phrase], unseen_fraction: float, seed: int
) -> tuple[list[Phrase], list[Phrase]]:
    """Withhold ceil(fraction * n) answers from training, seeded uniformly.

    Both returned lists preserve the input order.  A fraction of 1 would
    leave nothing to train on and is an error.
    """
    if not answers:
        raise ValueError("answers is empty")
    if not 0.0 <= unseen_fraction < 1.0:
        raise ValueError("unseen_fraction must be in [0, 1)")
    n = len(answers)
    n_unseen = math.ceil(unseen_fraction * n)
    rng = np.random.default_rng(derive_seed(seed, "unseen-split"))
    chosen = set(rng.choice(n, size=n_unseen, replace=False).tolist())
    train_pool = [a for i, a in enumerate(answers) if i not in chosen]
    unseen_pool = [a for i, a in enumerate(answers) if i in chosen]
    return train_pool, unseen_pool


def zipf_weights(n: int, exponent: float) -> np.ndarray:
    """Normalized truncated Zipf weights for ranks 1..n."""
    if n <= 0:
        raise ValueError("n must be positive")
    ranks = np.arange(1, n + 1, dtype=np.float64)
    weights = ranks ** (-exponent)
    return weights / weights.sum()


def _draw(rng: np.random.Generator, cdf: np.ndarray, count: int) -> np.ndarray:
    # Inverse-CDF sampling; the clamp guards the cdf[-1] < 1 rounding case.
    u = rng.random(count)
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, cdf.size - 1)


def sample_dataset(
    config: GenConfig, table: EmbeddingTable
) -> tuple[list[QaSample], list[QaSample]]:
    """Draw a (train, test) split under ``config``.

    Answer ranks follow the order in which the seeded pick drew them from
    the table.  Training samples are drawn from the Zipf law restricted to
    the non-withheld answers; test samples are drawn from the same law
    over all answers, so withheld answers appear in the test split with
    their full Zipf mass.
    """
    if config.n_answers > len(table):
        raise DataError(
            f"table holds {len(table)} words, need {config.n_answers} answers"
        )
    rng_pick = np.random.default_rng(derive_seed(config.seed, "answer-pick"))
    picked = rng_pick.choice(len(table), size=config.n_answers, replace=False)
    words = table.words
    answers = [Phrase(words[i]) for i in picked]
    train_pool, _ = split_unseen(answers, config.unseen_fraction, config.seed)
    train_set = {a.text for a in train_pool}

    weights = zipf_weights(config.n_answers, config.zipf_exponent)
    train_mask = np.array([a.text in train_set for a in answers])
    train_weights = np.where(train_mask, weights, 0.0)
    train_weights = train_weights / train_weights.sum()
    train_cdf = np.cumsum(train_weights)
    full_cdf = np.cumsum(weights)

    embeddings = np.stack([table.vector(a.text) for a in answers])
    rng_mix = np.random.default_rng(derive_seed(config.seed, "mixing"))
    mixing = rng_mix.standard_normal((config.feature_dim, table.dim)) / math.sqrt(table.dim)

    def build(split: str, cdf: np.ndarray, count: int) -> list[QaSample]:
        rng_draw = np.random.default_rng(derive_seed(config.seed, f"{split}-draw"))
        rng_noise = np.random.default_rng(derive_seed(config.seed, f"{split}-noise"))
        idx = _draw(rng_draw, cdf, count)
        noise = config.noise_sigma * rng_noise.standard_normal((count, config.feature_dim))
        feats = embeddings[idx] @ mixing.T + noise
        return [
            QaSample(f"{split}-{i:06d}", feats[i], answers[idx[i]])
            for i in range(count)
        ]

    train_samples = build("train", train_cdf, config.n_train)
    test_samples = build("test", full_cdf, config.n_test)
    return train_samples, test_samples


def gen_manifest(config: GenConfig, extra: dict | None = None) -> dict:
    """Manifest object echoing the generator configuration."""
    manifest = {"generator": asdict(config)}
    manifest.update(extra or {})
    return manifest
