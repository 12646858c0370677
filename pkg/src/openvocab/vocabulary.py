"""Answer vocabularies and training-frequency categories.

Every answer seen in the train or test split is assigned one of four
categories from its training frequency: ``unseen`` (0), ``rare`` (1-10),
``common`` (11-100) and ``base`` (101 or more).  Answer identity is the
lowercase whitespace-normalized phrase text.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .embeddings import Phrase
from .errors import DataError

__all__ = [
    "CATEGORIES",
    "QaSample",
    "AnswerVocabulary",
    "categorize_frequency",
    "build_vocabularies",
    "category_counts",
    "load_samples",
    "write_samples",
    "save_vocabulary",
    "load_vocabulary",
    "vocabulary_to_dict",
]

CATEGORIES = ("base", "common", "rare", "unseen")


def categorize_frequency(freq: int) -> str:
    """Map a training-set frequency to its answer category."""
    if freq < 0:
        raise ValueError("frequency must be non-negative")
    if freq == 0:
        return "unseen"
    if freq <= 10:
        return "rare"
    if freq <= 100:
        return "common"
    return "base"


@dataclass
class QaSample:
    """One classification sample: a feature vector and its gold answer."""

    sample_id: str
    feature: np.ndarray
    answer: Phrase

    def __post_init__(self) -> None:
        self.feature = np.asarray(self.feature, dtype=np.float64)
        if self.feature.ndim != 1:
            raise DataError(f"sample {self.sample_id}: feature must be 1-D")
        if not np.isfinite(self.feature).all():
            raise DataError(f"sample {self.sample_id}: non-finite feature")


@dataclass
class AnswerVocabulary:
    """Train/test answer sets with training frequencies and categories.

    ``train_frequency`` and ``category`` cover the union of both splits;
    answers that never occur in training have frequency 0 and category
    ``unseen``.
    """

    train_answers: set[Phrase]
    test_answers: set[Phrase]
    train_frequency: dict[Phrase, int]
    category: dict[Phrase, str]

    def train_order(self) -> list[Phrase]:
        """Train answers sorted by text; the canonical row order."""
        return sorted(self.train_answers, key=lambda p: p.text)

    def test_order(self) -> list[Phrase]:
        return sorted(self.test_answers, key=lambda p: p.text)


def build_vocabularies(
    train_samples: Sequence[QaSample], test_samples: Sequence[QaSample]
) -> AnswerVocabulary:
    """Collect distinct answers per split and categorize the union."""
    freq = Counter(s.answer for s in train_samples)
    train_answers = set(freq)
    test_answers = {s.answer for s in test_samples}
    frequency = {a: freq.get(a, 0) for a in train_answers | test_answers}
    category = {a: categorize_frequency(n) for a, n in frequency.items()}
    return AnswerVocabulary(train_answers, test_answers, frequency, category)


def category_counts(vocab: AnswerVocabulary) -> dict[str, int]:
    """Number of distinct answers per category; sums to the union size."""
    counts = {c: 0 for c in CATEGORIES}
    for cat in vocab.category.values():
        counts[cat] += 1
    return counts


def load_samples(path: str) -> list[QaSample]:
    """Read samples from JSON Lines: one object per line with fields
    ``sample_id``, ``feature``, ``answer``."""
    samples = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                raise DataError(f"{path}:{lineno}: invalid JSON") from None
            try:
                sample_id = obj["sample_id"]
                feature = obj["feature"]
                answer = obj["answer"]
            except (KeyError, TypeError):
                raise DataError(f"{path}:{lineno}: missing sample field") from None
            samples.append(QaSample(str(sample_id), np.array(feature, dtype=np.float64), Phrase(answer)))
    if not samples:
        raise DataError(f"{path}: no samples")
    return samples


def write_samples(samples: Iterable[QaSample], path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for s in samples:
            obj = {
                "sample_id": s.sample_id,
                "feature": [float(v) for v in s.feature],
                "answer": s.answer.text,
            }
            handle.write(json.dumps(obj) + "\n")


def vocabulary_to_dict(vocab: AnswerVocabulary, meta: dict | None = None) -> dict:
    return {
        "train_frequency": {a.text: int(n) for a, n in sorted(
            vocab.train_frequency.items(), key=lambda kv: kv[0].text)},
        "category": {a.text: c for a, c in sorted(
            vocab.category.items(), key=lambda kv: kv[0].text)},
        "test_answers": sorted(a.text for a in vocab.test_answers),
        "meta": meta or {},
    }


def save_vocabulary(vocab: AnswerVocabulary, path: str, meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(vocabulary_to_dict(vocab, meta), handle, sort_keys=True, separators=(",", ":"))
        handle.write("\n")


def load_vocabulary(path: str) -> AnswerVocabulary:
    with open(path, "r", encoding="utf-8") as handle:
        try:
            obj = json.load(handle)
        except json.JSONDecodeError:
            raise DataError(f"{path}: invalid JSON") from None
    try:
        frequency = {Phrase(t): int(n) for t, n in obj["train_frequency"].items()}
        category = {Phrase(t): str(c) for t, c in obj["category"].items()}
        test_answers = {Phrase(t) for t in obj["test_answers"]}
    except (KeyError, TypeError, ValueError):
        raise DataError(f"{path}: malformed vocabulary dump") from None
    for cat in category.values():
        if cat not in CATEGORIES:
            raise DataError(f"{path}: unknown category {cat!r}")
    train_answers = {a for a, n in frequency.items() if n > 0}
    return AnswerVocabulary(train_answers, test_answers, frequency, category)
