"""Accuracy reporting per answer category.

Accuracies are percentages in [0, 100], carried at full float precision
and rounded to one decimal only when a report is serialized.  ``macc`` is
the unweighted mean of per-unique-answer accuracies.  ``bng`` is the gap
between the base-category accuracy and the sample-weighted accuracy over
everything else (common, rare and unseen together).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Iterable

from .embeddings import Phrase
from .errors import DataError
from .vocabulary import CATEGORIES, AnswerVocabulary

__all__ = [
    "EvalReport",
    "per_answer_accuracy",
    "evaluate_report",
    "report_to_dict",
    "save_report_json",
    "save_report_csv",
    "CSV_COLUMNS",
]

CSV_COLUMNS = ("base", "common", "rare", "unseen", "total", "macc", "bng")


@dataclass
class EvalReport:
    """Evaluation summary; accuracies are None when a category is empty."""

    acc_base: float | None
    acc_common: float | None
    acc_rare: float | None
    acc_unseen: float | None
    acc_total: float | None
    macc: float | None
    bng: float | None
    per_answer: dict[Phrase, tuple[int, int]]
    category_sample_counts: dict[str, int]

    def accuracy(self, category: str) -> float | None:
        return {
            "base": self.acc_base,
            "common": self.acc_common,
            "rare": self.acc_rare,
            "unseen": self.acc_unseen,
        }[category]


def per_answer_accuracy(
    preds: Iterable[tuple[Phrase, Phrase]]
) -> dict[Phrase, tuple[int, int]]:
    """Group (gold, predicted) pairs by gold answer.

    Returns gold answer -> (n_samples, n_correct).
    """
    stats: dict[Phrase, list[int]] = {}
    for gold, predicted in preds:
        entry = stats.setdefault(gold, [0, 0])
        entry[0] += 1
        if predicted == gold:
            entry[1] += 1
    return {a: (n, c) for a, (n, c) in stats.items()}


def evaluate_report(
    preds: Iterable[tuple[Phrase, Phrase]], vocab: AnswerVocabulary
) -> EvalReport:
    """Score predictions against gold answers, split by category.

    Raises DataError when a gold answer has no category in ``vocab``.
    """
    preds = list(preds)
    counts = {c: 0 for c in CATEGORIES}
    correct = {c: 0 for c in CATEGORIES}
    for gold, predicted in preds:
        category = vocab.category.get(gold)
        if category is None:
            raise DataError(f"gold answer {gold.text!r} has no category")
        counts[category] += 1
        if predicted == gold:
            correct[category] += 1

    def acc(n_correct: int, n: int) -> float | None:
        return None if n == 0 else 100.0 * n_correct / n

    per_cat = {c: acc(correct[c], counts[c]) for c in CATEGORIES}
    total_n = sum(counts.values())
    total = acc(sum(correct.values()), total_n)

    per_answer = per_answer_accuracy(preds)
    macc = None
    if per_answer:
        rates = [100.0 * c / n for (n, c) in per_answer.values()]
        macc = sum(rates) / len(rates)

    nonbase_n = sum(counts[c] for c in ("common", "rare", "unseen"))
    nonbase_correct = sum(correct[c] for c in ("common", "rare", "unseen"))
    bng = None
    if counts["base"] > 0 and nonbase_n > 0:
        bng = per_cat["base"] - 100.0 * nonbase_correct / nonbase_n

    return EvalReport(
        per_cat["base"],
        per_cat["common"],
        per_cat["rare"],
        per_cat["unseen"],
        total,
        macc,
        bng,
        per_answer,
        counts,
    )


def _rounded(value: float | None) -> float | None:
    return None if value is None else round(value, 1)


def report_to_dict(report: EvalReport, config_meta: dict | None = None) -> dict:
    """Serializable report; percentages rounded to one decimal here only."""
    return {
        "accuracy": {
            "base": _rounded(report.acc_base),
            "common": _rounded(report.acc_common),
            "rare": _rounded(report.acc_rare),
            "unseen": _rounded(report.acc_unseen),
            "total": _rounded(report.acc_total),
        },
        "macc": _rounded(report.macc),
        "bng": _rounded(report.bng),
        "category_sample_counts": dict(report.category_sample_counts),
        "per_answer": {
            a.text: [n, c]
            for a, (n, c) in sorted(report.per_answer.items(), key=lambda kv: kv[0].text)
        },
        "config": config_meta or {},
    }


def save_report_json(report: EvalReport, path: str, config_meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(report_to_dict(report, config_meta), handle, sort_keys=True, separators=(",", ":"))
        handle.write("\n")


def save_report_csv(report: EvalReport, path: str, comment: str | None = None) -> None:
    """One header plus one row in base/common/rare/unseen/total/macc order,
    with the base-vs-rest gap appended; empty cells for absent values."""
    values = [
        report.acc_base,
        report.acc_common,
        report.acc_rare,
        report.acc_unseen,
        report.acc_total,
        report.macc,
        report.bng,
    ]
    with open(path, "w", encoding="utf-8", newline="") as handle:
        if comment:
            handle.write(f"# {comment}\n")
        writer = csv.writer(handle)
        writer.writerow(CSV_COLUMNS)
        writer.writerow(["" if v is None else f"{_rounded(v):.1f}" for v in values])
