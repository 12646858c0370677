import csv
import json

import numpy as np
import pytest

from openvocab.embeddings import Phrase
from openvocab.errors import DataError
from openvocab.metrics import (
    CSV_COLUMNS,
    evaluate_report,
    per_answer_accuracy,
    report_to_dict,
    save_report_csv,
    save_report_json,
)
from openvocab.vocabulary import AnswerVocabulary, categorize_frequency


def vocab_of(freqs):
    """Vocabulary stub from answer-text -> training frequency."""
    answers = {Phrase(t) for t in freqs}
    frequency = {a: freqs[a.text] for a in answers}
    return AnswerVocabulary(
        {a for a, n in frequency.items() if n > 0},
        answers,
        frequency,
        {a: categorize_frequency(n) for a, n in frequency.items()},
    )


def pairs(*gold_pred):
    return [(Phrase(g), Phrase(p)) for g, p in gold_pred]


class TestPerAnswerAccuracy:
    def test_counts_by_gold_answer(self):
        stats = per_answer_accuracy(
            pairs(("a", "a"), ("a", "b"), ("b", "b"), ("a", "a"))
        )
        assert stats == {Phrase("a"): (3, 2), Phrase("b"): (1, 1)}

    def test_empty_input(self):
        assert per_answer_accuracy([]) == {}


class TestEvaluateReport:
    def test_total_is_exactly_two_thirds(self):
        vocab = vocab_of({"a": 5, "b": 5})
        report = evaluate_report(pairs(("a", "a"), ("a", "a"), ("b", "a")), vocab)
        assert report.acc_total == 200.0 / 3.0
        assert report.acc_rare == 200.0 / 3.0
        assert report.acc_base is None and report.acc_unseen is None

    def test_macc_is_exactly_seventy_five(self):
        # answer a: 1/2 correct, answer b: 1/1 -> mean of 50 and 100
        vocab = vocab_of({"a": 3, "b": 3})
        report = evaluate_report(pairs(("a", "a"), ("a", "b"), ("b", "b")), vocab)
        assert report.macc == 75.0

    def test_bng_is_exactly_eighty(self):
        # base 2/2 = 100, everything else 1/5 = 20, gap 80
        vocab = vocab_of({"big": 500, "r1": 2, "r2": 7, "u1": 0})
        report = evaluate_report(
            pairs(
                ("big", "big"),
                ("big", "big"),
                ("r1", "r1"),
                ("r1", "u1"),
                ("r2", "big"),
                ("u1", "r2"),
                ("u1", "big"),
            ),
            vocab,
        )
        assert report.acc_base == 100.0
        assert report.bng == 80.0

    def test_bng_needs_both_sides(self):
        only_base = vocab_of({"big": 500})
        report = evaluate_report(pairs(("big", "big")), only_base)
        assert report.bng is None
        only_rare = vocab_of({"r": 3})
        report = evaluate_report(pairs(("r", "r")), only_rare)
        assert report.bng is None and report.acc_base is None

    def test_category_split_uses_training_frequency(self):
        vocab = vocab_of({"b": 101, "c": 100, "r": 10, "u": 0})
        report = evaluate_report(
            pairs(("b", "b"), ("c", "x"), ("r", "r"), ("u", "u")), vocab
        )
        assert report.acc_base == 100.0
        assert report.acc_common == 0.0
        assert report.acc_rare == 100.0
        assert report.acc_unseen == 100.0
        assert report.category_sample_counts == {
            "base": 1, "common": 1, "rare": 1, "unseen": 1,
        }

    def test_total_is_sample_weighted_mean_of_categories(self):
        rng = np.random.default_rng(0)
        texts = [f"a{i}" for i in range(12)]
        freqs = {t: int(f) for t, f in zip(texts, rng.choice([0, 5, 50, 500], 12))}
        vocab = vocab_of(freqs)
        golds = [texts[int(i)] for i in rng.integers(0, 12, 80)]
        preds = pairs(*[
            (g, g if rng.random() < 0.6 else "a0") for g in golds
        ])
        report = evaluate_report(preds, vocab)
        weighted = 0.0
        n = 0
        for cat, count in report.category_sample_counts.items():
            if count:
                weighted += report.accuracy(cat) * count
                n += count
        assert report.acc_total == pytest.approx(weighted / n, rel=1e-12)

    def test_duplicating_every_sample_changes_nothing(self):
        vocab = vocab_of({"big": 500, "r": 2, "u": 0})
        base_pairs = pairs(("big", "big"), ("r", "big"), ("u", "u"), ("r", "r"))
        once = evaluate_report(base_pairs, vocab)
        twice = evaluate_report(base_pairs * 2, vocab)
        for field in ("acc_base", "acc_common", "acc_rare", "acc_unseen",
                      "acc_total", "macc", "bng"):
            assert getattr(once, field) == getattr(twice, field)

    def test_macc_equals_total_when_answers_are_singletons(self):
        vocab = vocab_of({"a": 1, "b": 1, "c": 1, "d": 1})
        report = evaluate_report(
            pairs(("a", "a"), ("b", "x"), ("c", "c"), ("d", "d")), vocab
        )
        assert report.macc == report.acc_total == 75.0

    def test_unknown_gold_rejected(self):
        with pytest.raises(DataError, match="category"):
            evaluate_report(pairs(("ghost", "ghost")), vocab_of({"a": 1}))


class TestSerialization:
    def test_rounding_happens_only_at_the_boundary(self):
        vocab = vocab_of({"a": 5, "b": 5})
        report = evaluate_report(pairs(("a", "a"), ("a", "a"), ("b", "a")), vocab)
        assert report.acc_total == 200.0 / 3.0  # full precision inside
        obj = report_to_dict(report)
        assert obj["accuracy"]["total"] == 66.7
        assert obj["accuracy"]["base"] is None

    def test_json_round_trip_and_config_echo(self, tmp_path):
        vocab = vocab_of({"a": 5})
        report = evaluate_report(pairs(("a", "a")), vocab)
        path = tmp_path / "report.json"
        save_report_json(report, str(path), config_meta={"fingerprint": "xyz"})
        obj = json.loads(path.read_text())
        assert obj["config"]["fingerprint"] == "xyz"
        assert obj["accuracy"]["rare"] == 100.0
        assert obj["per_answer"] == {"a": [1, 1]}

    def test_csv_layout(self, tmp_path):
        vocab = vocab_of({"big": 500, "r1": 2, "r2": 7, "u1": 0})
        report = evaluate_report(
            pairs(
                ("big", "big"), ("big", "big"),
                ("r1", "r1"), ("r1", "u1"), ("r2", "big"),
                ("u1", "r2"), ("u1", "big"),
            ),
            vocab,
        )
        path = tmp_path / "report.csv"
        save_report_csv(report, str(path), comment="fingerprint xyz")
        lines = path.read_text().splitlines()
        assert lines[0] == "# fingerprint xyz"
        rows = list(csv.reader(lines[1:]))
        assert rows[0] == list(CSV_COLUMNS)
        row = dict(zip(rows[0], rows[1]))
        assert row["base"] == "100.0"
        assert row["common"] == ""  # no common samples
        assert row["bng"] == "80.0"
        assert row["rare"] == "33.3"  # one of three rare samples correct
        assert row["unseen"] == "0.0"

    def test_csv_without_comment_starts_with_header(self, tmp_path):
        vocab = vocab_of({"a": 5})
        report = evaluate_report(pairs(("a", "a")), vocab)
        path = tmp_path / "report.csv"
        save_report_csv(report, str(path))
        assert path.read_text().splitlines()[0] == ",".join(CSV_COLUMNS)
