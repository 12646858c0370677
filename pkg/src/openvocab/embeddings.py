"""Word-embedding tables: text-format loading, phrase embedding, cosine k-NN.

The on-disk format is one word per line followed by its vector components,
all space-separated::

    word 0.12 -0.5 ... 0.03

File order is preserved by :class:`EmbeddingTable` so that a load,
re-serialize, load cycle round-trips bit-identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DataError

__all__ = [
    "Phrase",
    "EmbeddingTable",
    "load_embeddings",
    "save_embeddings",
    "embed_phrase",
    "nearest_neighbors",
]


@dataclass(frozen=True)
class Phrase:
    """A lowercased, whitespace-tokenized phrase.

    Identity (equality, hashing) is the token sequence, so two phrases that
    differ only in case or spacing are the same answer.  The original string
    is kept in ``raw`` for display.
    """

    raw: str = field(compare=False)
    tokens: tuple[str, ...] = field(init=False)

    def __post_init__(self) -> None:
        tokens = tuple(self.raw.lower().split())
        if not tokens:
            raise DataError(f"phrase has no tokens: {self.raw!r}")
        object.__setattr__(self, "tokens", tokens)

    @property
    def text(self) -> str:
        """Canonical form: lowercase tokens joined by single spaces."""
        return " ".join(self.tokens)

    def __str__(self) -> str:
        return self.text


class EmbeddingTable:
    """Immutable word-to-vector table.  Iteration follows insertion order.

    Args:
        words: unique, non-empty words in file order.
        vectors: array of shape ``(len(words), dim)``; all values finite.
    """

    def __init__(self, words: Sequence[str], vectors: np.ndarray) -> None:
        vectors = np.array(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(words):
            raise DataError("vectors must have shape (n_words, dim)")
        if len(words) == 0:
            raise DataError("embedding table is empty")
        if vectors.shape[1] == 0:
            raise DataError("embedding dimension must be positive")
        if not np.isfinite(vectors).all():
            raise DataError("embedding vectors must be finite")
        self._words = list(words)
        self._row: dict[str, int] = {}
        for i, word in enumerate(self._words):
            if not word:
                raise DataError(f"empty word at row {i}")
            if word in self._row:
                raise DataError(f"duplicate word {word!r}")
            self._row[word] = i
        self._vectors = vectors
        self._vectors.setflags(write=False)
        self._unit: np.ndarray | None = None
        self._nonzero: np.ndarray | None = None
        self._word_arr: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self._vectors.shape[1]

    @property
    def words(self) -> tuple[str, ...]:
        return tuple(self._words)

    def __len__(self) -> int:
        return len(self._words)

    def __contains__(self, word: str) -> bool:
        return word in self._row

    def vector(self, word: str) -> np.ndarray | None:
        """Vector for ``word``, or None if the word is not in the table."""
        row = self._row.get(word)
        return None if row is None else self._vectors[row]

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        for i, word in enumerate(self._words):
            yield word, self._vectors[i]

    def _cosine_cache(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        # Unit-normalized rows; zero-norm rows are excluded from k-NN
        # candidates because cosine similarity is undefined for them.
        if self._unit is None:
            norms = np.linalg.norm(self._vectors, axis=1)
            nonzero = norms > 0.0
            unit = np.zeros_like(self._vectors)
            np.divide(self._vectors, norms[:, None], out=unit, where=nonzero[:, None])
            self._unit = unit
            self._nonzero = nonzero
            self._word_arr = np.array(self._words)
        return self._unit, self._nonzero, self._word_arr


def load_embeddings(path: str, expected_dim: int | None = None) -> EmbeddingTable:
    """Parse a text-format embedding file.

    Args:
        path: file to read.
        expected_dim: if given, every line must carry exactly this many
            components; otherwise the first line fixes the dimension.

    Raises:
        DataError: on an empty file, or (with the offending line number) on a
            dimension mismatch, duplicate word, or non-numeric component.
    """
    words: list[str] = []
    rows: list[list[float]] = []
    seen: set[str] = set()
    dim = expected_dim
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            parts = line.split()
            if not parts:
                raise DataError(f"{path}:{lineno}: blank line")
            word, comps = parts[0], parts[1:]
            if dim is None:
                dim = len(comps)
                if dim == 0:
                    raise DataError(f"{path}:{lineno}: no vector components")
            if len(comps) != dim:
                raise DataError(
                    f"{path}:{lineno}: expected {dim} components, got {len(comps)}"
                )
            try:
                values = [float(c) for c in comps]
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric component") from None
            if not all(math.isfinite(v) for v in values):
                raise DataError(f"{path}:{lineno}: non-finite component")
            if word in seen:
                raise DataError(f"{path}:{lineno}: duplicate word {word!r}")
            seen.add(word)
            words.append(word)
            rows.append(values)
    if not words:
        raise DataError(f"{path}: empty embedding file")
    return EmbeddingTable(words, np.array(rows, dtype=np.float64))


def save_embeddings(table: EmbeddingTable, path: str) -> None:
    """Write the table in the text format, full float precision."""
    with open(path, "w", encoding="utf-8") as handle:
        for word, vec in table.items():
            handle.write(word + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def embed_phrase(table: EmbeddingTable, phrase: Phrase) -> np.ndarray | None:
    """Mean of the vectors of the phrase's in-table tokens.

    Returns None when no token is in the table.  Token repetitions count
    once per occurrence.
    """
    rows = [table.vector(tok) for tok in phrase.tokens]
    rows = [r for r in rows if r is not None]
    if not rows:
        return None
    return np.mean(np.stack(rows), axis=0)


def nearest_neighbors(
    table: EmbeddingTable,
    query: np.ndarray,
    k: int,
    exclude: Iterable[str] = (),
) -> list[tuple[str, float]]:
    """Top-``k`` table words by cosine similarity to ``query``.

    Results are in descending similarity, ties broken by the
    lexicographically smaller word.  Words in ``exclude`` never appear.
    Fewer than ``k`` pairs are returned when the candidate set is smaller.

    Raises:
        ValueError: if ``k <= 0`` or the query is zero-norm or non-finite.
    """
    if k <= 0:
        raise ValueError("k must be positive")
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (table.dim,):
        raise ValueError(f"query must have shape ({table.dim},)")
    if not np.isfinite(q).all():
        raise ValueError("query must be finite")
    norm = np.linalg.norm(q)
    if norm == 0.0:
        raise ValueError("query has zero norm")
    unit, nonzero, word_arr = table._cosine_cache()
    sims = unit @ (q / norm)
    mask = nonzero.copy()
    for word in exclude:
        row = table._row.get(word)
        if row is not None:
            mask[row] = False
    cand = np.flatnonzero(mask)
    if cand.size == 0:
        return []
    order = np.lexsort((word_arr[cand], -sims[cand]))
    top = cand[order[: min(k, cand.size)]]
    return [(table._words[i], float(sims[i])) for i in top]
