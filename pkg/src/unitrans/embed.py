"""Monolingual word-embedding tables in fastText text format."""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np

from .errors import ConfigError, NormalizationError, ParseError

log = logging.getLogger(__name__)

DEFAULT_MAX_VOCAB = 200_000


@dataclass(frozen=True)
class WordVector:
    word: str
    vector: np.ndarray


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """Vocabulary (in frequency order) plus one row of ``dim`` floats per word."""

    vocab: tuple
    vectors: np.ndarray
    normalized: bool = False
    duplicates: int = 0
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        vocab = tuple(self.vocab)
        vectors = np.array(self.vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(vocab):
            raise ConfigError(
                f"vectors shape {vectors.shape} does not match {len(vocab)} words"
            )
        if vectors.shape[1] < 1:
            raise ConfigError("embedding dimension must be positive")
        if not np.all(np.isfinite(vectors)):
            raise ConfigError("embedding table contains non-finite values")
        index = {}
        for i, w in enumerate(vocab):
            if w in index:
                raise ConfigError(f"duplicate word {w!r}")
            index[w] = i
        vectors.setflags(write=False)
        object.__setattr__(self, "vocab", vocab)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "_index", index)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.vocab)

    def __contains__(self, word):
        return word in self._index

    def index_of(self, word: str) -> int | None:
        return self._index.get(word)

    def mapped(self, matrix) -> "EmbeddingTable":
        """Table whose rows are ``matrix @ v`` for every original row ``v``."""
        matrix = np.asarray(getattr(matrix, "matrix", matrix), dtype=np.float64)
        if matrix.shape != (self.dim, self.dim):
            raise ConfigError(
                f"mapping of shape {matrix.shape} cannot act on dim {self.dim}"
            )
        return EmbeddingTable(self.vocab, self.vectors @ matrix.T, normalized=False)


def load_embeddings(text: str | TextIO, max_vocab: int | None = DEFAULT_MAX_VOCAB) -> EmbeddingTable:
    """Parse a fastText ``.vec`` stream.

    The header is ``"<count> <dim>"``. Rows past ``max_vocab`` are not
    parsed. Duplicate words keep their first row; the number dropped is
    stored on the table and logged.
    """
    stream = io.StringIO(text) if isinstance(text, str) else text
    header = stream.readline()
    parts = header.split()
    if len(parts) != 2:
        raise ParseError("header must be '<vocab_size> <dim>'", 1)
    try:
        _, dim = int(parts[0]), int(parts[1])
    except ValueError:
        raise ParseError("header must be '<vocab_size> <dim>'", 1) from None
    if dim <= 0:
        raise ParseError(f"dimension must be positive, got {dim}", 1)
    if max_vocab is not None and max_vocab < 0:
        raise ConfigError("max_vocab must be non-negative")

    vocab, rows, seen = [], [], set()
    duplicates = 0
    for line_no, line in enumerate(stream, start=2):
        if max_vocab is not None and len(vocab) >= max_vocab:
            break
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        cols = line.rstrip(" ").split(" ")
        if len(cols) != dim + 1:
            raise ParseError(
                f"expected {dim} values after the word, got {len(cols) - 1}", line_no
            )
        word = cols[0]
        try:
            row = [float(v) for v in cols[1:]]
        except ValueError:
            raise ParseError(f"non-numeric value in row for {word!r}", line_no) from None
        if not all(np.isfinite(row)):
            raise ParseError(f"non-finite value in row for {word!r}", line_no)
        if word in seen:
            duplicates += 1
            continue
        seen.add(word)
        vocab.append(word)
        rows.append(row)
    if duplicates:
        log.warning("skipped %d duplicate words", duplicates)
    vectors = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    return EmbeddingTable(tuple(vocab), vectors, duplicates=duplicates)


def write_embeddings(table: EmbeddingTable) -> str:
    out = io.StringIO()
    out.write(f"{len(table)} {table.dim}\n")
    for word, row in zip(table.vocab, table.vectors):
        out.write(word + " " + " ".join(repr(float(v)) for v in row) + "\n")
    return out.getvalue()


def normalize_rows(table: EmbeddingTable) -> EmbeddingTable:
    norms = np.linalg.norm(table.vectors, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        word = table.vocab[zero[0]]
        raise NormalizationError(f"zero vector for word {word!r}", word=word)
    return EmbeddingTable(table.vocab, table.vectors / norms[:, None], normalized=True)


def lookup(table: EmbeddingTable, word: str) -> WordVector | None:
    i = table.index_of(word)
    if i is None:
        return None
    return WordVector(word, table.vectors[i])
