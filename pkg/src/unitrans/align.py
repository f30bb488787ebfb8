"""Cross-lingual embedding alignment and word-by-word corpus translation.

A seed dictionary of identical strings supervises an orthogonal map ``P``
(closed-form Procrustes via SVD); source words are then translated to the
target word with the highest CSLS score and labels are copied across.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass
from typing import TextIO

import numpy as np

from .corpus import LabeledSentence
from .embed import EmbeddingTable
from .errors import AlignmentError, ConfigError, LookupFailure, NumericError, ParseError

log = logging.getLogger(__name__)

DEFAULT_K = 10
BLOCK_ROWS = 2048


@dataclass(frozen=True)
class SeedDictionary:
    pairs: tuple

    def __post_init__(self):
        pairs = tuple((str(s), str(t)) for s, t in self.pairs)
        if len(set(pairs)) != len(pairs):
            raise ConfigError("seed dictionary contains duplicate pairs")
        object.__setattr__(self, "pairs", pairs)

    def __len__(self):
        return len(self.pairs)


@dataclass(frozen=True, eq=False)
class OrthogonalMapping:
    matrix: np.ndarray
    residual: float = float("nan")
    pairs: int = 0

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def orthogonality_defect(self) -> float:
        """``||P^T P - I||_F``."""
        p = self.matrix
        return float(np.linalg.norm(p.T @ p - np.eye(self.dim)))

    def apply(self, vectors):
        return np.asarray(vectors) @ self.matrix.T


def build_seed_dictionary(src: EmbeddingTable, tgt: EmbeddingTable,
                          max_pairs: int | None = None,
                          skip_numeric: bool = False) -> SeedDictionary:
    """Pair every source word that also appears verbatim in the target vocab.

    Pairs follow source frequency order. ``skip_numeric`` drops strings made
    only of digits and punctuation.
    """
    pairs = []
    for word in src.vocab:
        if word not in tgt:
            continue
        if skip_numeric and not any(ch.isalpha() for ch in word):
            continue
        pairs.append((word, word))
        if max_pairs is not None and len(pairs) >= max_pairs:
            break
    if len(pairs) < 2:
        raise AlignmentError(
            f"only {len(pairs)} identical strings shared by the vocabularies; "
            "at least 2 are needed"
        )
    if len(pairs) < src.dim:
        log.warning("seed dictionary has %d pairs for dim %d", len(pairs), src.dim)
    return SeedDictionary(pairs)


def _dictionary_matrices(dictionary, src, tgt):
    s_rows, t_rows = [], []
    for s, t in dictionary.pairs:
        i, j = src.index_of(s), tgt.index_of(t)
        if i is None:
            raise LookupFailure(f"source word {s!r} missing from source table")
        if j is None:
            raise LookupFailure(f"target word {t!r} missing from target table")
        s_rows.append(i)
        t_rows.append(j)
    # columns are words: S, T are d x D
    return src.vectors[s_rows].T, tgt.vectors[t_rows].T


def procrustes_objective(p, s, t) -> float:
    return float(np.linalg.norm(p @ s - t))


def solve_procrustes(dictionary: SeedDictionary, src: EmbeddingTable,
                     tgt: EmbeddingTable) -> OrthogonalMapping:
    """Orthogonal ``P`` minimising ``||P S - T||_F``: ``P = U V^T`` for ``T S^T = U Σ V^T``."""
    if src.dim != tgt.dim:
        raise ConfigError(f"dimension mismatch: {src.dim} vs {tgt.dim}")
    s, t = _dictionary_matrices(dictionary, src, tgt)
    try:
        u, _, vt = np.linalg.svd(t @ s.T)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD did not converge: {exc}") from exc
    p = u @ vt
    p.setflags(write=False)
    return OrthogonalMapping(p, procrustes_objective(p, s, t), len(dictionary))


def save_mapping(mapping: OrthogonalMapping) -> str:
    out = io.StringIO()
    out.write(f"{mapping.dim}\n")
    for row in mapping.matrix:
        out.write(" ".join(repr(float(v)) for v in row) + "\n")
    return out.getvalue()


def load_mapping(text: str | TextIO) -> OrthogonalMapping:
    if not isinstance(text, str):
        text = text.read()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ParseError("empty mapping file", 1)
    try:
        d = int(lines[0])
    except ValueError:
        raise ParseError("first line must be the dimension", 1) from None
    if len(lines) != d + 1:
        raise ParseError(f"expected {d} matrix rows, got {len(lines) - 1}")
    rows = []
    for k, line in enumerate(lines[1:], start=2):
        try:
            row = [float(v) for v in line.split()]
        except ValueError:
            raise ParseError("non-numeric matrix entry", k) from None
        if len(row) != d:
            raise ParseError(f"expected {d} values, got {len(row)}", k)
        rows.append(row)
    p = np.array(rows)
    p.setflags(write=False)
    return OrthogonalMapping(p)


def _unit(x):
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise NumericError("cosine similarity of a zero-norm vector")
    return x / norms


def cosine(a, b) -> float:
    a, b = _unit(a), _unit(b)
    return float(a @ b)


def csls_score(mapped_src, tgt_vec, r_t: float, r_s: float) -> float:
    """``2 cos(Ps, t) - r_T(Ps) - r_S(t)``; vectors may be raw arrays or WordVectors."""
    a = getattr(mapped_src, "vector", mapped_src)
    b = getattr(tgt_vec, "vector", tgt_vec)
    return 2.0 * cosine(a, b) - r_t - r_s


def _topk_mean(sims, k):
    # mean of the k largest entries of each row
    if k == sims.shape[1]:
        return sims.mean(axis=1)
    part = np.partition(sims, sims.shape[1] - k, axis=1)[:, -k:]
    return part.mean(axis=1)


def mean_topk_cosine(queries, keys, k: int, block: int = BLOCK_ROWS):
    """For each query row, mean cosine to its ``k`` nearest key rows."""
    q, kk = _unit(queries), _unit(keys)
    out = np.empty(q.shape[0])
    for lo in range(0, q.shape[0], block):
        out[lo:lo + block] = _topk_mean(q[lo:lo + block] @ kk.T, k)
    return out


def compute_penalties(mapped_src_vectors, tgt: EmbeddingTable | np.ndarray, k: int = DEFAULT_K):
    """Hubness penalties ``(r_T per source row, r_S per target row)``."""
    mapped = np.asarray(mapped_src_vectors, dtype=np.float64)
    tv = tgt.vectors if isinstance(tgt, EmbeddingTable) else np.asarray(tgt, dtype=np.float64)
    if not 1 <= k <= tv.shape[0]:
        raise ConfigError(f"K={k} outside [1, {tv.shape[0]}] (target vocab)")
    if k > mapped.shape[0]:
        raise ConfigError(f"K={k} exceeds the source vocabulary size {mapped.shape[0]}")
    return mean_topk_cosine(mapped, tv, k), mean_topk_cosine(tv, mapped, k)


@dataclass(frozen=True)
class Translation:
    word: str
    score: float
    passthrough: bool = False


class Translator:
    """CSLS nearest-neighbour translation with penalties computed once.

    ``r_S`` needs every mapped source vector, so it is computed eagerly;
    per-word results are memoised.
    """

    def __init__(self, mapping: OrthogonalMapping, src: EmbeddingTable,
                 tgt: EmbeddingTable, k: int = DEFAULT_K):
        if mapping.dim != src.dim or src.dim != tgt.dim:
            raise ConfigError("mapping and tables disagree on dimension")
        self.k = k
        self.src = src
        self.tgt = tgt
        self._mapped = _unit(mapping.apply(src.vectors))
        self._tgt = _unit(tgt.vectors)
        self.r_t, self.r_s = compute_penalties(self._mapped, self._tgt, k)
        self._cache = {}

    def scores(self, i: int):
        cos = self._tgt @ self._mapped[i]
        return 2.0 * cos - self.r_t[i] - self.r_s

    def translate(self, word: str) -> Translation:
        hit = self._cache.get(word)
        if hit is not None:
            return hit
        i = self.src.index_of(word)
        if i is None:
            result = Translation(word, float("nan"), passthrough=True)
        else:
            scores = self.scores(i)
            j = int(np.argmax(scores))  # first maximum = lowest target rank
            result = Translation(self.tgt.vocab[j], float(scores[j]))
        self._cache[word] = result
        return result

    def table(self, words=None) -> dict:
        words = self.src.vocab if words is None else words
        return {w: self.translate(w) for w in words}


def translate_word(word, mapping, src, tgt, k: int = DEFAULT_K) -> Translation:
    return Translator(mapping, src, tgt, k).translate(word)


def transfer_corpus(corpus, translator: Translator) -> list:
    """Replace each token by its translation and copy labels unchanged."""
    out = []
    for sent in corpus:
        tokens = [translator.translate(tok).word for tok in sent.tokens]
        out.append(LabeledSentence(tokens, sent.labels))
    return out


def export_translation_table(translations: dict) -> str:
    out = io.StringIO()
    for src_word, tr in translations.items():
        if tr.passthrough:
            continue
        out.write(f"{src_word}\t{tr.word}\t{tr.score!r}\n")
    return out.getvalue()
