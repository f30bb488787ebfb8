"""CoNLL column-format corpora with BIO entity labels.

Sentences are immutable; labels are stored as class ids into a
:class:`LabelSet`, whose order (``O`` first, then ``B-``/``I-`` pairs per
entity type) is the class order used by every model.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

from .errors import BIOValidationError, LabelError, ParseError

DEFAULT_ENTITY_TYPES = ("LOC", "MISC", "ORG", "PER")
OUTSIDE = "O"
ABSENT = "_"
DOCSTART = "-DOCSTART-"


@dataclass(frozen=True)
class LabelSet:
    entity_types: tuple = DEFAULT_ENTITY_TYPES
    labels: tuple = field(init=False)
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        types = tuple(self.entity_types)
        if len(set(types)) != len(types):
            raise LabelError(f"duplicate entity types in {types!r}")
        for t in types:
            if not t or any(ch.isspace() for ch in t):
                raise LabelError(f"invalid entity type {t!r}")
        labels = [OUTSIDE]
        for t in types:
            labels += [f"B-{t}", f"I-{t}"]
        object.__setattr__(self, "entity_types", types)
        object.__setattr__(self, "labels", tuple(labels))
        object.__setattr__(self, "_index", {lab: i for i, lab in enumerate(labels)})

    def __len__(self):
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise LabelError(f"unknown label {label!r}") from None

    def name(self, class_id: int) -> str:
        return self.labels[class_id]

    def begin_id(self, entity_type: str) -> int:
        return self.index(f"B-{entity_type}")

    def inside_id(self, entity_type: str) -> int:
        return self.index(f"I-{entity_type}")

    def is_inside(self, class_id: int) -> bool:
        return class_id > 0 and class_id % 2 == 0

    def is_begin(self, class_id: int) -> bool:
        return class_id % 2 == 1

    def type_of(self, class_id: int) -> str | None:
        if class_id == 0:
            return None
        return self.entity_types[(class_id - 1) // 2]

    def allowed(self, prev: int | None, cur: int) -> bool:
        """Whether ``cur`` may follow ``prev`` (``None`` = sentence start)."""
        if not self.is_inside(cur):
            return True
        return prev is not None and prev in (cur - 1, cur)

    def transition_mask(self):
        """Boolean ``(|C|, |C|)`` matrix; ``[i, j]`` is True if j may follow i."""
        import numpy as np

        n = len(self)
        mask = np.ones((n, n), dtype=bool)
        for j in range(n):
            if self.is_inside(j):
                mask[:, j] = False
                mask[j - 1, j] = True
                mask[j, j] = True
        return mask

    def start_mask(self):
        import numpy as np

        return np.array([not self.is_inside(j) for j in range(len(self))])

    def first_violation(self, labels: Sequence[int]) -> int | None:
        prev = None
        for i, y in enumerate(labels):
            if not 0 <= y < len(self.labels):
                return i
            if not self.allowed(prev, y):
                return i
            prev = y
        return None

    def validate(self, labels: Sequence[int], sentence: int | None = None) -> None:
        pos = self.first_violation(labels)
        if pos is None:
            return
        y = labels[pos]
        if not 0 <= y < len(self.labels):
            raise BIOValidationError(f"class id {y} out of range", sentence, pos)
        prev = "sentence start" if pos == 0 else self.labels[labels[pos - 1]]
        raise BIOValidationError(
            f"{self.labels[y]} cannot follow {prev}", sentence, pos
        )


@dataclass(frozen=True)
class LabeledSentence:
    tokens: tuple
    labels: tuple

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "labels", tuple(int(y) for y in self.labels))
        if not self.tokens:
            raise ValueError("a sentence needs at least one token")
        if len(self.tokens) != len(self.labels):
            raise ValueError(
                f"{len(self.tokens)} tokens but {len(self.labels)} labels"
            )
        _check_tokens(self.tokens)

    def __len__(self):
        return len(self.tokens)


@dataclass(frozen=True)
class UnlabeledSentence:
    tokens: tuple

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.tokens:
            raise ValueError("a sentence needs at least one token")
        _check_tokens(self.tokens)

    def __len__(self):
        return len(self.tokens)


@dataclass(frozen=True, order=True)
class EntitySpan:
    start: int
    end: int
    type: str

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"bad span bounds [{self.start}, {self.end})")


def _check_tokens(tokens):
    for tok in tokens:
        if not isinstance(tok, str) or not tok or any(ch.isspace() for ch in tok):
            raise ValueError(f"invalid token {tok!r}")


def _as_text(text) -> str:
    if isinstance(text, str):
        return text
    return text.read()


def _blocks(text: str, min_columns: int):
    """Yield ``(first_line_no, [(line_no, columns), ...])`` per sentence."""
    block = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            if block:
                yield block
                block = []
            continue
        cols = line.split()
        if cols[0] == DOCSTART:
            continue
        if len(cols) < min_columns:
            raise ParseError(
                f"expected at least {min_columns} columns, got {len(cols)}", line_no
            )
        block.append((line_no, cols))
    if block:
        yield block


def read_conll(text: str | TextIO, label_set: LabelSet | None = None) -> list:
    """Parse CoNLL text into validated :class:`LabeledSentence` objects.

    Column 0 is the token and the last column the BIO label; any middle
    columns are ignored. ``-DOCSTART-`` lines are skipped.
    """
    label_set = label_set or LabelSet()
    sentences = []
    for block in _blocks(_as_text(text), min_columns=2):
        tokens, labels = [], []
        for line_no, cols in block:
            tokens.append(cols[0])
            try:
                labels.append(label_set.index(cols[-1]))
            except LabelError as exc:
                raise LabelError(str(exc), line_no) from None
        label_set.validate(labels, sentence=len(sentences))
        sentences.append(LabeledSentence(tokens, labels))
    return sentences


def read_tokens(text: str | TextIO) -> list:
    """Read sentences keeping only column 0; labels, if any, are dropped."""
    return [
        UnlabeledSentence([cols[0] for _, cols in block])
        for block in _blocks(_as_text(text), min_columns=1)
    ]


def write_conll(sentences: Iterable[LabeledSentence], label_set: LabelSet | None = None) -> str:
    label_set = label_set or LabelSet()
    out = io.StringIO()
    for sent in sentences:
        for tok, y in zip(sent.tokens, sent.labels):
            out.write(f"{tok}\t{label_set.name(y)}\n")
        out.write("\n")
    return out.getvalue()


def write_tokens(sentences: Iterable) -> str:
    out = io.StringIO()
    for sent in sentences:
        for tok in sent.tokens:
            out.write(f"{tok}\n")
        out.write("\n")
    return out.getvalue()


def extract_spans(sentence, label_set: LabelSet | None = None) -> list:
    """Entity spans of a BIO sequence: one per maximal ``B-X (I-X)*`` run.

    ``sentence`` may be a :class:`LabeledSentence` or a bare id sequence.
    """
    label_set = label_set or LabelSet()
    labels = sentence.labels if hasattr(sentence, "labels") else tuple(sentence)
    label_set.validate(labels)
    spans = []
    start = None
    for i, y in enumerate(labels):
        if label_set.is_inside(y):
            continue
        if start is not None:
            spans.append(EntitySpan(start, i, label_set.type_of(labels[start])))
            start = None
        if label_set.is_begin(y):
            start = i
    if start is not None:
        spans.append(EntitySpan(start, len(labels), label_set.type_of(labels[start])))
    return spans


def strip_labels(sentences: Iterable[LabeledSentence]) -> list:
    return [UnlabeledSentence(s.tokens) for s in sentences]


def write_pseudo_labels(sentences, pseudo, label_set: LabelSet | None = None) -> str:
    """CoNLL text with ``_`` for tokens outside the voting set.

    ``pseudo`` holds one integer array per sentence, ``-1`` meaning absent.
    """
    label_set = label_set or LabelSet()
    out = io.StringIO()
    for sent, ys in zip(sentences, pseudo):
        for tok, y in zip(sent.tokens, ys):
            out.write(f"{tok}\t{ABSENT if y < 0 else label_set.name(int(y))}\n")
        out.write("\n")
    return out.getvalue()


def read_pseudo_labels(text: str | TextIO, label_set: LabelSet | None = None):
    """Inverse of :func:`write_pseudo_labels`: ``(sentences, id lists)``."""
    label_set = label_set or LabelSet()
    sentences, pseudo = [], []
    for block in _blocks(_as_text(text), min_columns=2):
        ids = []
        for line_no, cols in block:
            if cols[-1] == ABSENT:
                ids.append(-1)
                continue
            try:
                ids.append(label_set.index(cols[-1]))
            except LabelError as exc:
                raise LabelError(str(exc), line_no) from None
        sentences.append(UnlabeledSentence([cols[0] for _, cols in block]))
        pseudo.append(ids)
    return sentences, pseudo
