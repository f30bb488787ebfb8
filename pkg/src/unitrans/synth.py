"""Synthetic bilingual NER benchmark.

Both languages share one set of concepts (function words, per-type cue
words, entity heads, entity continuations and type-ambiguous heads).
Source vectors are clustered by role; target vectors are an orthogonal
rotation of the source vectors plus Gaussian noise. A fraction of
concepts use the same surface string in both languages, which is what
seeds the alignment. Cue words mark an entity's type; how often a cue
follows rather than precedes its entity is set per language, so context
learned on source text only partly carries over to target text.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .corpus import DEFAULT_ENTITY_TYPES, LabeledSentence, LabelSet, UnlabeledSentence, write_conll, write_tokens
from .embed import EmbeddingTable, write_embeddings
from .errors import ConfigError

_CONSONANTS = "bcdfghjklmnprstvz"
_VOWELS = "aeiou"


@dataclass(frozen=True)
class SynthConfig:
    dim: int = 32
    entity_types: tuple = DEFAULT_ENTITY_TYPES
    function_words: int = 150
    cue_words: int = 3            # per entity type
    entity_words: int = 40        # per entity type
    inside_words: int = 10        # per entity type
    ambiguous_words: int = 6      # per entity type
    identical_fraction: float = 0.3
    noise: float = 0.6
    cluster_spread: float = 0.5
    source_sentences: int = 500
    target_sentences: int = 300
    unlabeled_sentences: int = 2000
    mean_length: float = 8.0
    entity_rate: float = 0.15
    inside_rate: float = 0.3
    cue_rate: float = 0.7
    source_cue_after: float = 0.0   # probability a cue follows its entity
    target_cue_after: float = 0.5

    def __post_init__(self):
        if self.dim <= 0:
            raise ConfigError("dim must be positive")
        if not self.entity_types:
            raise ConfigError("at least one entity type is required")
        if self.function_words < 1 or self.entity_words < 1:
            raise ConfigError("vocabulary must contain function and entity words")
        for name in ("cue_words", "inside_words", "ambiguous_words",
                     "source_sentences", "target_sentences", "unlabeled_sentences"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for name in ("identical_fraction", "entity_rate", "inside_rate", "cue_rate",
                     "source_cue_after", "target_cue_after"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")
        if self.noise < 0 or self.cluster_spread < 0:
            raise ConfigError("noise and cluster_spread must be non-negative")
        if self.mean_length < 1:
            raise ConfigError("mean_length must be >= 1")

    @classmethod
    def from_dict(cls, values: dict) -> "SynthConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        out = {}
        for key, raw in values.items():
            if key not in kinds:
                raise ConfigError(f"unknown synth option {key!r}")
            default = getattr(cls(), key)
            out[key] = _coerce(raw, default)
        return cls(**out)


def _coerce(raw, default):
    if not isinstance(raw, str):
        return raw
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if isinstance(default, tuple):
        return tuple(x.strip() for x in raw.split(",") if x.strip())
    try:
        return type(default)(raw)
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r} as {type(default).__name__}") from None


@dataclass(frozen=True)
class Concept:
    role: str                 # function | cue | head | inside | ambiguous
    types: tuple              # entity types the concept can carry
    source: str
    target: str


@dataclass(frozen=True, eq=False)
class SynthData:
    source: list              # LabeledSentence, source language
    target: list              # LabeledSentence, target language, evaluation only
    unlabeled: list           # UnlabeledSentence, target language
    dictionary: list          # (source word, target word) for every concept
    source_table: EmbeddingTable
    target_table: EmbeddingTable
    rotation: np.ndarray
    label_set: LabelSet


def _random_orthogonal(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def _word_factory(rng):
    used = set()

    def make(syllables):
        while True:
            w = "".join(rng.choice(list(_CONSONANTS)) + rng.choice(list(_VOWELS))
                         for _ in range(syllables))
            if w not in used:
                used.add(w)
                return w
    return make


def _build_concepts(config, rng):
    make = _word_factory(rng)
    concepts = []
    types = config.entity_types

    def add(role, ctypes, n, syllables):
        for _ in range(n):
            src = make(syllables)
            tgt = src if rng.random() < config.identical_fraction else make(syllables)
            concepts.append(Concept(role, ctypes, src, tgt))

    add("function", (), config.function_words, 2)
    for t in types:
        add("cue", (t,), config.cue_words, 2)
    for t in types:
        add("head", (t,), config.entity_words, 3)
    for t in types:
        add("inside", (t,), config.inside_words, 3)
    if len(types) > 1:
        for i, t in enumerate(types):
            add("ambiguous", (t, types[(i + 1) % len(types)]), config.ambiguous_words, 3)
    return concepts


def _source_vectors(config, concepts, rng):
    d = config.dim
    centres = {}

    def centre(key):
        if key not in centres:
            v = rng.standard_normal(d)
            centres[key] = v / np.linalg.norm(v)
        return centres[key]

    rows = []
    for c in concepts:
        if c.role == "ambiguous":
            base = sum(centre(("head", t)) for t in c.types)
            base = base / np.linalg.norm(base)
        else:
            base = centre((c.role,) + c.types)
        v = base + config.cluster_spread * rng.standard_normal(d) / np.sqrt(d)
        rows.append(v / np.linalg.norm(v))
    return np.array(rows)


class _Grammar:
    """Samples abstract sentences and renders them in either word order."""

    def __init__(self, config, concepts, label_set):
        self.config = config
        self.label_set = label_set
        self.pools = {}
        for k, c in enumerate(concepts):
            if c.role == "function":
                self.pools.setdefault("function", []).append(k)
            elif c.role == "ambiguous":
                for t in c.types:
                    self.pools.setdefault(("ambiguous", t), []).append(k)
            else:
                self.pools.setdefault((c.role, c.types[0]), []).append(k)
        self.weights = {key: self._zipf(len(pool)) for key, pool in self.pools.items()}

    @staticmethod
    def _zipf(n):
        w = 1.0 / (np.arange(n) + 2.0)
        return w / w.sum()

    def draw(self, rng, key):
        pool = self.pools.get(key)
        if not pool:
            return None
        return pool[rng.choice(len(pool), p=self.weights[key])]

    def sample(self, rng):
        """List of units: ('O', concept) or ('E', type, [concepts], cue or None)."""
        cfg = self.config
        n = 1 + rng.poisson(cfg.mean_length - 1)
        units, used = [], 0
        types = cfg.entity_types
        while used < n:
            room = n - used
            if rng.random() < cfg.entity_rate:
                t = types[rng.integers(len(types))]
                ambiguous = ("ambiguous", t) in self.pools and rng.random() < 0.25
                head = self.draw(rng, ("ambiguous", t) if ambiguous else ("head", t))
                body = [head]
                while len(body) < 3 and rng.random() < cfg.inside_rate and ("inside", t) in self.pools:
                    body.append(self.draw(rng, ("inside", t)))
                cue = None
                if (ambiguous or rng.random() < cfg.cue_rate) and ("cue", t) in self.pools:
                    cue = self.draw(rng, ("cue", t))
                size = len(body) + (cue is not None)
                if size <= room:
                    units.append(("E", t, body, cue))
                    used += size
                    continue
            units.append(("O", self.draw(rng, "function")))
            used += 1
        return units

    def render(self, units, words, cue_after, rng):
        tokens, labels = [], []
        ls = self.label_set
        for unit in units:
            if unit[0] == "O":
                tokens.append(words[unit[1]])
                labels.append(0)
                continue
            _, t, body, cue = unit
            after = cue is not None and rng.random() < cue_after
            if cue is not None and not after:
                tokens.append(words[cue])
                labels.append(0)
            for j, k in enumerate(body):
                tokens.append(words[k])
                labels.append(ls.begin_id(t) if j == 0 else ls.inside_id(t))
            if after:
                tokens.append(words[cue])
                labels.append(0)
        return LabeledSentence(tokens, labels)


def generate_synthetic_bilingual(config: SynthConfig, seed: int) -> SynthData:
    """Deterministic benchmark: a pure function of ``(config, seed)``."""
    root = np.random.SeedSequence(seed)
    vocab_rng, vec_rng, src_rng, tgt_rng, unl_rng = [np.random.default_rng(s) for s in root.spawn(5)]
    label_set = LabelSet(tuple(config.entity_types))
    concepts = _build_concepts(config, vocab_rng)
    grammar = _Grammar(config, concepts, label_set)

    src_vecs = _source_vectors(config, concepts, vec_rng)
    rotation = _random_orthogonal(vec_rng, config.dim)
    tgt_vecs = src_vecs @ rotation.T
    if config.noise > 0:
        tgt_vecs = tgt_vecs + config.noise * vec_rng.standard_normal(tgt_vecs.shape) / np.sqrt(config.dim)

    # Tables list words by expected frequency (function words first, Zipf within role).
    freq = np.zeros(len(concepts))
    for key, pool in grammar.pools.items():
        for k, w in zip(pool, grammar.weights[key]):
            freq[k] += w * (10.0 if key == "function" else 1.0)
    order = sorted(range(len(concepts)), key=lambda k: (-freq[k], k))
    src_words = [c.source for c in concepts]
    tgt_words = [c.target for c in concepts]
    source_table = EmbeddingTable(tuple(src_words[k] for k in order), src_vecs[order])
    target_table = EmbeddingTable(tuple(tgt_words[k] for k in order), tgt_vecs[order])

    def corpus(rng, words, cue_after, n):
        return [grammar.render(grammar.sample(rng), words, cue_after, rng) for _ in range(n)]

    source = corpus(src_rng, src_words, config.source_cue_after, config.source_sentences)
    target = corpus(tgt_rng, tgt_words, config.target_cue_after, config.target_sentences)
    unlabeled = [UnlabeledSentence(s.tokens) for s in
                 corpus(unl_rng, tgt_words, config.target_cue_after, config.unlabeled_sentences)]
    dictionary = [(src_words[k], tgt_words[k]) for k in order]
    return SynthData(source, target, unlabeled, dictionary, source_table, target_table,
                     rotation, label_set)


SYNTH_FILES = {
    "source": "source.conll",
    "target": "target.conll",
    "unlabeled": "unlabeled.txt",
    "dictionary": "dictionary.tsv",
    "source_vectors": "source.vec",
    "target_vectors": "target.vec",
}


def write_synthetic(data: SynthData, outdir) -> dict:
    """Write every artifact of ``data`` under ``outdir``; returns name -> path."""
    outdir = Path(outdir)
    os.makedirs(outdir, exist_ok=True)
    contents = {
        "source": write_conll(data.source, data.label_set),
        "target": write_conll(data.target, data.label_set),
        "unlabeled": write_tokens(data.unlabeled),
        "dictionary": "".join(f"{s}\t{t}\n" for s, t in data.dictionary),
        "source_vectors": write_embeddings(data.source_table),
        "target_vectors": write_embeddings(data.target_table),
    }
    paths = {}
    for key, text in contents.items():
        path = outdir / SYNTH_FILES[key]
        path.write_text(text, encoding="utf-8")
        paths[key] = path
    return paths
