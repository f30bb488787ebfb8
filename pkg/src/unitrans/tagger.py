"""Window-embedding NER tagger.

Features for token ``i`` are the frozen embeddings of tokens
``i-w .. i+w`` concatenated (zeros for OOV words and positions past the
sentence edge), passed through one tanh layer and a softmax classifier.
Gradients are written out by hand; every loss is expressed as per-token
weights so batching never changes the objective.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .corpus import LabelSet, UnlabeledSentence
from .embed import EmbeddingTable
from .errors import ConfigError, FormatVersionError, NumericError, ParseError, TrainingError, ValidationError
from .optim import AdamW

log = logging.getLogger(__name__)

PARAM_NAMES = ("A", "c", "W", "b")
MODEL_MAGIC = "UNITRANS-TAGGER"
MODEL_VERSION = 1
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class EncoderConfig:
    window: int = 1
    hidden_dim: int = 64
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.window < 0:
            raise ConfigError("window must be >= 0")
        if self.hidden_dim < 1:
            raise ConfigError("hidden_dim must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3
    batch_size: int = 32
    learning_rate: float = 5e-4
    weight_decay: float = 0.01
    seed: int = 0
    max_sequence_length: int = 128
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.max_sequence_length < 1:
            raise ConfigError("max_sequence_length must be >= 1")


@dataclass(eq=False)
class TaggerModel:
    params: dict
    label_set: LabelSet
    encoder: EncoderConfig
    dim: int

    @property
    def num_classes(self) -> int:
        return len(self.label_set)

    @property
    def input_dim(self) -> int:
        return (2 * self.encoder.window + 1) * self.dim

    def copy(self) -> "TaggerModel":
        return TaggerModel({k: v.copy() for k, v in self.params.items()},
                           self.label_set, self.encoder, self.dim)

    def check_finite(self):
        for name in PARAM_NAMES:
            if not np.all(np.isfinite(self.params[name])):
                raise NumericError(f"parameter {name} has non-finite entries")


def init_model(label_set: LabelSet, dim: int, encoder: EncoderConfig | None = None,
               seed: int = 0) -> TaggerModel:
    """Glorot-uniform weights, zero biases."""
    encoder = encoder or EncoderConfig()
    if dim < 1:
        raise ConfigError("embedding dim must be >= 1")
    rng = np.random.default_rng([seed, 0])
    n_in = (2 * encoder.window + 1) * dim
    h, c = encoder.hidden_dim, len(label_set)
    lim1 = np.sqrt(6.0 / (n_in + h))
    lim2 = np.sqrt(6.0 / (h + c))
    params = {
        "A": rng.uniform(-lim1, lim1, size=(h, n_in)),
        "c": np.zeros(h),
        "W": rng.uniform(-lim2, lim2, size=(c, h)),
        "b": np.zeros(c),
    }
    return TaggerModel(params, label_set, encoder, dim)


# ---------------------------------------------------------------------------
# features


class FeatureSet:
    """Window token ids for a corpus, against one stacked embedding matrix.

    ``ids[t, k]`` is the embedding row of the token at offset ``k - w``
    from token ``t`` (the last row of ``matrix`` is the zero pad row).
    Optional per-token targets ride along: gold ``labels``, teacher
    ``soft`` rows and pseudo ``hard`` labels (``-1`` = absent).
    """

    def __init__(self, matrix, ids, pos, offsets, window, labels=None, soft=None, hard=None):
        self.matrix = matrix
        self.ids = ids
        self.pos = pos
        self.offsets = offsets
        self.window = window
        self.labels = labels
        self.soft = soft
        self.hard = hard

    @property
    def pad(self) -> int:
        return self.matrix.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self):
        return len(self.offsets) - 1

    @property
    def lengths(self):
        return np.diff(self.offsets)

    def rows(self, i):
        return slice(self.offsets[i], self.offsets[i + 1])

    def with_targets(self, labels=None, soft=None, hard=None) -> "FeatureSet":
        def flat(parts, dtype):
            if parts is None:
                return None
            arr = np.concatenate([np.asarray(p, dtype=dtype) for p in parts]) if len(parts) else np.zeros(0, dtype)
            if arr.shape[0] != self.offsets[-1]:
                raise ValidationError("targets do not match the corpus token count")
            return arr

        return FeatureSet(self.matrix, self.ids, self.pos, self.offsets, self.window,
                          flat(labels, np.int64) if labels is not None else self.labels,
                          flat(soft, np.float64) if soft is not None else self.soft,
                          flat(hard, np.int64) if hard is not None else self.hard)

    def __add__(self, other: "FeatureSet") -> "FeatureSet":
        if self.window != other.window or self.dim != other.dim:
            raise ConfigError("cannot combine feature sets with different shapes")
        a, b = self.matrix[:-1], other.matrix[:-1]
        matrix = np.vstack([a, b, np.zeros((1, self.dim))])
        new_pad = matrix.shape[0] - 1
        ids_a = np.where(self.ids == self.pad, new_pad, self.ids)
        ids_b = np.where(other.ids == other.pad, new_pad, other.ids + a.shape[0])

        def cat(x, y):
            if x is None or y is None:
                return None
            return np.concatenate([x, y])

        offsets = np.concatenate([self.offsets, other.offsets[1:] + self.offsets[-1]])
        return FeatureSet(matrix, np.vstack([ids_a, ids_b]), np.concatenate([self.pos, other.pos]),
                          offsets, self.window, cat(self.labels, other.labels),
                          cat(self.soft, other.soft), cat(self.hard, other.hard))


def featurize(sentences: Sequence, table: EmbeddingTable, window: int) -> FeatureSet:
    """Window ids for ``sentences`` looked up in ``table``.

    Sentences with ``labels`` attach gold labels to the feature set.
    """
    pad = len(table)
    matrix = np.vstack([table.vectors, np.zeros((1, table.dim))])
    lengths = [len(s.tokens) for s in sentences]
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    total = int(offsets[-1])
    width = 2 * window + 1
    ids = np.full((total, width), pad, dtype=np.int64)
    pos = np.zeros(total, dtype=np.int64)
    for s, sent in enumerate(sentences):
        tok_ids = np.array([pad if (j := table.index_of(tok)) is None else j for tok in sent.tokens],
                           dtype=np.int64)
        n = len(tok_ids)
        padded = np.concatenate([np.full(window, pad), tok_ids, np.full(window, pad)])
        lo = offsets[s]
        for k in range(width):
            ids[lo:lo + n, k] = padded[k:k + n]
        pos[lo:lo + n] = np.arange(n)
    labels = None
    if sentences and all(hasattr(s, "labels") for s in sentences):
        labels = np.concatenate([np.asarray(s.labels, dtype=np.int64) for s in sentences])
    return FeatureSet(matrix, ids, pos, offsets, window, labels=labels)


def _check_dims(model: TaggerModel, feats: FeatureSet):
    if feats.dim != model.dim or feats.window != model.encoder.window:
        raise ConfigError(
            f"model expects dim {model.dim}, window {model.encoder.window}; "
            f"features have dim {feats.dim}, window {feats.window}"
        )


class Batch(NamedTuple):
    x: np.ndarray          # (T, input_dim)
    weight: np.ndarray     # (T,) 1 / (n_sentences * sentence_length)
    labels: np.ndarray | None
    soft: np.ndarray | None
    hard: np.ndarray | None


def make_batch(feats: FeatureSet, sentences: Sequence[int] | None = None,
               max_len: int | None = None) -> Batch:
    """Gather the rows of ``sentences`` (default: all), truncating each to ``max_len``."""
    if sentences is None:
        sentences = range(len(feats))
    rows, weights, limits = [], [], []
    n = len(sentences)
    for s in sentences:
        lo, hi = feats.offsets[s], feats.offsets[s + 1]
        length = hi - lo if max_len is None else min(hi - lo, max_len)
        rows.append(np.arange(lo, lo + length))
        weights.append(np.full(length, 1.0 / (n * length)))
        limits.append(np.full(length, length))
    rows = np.concatenate(rows)
    ids = feats.ids[rows]
    if max_len is not None:
        shift = np.arange(ids.shape[1]) - feats.window
        beyond = feats.pos[rows][:, None] + shift[None, :] >= np.concatenate(limits)[:, None]
        ids = np.where(beyond, feats.pad, ids)
    x = feats.matrix[ids].reshape(len(rows), -1)

    def pick(arr):
        return None if arr is None else arr[rows]

    return Batch(x, np.concatenate(weights), pick(feats.labels), pick(feats.soft), pick(feats.hard))


# ---------------------------------------------------------------------------
# forward / backward


class Forward(NamedTuple):
    x: np.ndarray
    h: np.ndarray       # after dropout
    h_raw: np.ndarray   # tanh output
    mask: np.ndarray | None
    logits: np.ndarray
    probs: np.ndarray


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def forward(params, x, dropout_rate=0.0, rng=None) -> Forward:
    h_raw = np.tanh(x @ params["A"].T + params["c"])
    mask = None
    h = h_raw
    if dropout_rate > 0.0 and rng is not None:
        keep = 1.0 - dropout_rate
        mask = (rng.random(h_raw.shape) < keep) / keep
        h = h_raw * mask
    logits = h @ params["W"].T + params["b"]
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")
    return Forward(x, h, h_raw, mask, logits, softmax(logits))


def backward(params, fwd: Forward, dlogits) -> dict:
    grads = {"W": dlogits.T @ fwd.h, "b": dlogits.sum(axis=0)}
    dh = dlogits @ params["W"]
    if fwd.mask is not None:
        dh = dh * fwd.mask
    da = dh * (1.0 - fwd.h_raw ** 2)
    grads["A"] = da.T @ fwd.x
    grads["c"] = da.sum(axis=0)
    return grads


def ce_head(fwd: Forward, labels, weight):
    """Weighted cross-entropy: value and gradient w.r.t. logits."""
    t = np.arange(len(labels))
    logp = log_softmax(fwd.logits)
    loss = -(weight * logp[t, labels]).sum()
    d = fwd.probs.copy()
    d[t, labels] -= 1.0
    return float(loss), d * weight[:, None]


def mse_head(fwd: Forward, target, weight):
    """Weighted per-token mean squared error between probability rows."""
    p = fwd.probs
    diff = p - target
    c = p.shape[1]
    loss = (weight * (diff ** 2).mean(axis=1)).sum()
    g = (2.0 / c) * diff * weight[:, None]
    d = p * (g - (g * p).sum(axis=1, keepdims=True))
    return float(loss), d


def hard_head(fwd: Forward, hard, weight):
    """Cross-entropy on tokens with a pseudo label; others count zero."""
    present = hard >= 0
    w = np.where(present, weight, 0.0)
    return ce_head(fwd, np.where(present, hard, 0), w)


def ce_loss_and_grad(params, batch: Batch, dropout_rate=0.0, rng=None):
    fwd = forward(params, batch.x, dropout_rate, rng)
    loss, d = ce_head(fwd, batch.labels, batch.weight)
    return loss, backward(params, fwd, d)


# ---------------------------------------------------------------------------
# inference


def encode(tokens, model: TaggerModel, table: EmbeddingTable, *, training=False, rng=None):
    """Hidden feature rows ``(N, H)`` for one token sequence."""
    tokens = getattr(tokens, "tokens", tokens)
    if table.dim != model.dim:
        raise ConfigError(f"model dim {model.dim} != embedding dim {table.dim}")
    feats = featurize([UnlabeledSentence(tokens)], table, model.encoder.window)
    batch = make_batch(feats)
    rate = model.encoder.dropout_rate if training else 0.0
    if training and rng is None:
        raise ConfigError("training-mode encoding needs an rng")
    return forward(model.params, batch.x, rate, rng).h


def predict_proba(tokens, model: TaggerModel, table: EmbeddingTable):
    """Softmax class probabilities ``(N, |C|)`` for one token sequence."""
    tokens = getattr(tokens, "tokens", tokens)
    feats = featurize([UnlabeledSentence(tokens)], table, model.encoder.window)
    return predict_proba_features(model, feats)[0]


def predict_proba_features(model: TaggerModel, feats: FeatureSet) -> list:
    """Probability rows per sentence of ``feats`` (inference mode)."""
    _check_dims(model, feats)
    model.check_finite()
    if len(feats) == 0:
        return []
    probs = forward(model.params, make_batch(feats).x).probs
    return [probs[feats.rows(i)] for i in range(len(feats))]


def argmax_labels(probs) -> np.ndarray:
    """Per-token argmax; ties go to the lowest class id."""
    return np.argmax(np.asarray(probs), axis=-1)


def viterbi_decode(probs, label_set: LabelSet | None = None) -> np.ndarray:
    """Highest ``sum log p`` label sequence that is valid BIO.

    Only the tagging scheme constrains transitions; there are no learned
    transition scores. Ties resolve to the lowest class id.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.size == 0:
        return np.zeros(0, dtype=np.int64)
    label_set = label_set or LabelSet()
    n_cls = len(label_set)
    if probs.ndim != 2 or probs.shape[1] != n_cls:
        raise ValidationError(f"expected rows of {n_cls} probabilities, got shape {probs.shape}")
    if not np.all(np.isfinite(probs)) or np.any(probs < 0) or \
            np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise ValidationError("rows must be probability vectors")
    logp = np.log(np.maximum(probs, PROB_FLOOR))
    allowed = label_set.transition_mask()
    trans = np.where(allowed, 0.0, -np.inf)
    score = np.where(label_set.start_mask(), logp[0], -np.inf)
    n = probs.shape[0]
    back = np.zeros((n, n_cls), dtype=np.int64)
    for i in range(1, n):
        cand = score[:, None] + trans          # [prev, cur]
        back[i] = np.argmax(cand, axis=0)
        score = cand[back[i], np.arange(n_cls)] + logp[i]
    path = np.empty(n, dtype=np.int64)
    path[-1] = int(np.argmax(score))
    for i in range(n - 1, 0, -1):
        path[i - 1] = back[i, path[i]]
    return path


def sequence_score(probs, labels) -> float:
    logp = np.log(np.maximum(np.asarray(probs), PROB_FLOOR))
    return float(logp[np.arange(len(labels)), labels].sum())


def decode_corpus(model: TaggerModel, feats: FeatureSet) -> list:
    return [viterbi_decode(p, model.label_set) for p in predict_proba_features(model, feats)]


# ---------------------------------------------------------------------------
# training


def ce_loss(sentences, model: TaggerModel, table: EmbeddingTable) -> float:
    """Mean over sentences of the mean token cross-entropy (no dropout)."""
    if not sentences:
        raise ValidationError("ce_loss needs a nonempty batch")
    feats = featurize(sentences, table, model.encoder.window)
    _check_dims(model, feats)
    batch = make_batch(feats)
    return ce_head(forward(model.params, batch.x), batch.labels, batch.weight)[0]


def fit(model: TaggerModel, feats: FeatureSet, config: TrainConfig, loss_and_grad,
        dropout_rate: float | None = None) -> TaggerModel:
    """Mini-batch AdamW over sentences of ``feats``; returns a new model.

    ``loss_and_grad(params, batch, dropout_rate, rng)`` supplies the
    objective. Shuffling and dropout masks come from ``config.seed`` only.
    """
    if len(feats) == 0:
        raise ValidationError("training corpus is empty")
    _check_dims(model, feats)
    model = model.copy()
    rate = model.encoder.dropout_rate if dropout_rate is None else dropout_rate
    opt = AdamW(model.params, lr=config.learning_rate, betas=(config.beta1, config.beta2),
                eps=config.eps, weight_decay=config.weight_decay)
    rng = np.random.default_rng([config.seed, 1])
    for epoch in range(config.epochs):
        order = rng.permutation(len(feats))
        total, count = 0.0, 0
        for k, lo in enumerate(range(0, len(order), config.batch_size)):
            batch = make_batch(feats, order[lo:lo + config.batch_size], config.max_sequence_length)
            try:
                loss, grads = loss_and_grad(model.params, batch, rate, rng)
            except NumericError as exc:
                raise TrainingError(str(exc), epoch, k) from exc
            if not np.isfinite(loss):
                raise TrainingError("loss is not finite", epoch, k)
            opt.step(grads)
            total += loss
            count += 1
        log.info("epoch %d: mean batch loss %.6f", epoch + 1, total / count)
    try:
        model.check_finite()
    except NumericError as exc:
        raise TrainingError(str(exc), config.epochs - 1, None) from exc
    return model


def train(feats: FeatureSet, config: TrainConfig, init: TaggerModel | None = None, *,
          label_set: LabelSet | None = None, encoder: EncoderConfig | None = None) -> TaggerModel:
    """Supervised cross-entropy training on the gold labels of ``feats``."""
    if feats.labels is None:
        raise ValidationError("training features carry no labels")
    if init is None:
        init = init_model(label_set or LabelSet(), feats.dim,
                          encoder or EncoderConfig(window=feats.window), config.seed)
    elif label_set is not None and label_set != init.label_set:
        raise ConfigError("label set differs from the initial model's")
    return fit(init, feats, config, ce_loss_and_grad)


def finetune(model: TaggerModel, feats: FeatureSet, config: TrainConfig) -> TaggerModel:
    """Continue training ``model`` on ``feats``; the input model is untouched."""
    return train(feats, config, init=model)


# ---------------------------------------------------------------------------
# persistence


def save_model(model: TaggerModel) -> bytes:
    meta = {
        "dim": model.dim,
        "encoder": asdict(model.encoder),
        "entity_types": list(model.label_set.entity_types),
        "shapes": {k: list(model.params[k].shape) for k in PARAM_NAMES},
    }
    out = io.BytesIO()
    out.write(f"{MODEL_MAGIC} {MODEL_VERSION}\n".encode())
    out.write(json.dumps(meta, sort_keys=True).encode() + b"\n")
    for name in PARAM_NAMES:
        out.write(np.ascontiguousarray(model.params[name], dtype="<f8").tobytes())
    return out.getvalue()


def load_model(data: bytes) -> TaggerModel:
    buf = io.BytesIO(data)
    head = buf.readline().decode(errors="replace").split()
    if len(head) != 2 or head[0] != MODEL_MAGIC:
        raise ParseError("not a tagger model file", 1)
    if head[1] != str(MODEL_VERSION):
        raise FormatVersionError(f"unsupported model format version {head[1]}", 1)
    try:
        meta = json.loads(buf.readline())
    except ValueError:
        raise ParseError("corrupt model header", 2) from None
    encoder = EncoderConfig(**meta["encoder"])
    label_set = LabelSet(tuple(meta["entity_types"]))
    dim = int(meta["dim"])
    expected = {
        "A": [encoder.hidden_dim, (2 * encoder.window + 1) * dim],
        "c": [encoder.hidden_dim],
        "W": [len(label_set), encoder.hidden_dim],
        "b": [len(label_set)],
    }
    if meta["shapes"] != expected:
        raise ParseError(f"parameter shapes {meta['shapes']} do not match config {expected}")
    params = {}
    for name in PARAM_NAMES:
        shape = expected[name]
        n = int(np.prod(shape))
        raw = buf.read(8 * n)
        if len(raw) != 8 * n:
            raise ParseError(f"truncated model file while reading {name}")
        params[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    if buf.read(1):
        raise ParseError("trailing bytes after model parameters")
    return TaggerModel(params, label_set, encoder, dim)
