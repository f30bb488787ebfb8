"""Teacher-student distillation on unlabeled target-language text.

The student minimises, per sentence, ``eta * L_hard + L_soft``:

* ``L_soft`` is the mean over tokens of the MSE between teacher and
  student probability rows (teacher rows are constants);
* ``L_hard`` is cross-entropy on the tokens where the source, teacher and
  translation models agree on the argmax class, normalised by the full
  sentence length.

Teacher outputs are computed once before training and cached.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatVersionError, ParseError, ValidationError
from .tagger import (
    Batch,
    EncoderConfig,
    FeatureSet,
    TaggerModel,
    TrainConfig,
    argmax_labels,
    backward,
    fit,
    forward,
    hard_head,
    init_model,
    mse_head,
    predict_proba_features,
    viterbi_decode,
)

DEFAULT_ETA = 1.0
DEFAULT_ENSEMBLE = 5


@dataclass(frozen=True)
class SoftLabelSet:
    rows: tuple          # one (N, |C|) array per sentence
    ensemble_size: int = 1

    def __len__(self):
        return len(self.rows)


@dataclass(frozen=True)
class PseudoHardLabels:
    labels: tuple        # one int array per sentence, -1 where absent

    def __len__(self):
        return len(self.labels)

    @property
    def coverage(self) -> int:
        return int(sum((y >= 0).sum() for y in self.labels))


@dataclass(frozen=True)
class DistillConfig:
    eta: float = DEFAULT_ETA
    train: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=1e-3))
    use_soft: bool = True
    use_hard: bool = True
    warm_start: bool = False
    vote_with_viterbi: bool = False

    def __post_init__(self):
        if not (self.use_soft or self.use_hard):
            raise ConfigError("at least one of use_soft / use_hard must be enabled")
        if self.eta < 0:
            raise ConfigError("eta must be >= 0")


def _as_list(models):
    if isinstance(models, TaggerModel):
        return [models]
    models = list(models)
    if not models:
        raise ConfigError("at least one model is required")
    first = models[0]
    for m in models[1:]:
        if m.label_set != first.label_set or m.dim != first.dim or \
                m.encoder.window != first.encoder.window:
            raise ConfigError("ensemble members disagree on label set or dimensions")
    return models


def ensemble_proba(models, feats: FeatureSet) -> list:
    """Per-sentence probability rows averaged over ``models`` (inference mode)."""
    models = _as_list(models)
    per_model = [predict_proba_features(m, feats) for m in models]
    if len(models) == 1:
        return per_model[0]
    # mean written as an offset from the first member, so identical members give it back bit for bit
    out = []
    for rows in zip(*per_model):
        first = rows[0]
        out.append(first + sum(r - first for r in rows[1:]) / len(rows))
    return out


def soft_labels(feats: FeatureSet, teachers) -> SoftLabelSet:
    teachers = _as_list(teachers)
    return SoftLabelSet(tuple(ensemble_proba(teachers, feats)), len(teachers))


def vote_hard_labels(feats: FeatureSet, src, teach, trans, *, viterbi: bool = False) -> PseudoHardLabels:
    """Pseudo labels where the three models' predicted classes coincide.

    Each argument may be a single model or an ensemble; ensembles vote
    with their averaged rows.
    """
    groups = [_as_list(g) for g in (src, teach, trans)]
    if len({g[0].label_set for g in groups}) != 1:
        raise ConfigError("voters disagree on the label set")
    label_set = groups[0][0].label_set
    preds = []
    for g in groups:
        rows = ensemble_proba(g, feats)
        if viterbi:
            preds.append([viterbi_decode(r, label_set) for r in rows])
        else:
            preds.append([argmax_labels(r) for r in rows])
    out = []
    for y_src, y_teach, y_trans in zip(*preds):
        agree = (y_teach == y_src) & (y_teach == y_trans)
        out.append(np.where(agree, y_teach, -1).astype(np.int64))
    return PseudoHardLabels(tuple(out))


def _check_rows(probs, target):
    if np.shape(probs) != np.shape(target):
        raise ValidationError(
            f"student rows {np.shape(probs)} and teacher rows {np.shape(target)} differ"
        )


def soft_loss(student_rows, teacher_rows) -> float:
    """Mean over tokens of the per-class mean squared difference."""
    p, q = np.asarray(student_rows, float), np.asarray(teacher_rows, float)
    _check_rows(p, q)
    return float(((p - q) ** 2).mean(axis=1).mean())


def hard_loss(student_rows, pseudo) -> float:
    """Cross-entropy on labelled tokens, divided by the sentence length."""
    p = np.asarray(student_rows, float)
    y = np.asarray(pseudo)
    if len(y) != len(p):
        raise ValidationError("pseudo labels and rows differ in length")
    present = y >= 0
    if not present.any():
        return 0.0
    logp = np.log(np.maximum(p[present, y[present]], 1e-300))
    return float(-logp.sum() / len(p))


def distill_loss(student_rows, teacher_rows, pseudo, eta: float = DEFAULT_ETA,
                 use_soft: bool = True, use_hard: bool = True) -> float:
    """Mean over sentences of ``eta * hard + soft`` (disabled terms are 0)."""
    if not student_rows:
        raise ValidationError("empty batch")
    total = 0.0
    for i, p in enumerate(student_rows):
        if use_soft:
            total += soft_loss(p, teacher_rows[i])
        if use_hard and pseudo is not None:
            total += eta * hard_loss(p, pseudo[i])
    return total / len(student_rows)


def distill_loss_and_grad(params, batch: Batch, dropout_rate=0.0, rng=None, *,
                          eta=DEFAULT_ETA, use_soft=True, use_hard=True):
    fwd = forward(params, batch.x, dropout_rate, rng)
    loss = 0.0
    d = np.zeros_like(fwd.logits)
    if use_soft:
        val, g = mse_head(fwd, batch.soft, batch.weight)
        loss += val
        d += g
    if use_hard and eta != 0.0 and batch.hard is not None:
        val, g = hard_head(fwd, batch.hard, batch.weight)
        loss += eta * val
        d += eta * g
    return loss, backward(params, fwd, d)


def train_student(feats: FeatureSet, soft: SoftLabelSet, pseudo: PseudoHardLabels | None,
                  config: DistillConfig, *, encoder: EncoderConfig | None = None,
                  init: TaggerModel | None = None, label_set=None) -> TaggerModel:
    """Train a student on ``feats`` against cached teacher outputs.

    The student starts from a fresh random init seeded by the student
    train config, unless ``config.warm_start`` and ``init`` are given.
    """
    if len(feats) == 0:
        raise ValidationError("unlabeled corpus is empty")
    if len(soft) != len(feats):
        raise ValidationError("soft labels do not cover the unlabeled corpus")
    use_hard = config.use_hard and pseudo is not None
    if config.use_hard and pseudo is None:
        raise ConfigError("hard loss enabled but no pseudo labels supplied")
    if pseudo is not None and len(pseudo) != len(feats):
        raise ValidationError("pseudo labels do not cover the unlabeled corpus")
    n_cls = soft.rows[0].shape[1]
    if config.warm_start and init is not None:
        student = init
    else:
        if label_set is None:
            if init is None:
                raise ConfigError("a label set or reference model is required")
            label_set = init.label_set
        if encoder is None:
            encoder = init.encoder if init is not None else EncoderConfig(window=feats.window)
        student = init_model(label_set, feats.dim, encoder, config.train.seed)
    if n_cls != student.num_classes:
        raise ValidationError("soft labels and student disagree on the class count")
    # Teacher rows are fed only through batch.soft; labels on feats are never read.
    data = feats.with_targets(soft=list(soft.rows),
                              hard=list(pseudo.labels) if use_hard else None)
    data.labels = None

    def objective(params, batch, rate, rng):
        return distill_loss_and_grad(params, batch, rate, rng, eta=config.eta,
                                     use_soft=config.use_soft, use_hard=use_hard)

    return fit(student, data, config.train, objective)


SOFT_MAGIC = "UNITRANS-SOFT"
SOFT_VERSION = 1


def save_soft_labels(soft: SoftLabelSet) -> bytes:
    """Binary container: header line, JSON shape line, then float64 rows in sentence order."""
    meta = {
        "classes": int(soft.rows[0].shape[1]) if soft.rows else 0,
        "ensemble": soft.ensemble_size,
        "lengths": [int(r.shape[0]) for r in soft.rows],
    }
    head = f"{SOFT_MAGIC} {SOFT_VERSION}\n{json.dumps(meta, sort_keys=True)}\n".encode()
    body = b"".join(np.ascontiguousarray(r, dtype="<f8").tobytes() for r in soft.rows)
    return head + body


def load_soft_labels(data: bytes) -> SoftLabelSet:
    buf = io.BytesIO(data)
    head = buf.readline().decode(errors="replace").split()
    if len(head) != 2 or head[0] != SOFT_MAGIC:
        raise ParseError("not a soft-label file", 1)
    if head[1] != str(SOFT_VERSION):
        raise FormatVersionError(f"unsupported soft-label format version {head[1]}", 1)
    meta = json.loads(buf.readline())
    c = meta["classes"]
    rows = []
    for n in meta["lengths"]:
        raw = buf.read(8 * n * c)
        if len(raw) != 8 * n * c:
            raise ParseError("truncated soft-label file")
        rows.append(np.frombuffer(raw, dtype="<f8").reshape(n, c).copy())
    if buf.read(1):
        raise ParseError("trailing bytes after soft labels")
    return SoftLabelSet(tuple(rows), meta["ensemble"])
