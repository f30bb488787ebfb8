"""Entity-level (exact span match) precision, recall and F1."""

from __future__ import annotations

import io
import math
import statistics
from collections import Counter
from dataclasses import dataclass, field

from .corpus import LabelSet, extract_spans
from .errors import BIOValidationError, ValidationError


@dataclass(frozen=True)
class Counts:
    gold: int = 0
    predicted: int = 0
    correct: int = 0

    def __add__(self, other):
        return Counts(self.gold + other.gold, self.predicted + other.predicted,
                      self.correct + other.correct)

    @property
    def precision(self) -> float:
        return self.correct / self.predicted if self.predicted else 0.0

    @property
    def recall(self) -> float:
        return self.correct / self.gold if self.gold else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass(frozen=True)
class EvalReport:
    counts: Counts
    per_type: dict = field(default_factory=dict)
    runs: tuple = ()

    @property
    def precision(self) -> float:
        return self.counts.precision

    @property
    def recall(self) -> float:
        return self.counts.recall

    @property
    def f1(self) -> float:
        return self.counts.f1

    @property
    def mean_f1(self) -> float:
        return statistics.fmean(self.runs) if self.runs else self.f1

    @property
    def std_f1(self) -> float:
        return statistics.stdev(self.runs) if len(self.runs) > 1 else 0.0

    @property
    def single_run(self) -> bool:
        return len(self.runs) <= 1


def evaluate(gold, predicted, label_set: LabelSet | None = None) -> EvalReport:
    """Micro-averaged exact-match scores of ``predicted`` id sequences against ``gold``."""
    label_set = label_set or LabelSet()
    gold = list(gold)
    predicted = list(predicted)
    if len(gold) != len(predicted):
        raise ValidationError(f"{len(gold)} gold sentences but {len(predicted)} predictions")
    g_types, p_types, c_types = Counter(), Counter(), Counter()
    for k, (sent, pred) in enumerate(zip(gold, predicted)):
        pred = [int(y) for y in pred]
        if len(pred) != len(sent.labels):
            raise ValidationError(
                f"sentence {k}: {len(sent.labels)} gold labels but {len(pred)} predicted"
            )
        try:
            p_spans = set(extract_spans(pred, label_set))
        except BIOValidationError as exc:
            raise BIOValidationError(f"invalid prediction: {exc}", sentence=k) from None
        g_spans = set(extract_spans(sent.labels, label_set))
        g_types.update(s.type for s in g_spans)
        p_types.update(s.type for s in p_spans)
        c_types.update(s.type for s in g_spans & p_spans)
    per_type = {
        t: Counts(g_types[t], p_types[t], c_types[t])
        for t in label_set.entity_types
    }
    total = sum(per_type.values(), Counts())
    return EvalReport(total, per_type, (total.f1,))


def aggregate(reports) -> EvalReport:
    """Pool counts across runs and keep each run's F1 for mean/std."""
    reports = list(reports)
    if not reports:
        raise ValidationError("aggregate needs at least one report")
    counts = sum((r.counts for r in reports), Counts())
    types = reports[0].per_type.keys()
    per_type = {t: sum((r.per_type.get(t, Counts()) for r in reports), Counts()) for t in types}
    runs = tuple(f for r in reports for f in r.runs)
    return EvalReport(counts, per_type, runs)


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.6f}"


def format_keyvalue(report: EvalReport, prefix: str = "") -> str:
    """Machine-readable ``key=value`` lines."""
    c = report.counts
    items = [
        ("precision", _fmt(report.precision)),
        ("recall", _fmt(report.recall)),
        ("f1", _fmt(report.f1)),
        ("gold", c.gold),
        ("predicted", c.predicted),
        ("correct", c.correct),
        ("runs", len(report.runs)),
        ("f1_mean", _fmt(report.mean_f1)),
        ("f1_std", _fmt(report.std_f1)),
        ("f1_runs", ",".join(_fmt(f) for f in report.runs)),
    ]
    for t, tc in report.per_type.items():
        items.append((f"{t}.f1", _fmt(tc.f1)))
    return "".join(f"{prefix}{k}={v}\n" for k, v in items)


def format_table(rows: dict) -> str:
    """Human-readable table; ``rows`` maps a name to its report."""
    out = io.StringIO()
    width = max([len("variant")] + [len(k) for k in rows])
    out.write(f"{'variant':<{width}}  {'P':>7} {'R':>7} {'F1':>7}  {'mean F1 (std)':>18}  runs\n")
    for name, r in rows.items():
        out.write(
            f"{name:<{width}}  {100 * r.precision:7.2f} {100 * r.recall:7.2f} {100 * r.f1:7.2f}"
            f"  {100 * r.mean_f1:9.2f} ({100 * r.std_f1:5.2f})  {len(r.runs)}\n"
        )
    return out.getvalue()
