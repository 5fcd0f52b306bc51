"""Corpus metrics over predicted vs gold logic forms, plus seed aggregation.

Four metrics cover the task granularities: intent accuracy (sentence level),
slot F1 (token level, micro-averaged over typed slot values), and frame
accuracy / exact match (the connection between the two). A prediction may be
None when the model output could not be parsed; such examples score zero on
every metric instead of being dropped, which would inflate scores.

Comparison rules:
  * intent and slot type labels compare case-insensitively, with optional
    "IN:" / "SL:" prefixes stripped;
  * slot values compare lowercased with whitespace runs collapsed;
  * frame and exact match treat slots as multisets (order-insensitive),
    since nothing distinguishes semantically identical orderings.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .logicform import LogicForm

METRIC_FIELDS = ("intent_accuracy", "slot_f1", "frame_accuracy", "exact_match")


class MetricsError(ValueError):
    pass


class LengthMismatch(MetricsError):
    pass


class EmptyInput(MetricsError):
    pass


@dataclass(frozen=True)
class MetricsReport:
    """The four corpus metrics, all fractions in [0, 1].

    n_examples is an integer count for a single scored corpus and a (possibly
    fractional) field-wise mean inside aggregates.
    """

    intent_accuracy: float
    slot_f1: float
    frame_accuracy: float
    exact_match: float
    n_examples: float

    def to_dict(self) -> dict:
        return {
            "intent_accuracy": self.intent_accuracy,
            "slot_f1": self.slot_f1,
            "frame_accuracy": self.frame_accuracy,
            "exact_match": self.exact_match,
            "n_examples": self.n_examples,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**{k: d[k] for k in (*METRIC_FIELDS, "n_examples")})


@dataclass(frozen=True)
class SeedAggregate:
    """Per-seed reports with their field-wise mean and population std."""

    per_seed: tuple[MetricsReport, ...]
    mean: MetricsReport
    std: MetricsReport


def normalize_intent(label: str) -> str:
    label = label.strip()
    if label[:3].upper() == "IN:":
        label = label[3:]
    return label.strip().casefold()


def normalize_slot_type(label: str) -> str:
    label = label.strip()
    if label[:3].upper() == "SL:":
        label = label[3:]
    return label.strip().casefold()


def normalize_slot_value(value: str) -> str:
    return " ".join(value.split()).casefold()


def _pair_multiset(lf: LogicForm) -> Counter:
    return Counter((normalize_slot_type(e.slot_type), normalize_slot_value(e.slot_value)) for e in lf.slots)


def _type_multiset(lf: LogicForm) -> Counter:
    return Counter(normalize_slot_type(e.slot_type) for e in lf.slots)


def _check_lengths(preds: Sequence, golds: Sequence) -> None:
    if len(preds) != len(golds):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(golds)} golds")
    if not golds:
        raise EmptyInput("cannot score an empty corpus")


def intent_accuracy(preds: Sequence[LogicForm | None], golds: Sequence[LogicForm]) -> float:
    """Fraction of examples whose predicted intent equals the gold intent."""
    _check_lengths(preds, golds)
    hits = sum(
        1 for p, g in zip(preds, golds)
        if p is not None and normalize_intent(p.intent) == normalize_intent(g.intent)
    )
    return hits / len(golds)


def slot_f1(preds: Sequence[LogicForm | None], golds: Sequence[LogicForm]) -> float:
    """Micro-averaged F1 over (slot type, normalized value) pairs.

    Per example, true positives are the multiset intersection of predicted
    and gold pairs; leftovers on either side are false positives / negatives.
    F1 = 2TP / (2TP + FP + FN), defined as 1.0 when no slots exist anywhere.
    """
    _check_lengths(preds, golds)
    tp = fp = fn = 0
    for p, g in zip(preds, golds):
        gold_pairs = _pair_multiset(g)
        pred_pairs = _pair_multiset(p) if p is not None else Counter()
        inter = pred_pairs & gold_pairs
        n_inter = sum(inter.values())
        tp += n_inter
        fp += sum(pred_pairs.values()) - n_inter
        fn += sum(gold_pairs.values()) - n_inter
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2 * tp / denom


def frame_accuracy(preds: Sequence[LogicForm | None], golds: Sequence[LogicForm]) -> float:
    """Fraction where the intent and the multiset of slot types both match."""
    _check_lengths(preds, golds)
    hits = sum(
        1 for p, g in zip(preds, golds)
        if p is not None
        and normalize_intent(p.intent) == normalize_intent(g.intent)
        and _type_multiset(p) == _type_multiset(g)
    )
    return hits / len(golds)


def exact_match(preds: Sequence[LogicForm | None], golds: Sequence[LogicForm]) -> float:
    """Fraction where the intent and the multiset of (type, value) pairs match."""
    _check_lengths(preds, golds)
    hits = sum(
        1 for p, g in zip(preds, golds)
        if p is not None
        and normalize_intent(p.intent) == normalize_intent(g.intent)
        and _pair_multiset(p) == _pair_multiset(g)
    )
    return hits / len(golds)


def compute_report(preds: Sequence[LogicForm | None], golds: Sequence[LogicForm]) -> MetricsReport:
    """All four metrics over one corpus."""
    return MetricsReport(
        intent_accuracy=intent_accuracy(preds, golds),
        slot_f1=slot_f1(preds, golds),
        frame_accuracy=frame_accuracy(preds, golds),
        exact_match=exact_match(preds, golds),
        n_examples=len(golds),
    )


def _mean(values: Iterable[float]) -> float:
    values = list(values)
    return sum(values) / len(values)


def _population_std(values: Iterable[float]) -> float:
    values = list(values)
    m = _mean(values)
    return math.sqrt(sum((v - m) ** 2 for v in values) / len(values))


def aggregate_seeds(reports: Sequence[MetricsReport]) -> SeedAggregate:
    """Field-wise mean and population standard deviation across seed runs."""
    if not reports:
        raise EmptyInput("no reports to aggregate")
    fields = (*METRIC_FIELDS, "n_examples")
    mean = MetricsReport(**{f: _mean(getattr(r, f) for r in reports) for f in fields})
    std = MetricsReport(**{f: _population_std(getattr(r, f) for r in reports) for f in fields})
    return SeedAggregate(per_seed=tuple(reports), mean=mean, std=std)
