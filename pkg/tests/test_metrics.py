import random

import pytest

from cofnlu.logicform import LogicForm, SlotEntry
from cofnlu.metrics import (
    EmptyInput,
    LengthMismatch,
    MetricsReport,
    aggregate_seeds,
    compute_report,
    exact_match,
    frame_accuracy,
    intent_accuracy,
    slot_f1,
)


def lf(intent, *pairs):
    return LogicForm(intent, tuple(SlotEntry(t, v) for t, v in pairs))


class TestIntentAccuracy:
    def test_identical(self):
        golds = [lf("A"), lf("B")]
        assert intent_accuracy(golds, golds) == 1.0

    def test_all_absent(self):
        golds = [lf("A"), lf("B")]
        assert intent_accuracy([None, None], golds) == 0.0

    def test_two_of_three(self):
        golds = [lf("A"), lf("B"), lf("C")]
        preds = [lf("A"), lf("B"), lf("X")]
        assert intent_accuracy(preds, golds) == pytest.approx(2 / 3)

    def test_case_and_prefix_insensitive(self):
        assert intent_accuracy([lf("IN:get_event")], [lf("GET_EVENT")]) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            intent_accuracy([lf("A")], [lf("A"), lf("B")])


class TestSlotF1:
    def test_identical(self):
        golds = [lf("A", ("T", "x"), ("U", "y"))]
        assert slot_f1(golds, golds) == 1.0

    def test_wrong_type_counts_both_ways(self):
        golds = [lf("A", ("T", "x"))]
        preds = [lf("A", ("U", "x"))]
        # one FP and one FN, no TP
        assert slot_f1(preds, golds) == 0.0

    def test_partial(self):
        golds = [lf("A", ("T", "x"), ("U", "y"))]
        preds = [lf("A", ("T", "x"))]
        assert slot_f1(preds, golds) == pytest.approx(2 / 3)

    def test_value_normalization(self):
        golds = [lf("A", ("T", "At 7PM  Tonight"))]
        preds = [lf("A", ("T", "at 7pm tonight"))]
        assert slot_f1(preds, golds) == 1.0

    def test_no_slots_anywhere_is_perfect(self):
        assert slot_f1([lf("A")], [lf("A")]) == 1.0


class TestFrameAndExact:
    def test_same_types_different_values_frame_correct(self):
        golds = [lf("A", ("T", "x"))]
        preds = [lf("A", ("T", "zzz"))]
        assert frame_accuracy(preds, golds) == 1.0
        assert exact_match(preds, golds) == 0.0

    def test_order_insensitive(self):
        golds = [lf("A", ("T", "x"), ("U", "y"))]
        preds = [lf("A", ("U", "y"), ("T", "x"))]
        assert frame_accuracy(preds, golds) == 1.0
        assert exact_match(preds, golds) == 1.0

    def test_order_sensitive_oracle_differs(self):
        # Documents the multiset rule: a sequence-equality scorer would
        # reject the swapped prediction that our frame metric accepts.
        golds = [lf("A", ("T", "x"), ("U", "y"))]
        preds = [lf("A", ("U", "y"), ("T", "x"))]
        order_sensitive = [
            p is not None
            and p.intent == g.intent
            and [e.slot_type for e in p.slots] == [e.slot_type for e in g.slots]
            for p, g in zip(preds, golds)
        ]
        assert frame_accuracy(preds, golds) == 1.0
        assert sum(order_sensitive) / len(order_sensitive) == 0.0

    def test_duplicate_type_multiplicity_matters(self):
        golds = [lf("A", ("T", "x"), ("T", "y"))]
        preds = [lf("A", ("T", "x"))]
        assert frame_accuracy(preds, golds) == 0.0

    def test_one_slot_value_off_by_a_word(self):
        golds = [lf("A", ("T", "at 7pm tonight"))]
        preds = [lf("A", ("T", "at 7pm"))]
        assert exact_match(preds, golds) == 0.0


INTENTS = ["GET_A", "GET_B", "SET_C"]
TYPES = ["T1", "T2", "T3"]
VALUES = ["x", "y", "zz", "x y"]


def random_corpus(rng, n_max=20):
    n = rng.randint(1, n_max)
    golds, preds = [], []
    for _ in range(n):
        golds.append(
            lf(rng.choice(INTENTS), *[(rng.choice(TYPES), rng.choice(VALUES)) for _ in range(rng.randint(0, 4))])
        )
        if rng.random() < 0.1:
            preds.append(None)
        else:
            preds.append(
                lf(rng.choice(INTENTS), *[(rng.choice(TYPES), rng.choice(VALUES)) for _ in range(rng.randint(0, 4))])
            )
    return preds, golds


def oracle_counts(pred, gold):
    """Reference TP/FP/FN by greedy pair removal instead of Counter math."""
    gold_pairs = [(t.casefold(), v.casefold()) for t, v in (e.as_pair() for e in gold.slots)]
    pred_pairs = [] if pred is None else [(t.casefold(), v.casefold()) for t, v in (e.as_pair() for e in pred.slots)]
    remaining = list(gold_pairs)
    tp = 0
    for pair in pred_pairs:
        if pair in remaining:
            remaining.remove(pair)
            tp += 1
    return tp, len(pred_pairs) - tp, len(remaining)


def oracle_slot_f1(preds, golds):
    tp = fp = fn = 0
    for p, g in zip(preds, golds):
        a, b, c = oracle_counts(p, g)
        tp, fp, fn = tp + a, fp + b, fn + c
    return 1.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)


def oracle_frame(preds, golds):
    hits = 0
    for p, g in zip(preds, golds):
        if p is None or p.intent.casefold() != g.intent.casefold():
            continue
        if sorted(e.slot_type.casefold() for e in p.slots) == sorted(e.slot_type.casefold() for e in g.slots):
            hits += 1
    return hits / len(golds)


def oracle_exact(preds, golds):
    hits = 0
    for p, g in zip(preds, golds):
        if p is None or p.intent.casefold() != g.intent.casefold():
            continue
        tp, fp, fn = oracle_counts(p, g)
        if fp == 0 and fn == 0:
            hits += 1
    return hits / len(golds)


def test_oracle_equivalence_on_random_corpora():
    rng = random.Random(424242)
    for _ in range(300):
        preds, golds = random_corpus(rng)
        assert slot_f1(preds, golds) == pytest.approx(oracle_slot_f1(preds, golds), abs=1e-12)
        assert frame_accuracy(preds, golds) == pytest.approx(oracle_frame(preds, golds), abs=1e-12)
        assert exact_match(preds, golds) == pytest.approx(oracle_exact(preds, golds), abs=1e-12)
        assert exact_match(preds, golds) <= frame_accuracy(preds, golds) + 1e-12


def test_permutation_equivariance():
    rng = random.Random(5)
    preds, golds = random_corpus(rng, n_max=12)
    before = compute_report(preds, golds)
    order = list(range(len(golds)))
    rng.shuffle(order)
    after = compute_report([preds[i] for i in order], [golds[i] for i in order])
    assert before == after


def test_unparseable_scores_zero_everywhere():
    golds = [lf("A", ("T", "x"))]
    report = compute_report([None], golds)
    assert report.intent_accuracy == 0.0
    assert report.slot_f1 == 0.0
    assert report.frame_accuracy == 0.0
    assert report.exact_match == 0.0


def test_empty_corpus_rejected():
    with pytest.raises(EmptyInput):
        compute_report([], [])


class TestAggregateSeeds:
    def r(self, v, n=200):
        return MetricsReport(v, v, v, v, n)

    def test_single_report_std_zero(self):
        agg = aggregate_seeds([self.r(0.5)])
        assert agg.mean == self.r(0.5)
        assert agg.std == MetricsReport(0, 0, 0, 0, 0)

    def test_two_seed_closed_form(self):
        agg = aggregate_seeds([self.r(0.5), self.r(0.7)])
        assert agg.mean.intent_accuracy == pytest.approx(0.6, abs=1e-15)
        assert agg.std.intent_accuracy == pytest.approx(0.1, abs=1e-15)

    def test_three_equal_reports(self):
        agg = aggregate_seeds([self.r(0.25)] * 3)
        assert agg.std == MetricsReport(0, 0, 0, 0, 0)

    def test_empty_rejected(self):
        with pytest.raises(EmptyInput):
            aggregate_seeds([])

    def test_report_roundtrips_via_dict(self):
        report = MetricsReport(0.1, 0.2, 0.3, 0.05, 200)
        assert MetricsReport.from_dict(report.to_dict()) == report
