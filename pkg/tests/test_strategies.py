import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cofnlu.dataset import Example, StepAnnotations, Vocab
from cofnlu.logicform import LogicForm, SlotEntry
from cofnlu.strategies import (
    Aggregator,
    AggregatorKind,
    MissingAnnotations,
    Strategy,
    StrategyError,
    TieBreak,
    aggregate,
    aggregate_with_index,
    build_prompt,
    default_aggregator,
    normalize_completion,
)

PLAN_SENTENCE = (
    "Let's first understand the problem and devise a plan to solve the problem. "
    "Then, let's carry out the plan and solve the problem step by step."
)


def make_vocab():
    return Vocab(
        intents=frozenset({"GET_EVENT", "CREATE_REMINDER"}),
        slot_types=frozenset({"CATEGORY_EVENT", "DATE_TIME"}),
    )


def make_example():
    return Example(
        id="e1",
        utterance="any music festivals this weekend",
        domain="events",
        gold=LogicForm("GET_EVENT", (SlotEntry("CATEGORY_EVENT", "music festivals"),)),
    )


def make_demo(annotated=True):
    annotations = None
    if annotated:
        annotations = StepAnnotations(
            intent="CREATE_REMINDER",
            slot_values=("message mike",),
            slot_pairs=(("message mike", "TODO"),),
            logic_form="[IN:CREATE_REMINDER [SL:TODO: message mike]]",
        )
    return Example(
        id="d1",
        utterance="remind me to message mike",
        domain="reminders",
        gold=LogicForm("CREATE_REMINDER", (SlotEntry("TODO", "message mike"),)),
        step_annotations=annotations,
    )


class TestBuildPrompt:
    def test_plan_and_solve_contains_trigger_sentence(self):
        prompt = build_prompt(Strategy.PLAN_AND_SOLVE, make_example(), make_vocab())
        assert PLAN_SENTENCE in prompt

    def test_direct_zero_shot_has_no_demo_block(self):
        prompt = build_prompt(Strategy.DIRECT, make_example(), make_vocab())
        assert "Example" not in prompt
        assert "any music festivals this weekend" in prompt
        assert "Domain: events" in prompt
        assert "GET_EVENT" in prompt and "CATEGORY_EVENT" in prompt

    def test_cot_few_shot_has_k_demo_blocks(self):
        demos = [make_demo(), make_demo()]
        prompt = build_prompt(Strategy.COT, make_example(), make_vocab(), demonstrations=demos)
        assert prompt.count("Example from domain") == 2
        assert "Let's think step by step" in prompt
        assert "message mike -> TODO" in prompt

    def test_least_to_most_framing(self):
        prompt = build_prompt(Strategy.LEAST_TO_MOST, make_example(), make_vocab(), demonstrations=[make_demo()])
        assert "sub-problem" in prompt.lower()
        assert "Sub-problem 1" in prompt

    def test_cot_demo_without_annotations_rejected(self):
        with pytest.raises(MissingAnnotations):
            build_prompt(Strategy.COT, make_example(), make_vocab(), demonstrations=[make_demo(annotated=False)])

    def test_direct_demo_needs_only_gold(self):
        prompt = build_prompt(Strategy.DIRECT, make_example(), make_vocab(), demonstrations=[make_demo(annotated=False)])
        assert "[IN:CREATE_REMINDER [SL:TODO: message mike]]" in prompt

    def test_plan_and_solve_rejects_demos(self):
        with pytest.raises(StrategyError):
            build_prompt(Strategy.PLAN_AND_SOLVE, make_example(), make_vocab(), demonstrations=[make_demo()])

    def test_domain_can_be_suppressed(self):
        prompt = build_prompt(Strategy.DIRECT, make_example(), make_vocab(), include_domain=False)
        assert "Domain:" not in prompt

    def test_cof_is_not_single_shot(self):
        with pytest.raises(StrategyError):
            build_prompt(Strategy.COF_COT, make_example(), make_vocab())


class TestNormalize:
    def test_parseable_canonicalized(self):
        a = normalize_completion("The answer:  [IN:X   [SL:A:  b  c]] thanks")
        b = normalize_completion("[IN:X [SL:A: b c]]")
        assert a == b == "[IN:X [SL:A: b c]]"

    def test_unparseable_trimmed(self):
        assert normalize_completion("  no   form here ") == "no form here"


class TestAggregate:
    def test_majority_picks_most_frequent(self):
        completions = ["[IN:B]"] * 4 + ["[IN:A]"] * 6
        agg = Aggregator(kind=AggregatorKind.MAJORITY)
        assert aggregate(completions, agg) == "[IN:A]"

    def test_majority_counts_whitespace_variants_together(self):
        completions = ["[IN:A]", "[ IN:A ]", "[IN:B]"]
        agg = Aggregator(kind=AggregatorKind.MAJORITY)
        index, reason = aggregate_with_index(completions, agg)
        assert index == 0
        assert "count=2/3" in reason

    def test_single_completion_under_every_aggregator(self):
        for kind in AggregatorKind:
            agg = Aggregator(kind=kind)
            assert aggregate(["only"], agg) == "only"

    def test_tie_lowest_index(self):
        completions = ["[IN:B]", "[IN:A]", "[IN:A]", "[IN:B]"]
        agg = Aggregator(kind=AggregatorKind.MAJORITY, tie_break=TieBreak.LOWEST_INDEX)
        assert aggregate(completions, agg) == "[IN:B]"

    def test_tie_lexicographic(self):
        completions = ["[IN:B]", "[IN:A]", "[IN:A]", "[IN:B]"]
        agg = Aggregator(kind=AggregatorKind.MAJORITY, tie_break=TieBreak.LEXICOGRAPHIC)
        assert aggregate(completions, agg) == "[IN:A]"

    def test_first(self):
        agg = Aggregator(kind=AggregatorKind.FIRST)
        assert aggregate(["x", "y", "y"], agg) == "x"

    def test_complex_majority_restricts_to_longest_half(self):
        # Short completions form the overall majority, but only the longest
        # half may vote.
        completions = ["[IN:A]", "[IN:A]", "[IN:A]", "[IN:LONGER_ONE [SL:T: v]]", "[IN:LONGER_ONE [SL:T: v]]"]
        agg = Aggregator(kind=AggregatorKind.COMPLEX_MAJORITY, complex_fraction=0.5)
        index, reason = aggregate_with_index(completions, agg)
        assert completions[index] == "[IN:LONGER_ONE [SL:T: v]]"
        assert "kept=3/5" in reason

    def test_defaults_per_strategy(self):
        assert default_aggregator(Strategy.SC_COT).kind is AggregatorKind.MAJORITY
        assert default_aggregator(Strategy.COMPLEX_COT).kind is AggregatorKind.COMPLEX_MAJORITY
        assert default_aggregator(Strategy.COF_COT).kind is AggregatorKind.MAJORITY
        assert default_aggregator(Strategy.DIRECT).kind is AggregatorKind.FIRST

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate([], Aggregator())


_completion_st = st.lists(
    st.sampled_from(["[IN:A]", "[IN:B]", "[ IN:A ]", "[IN:C [SL:T: v]]", "noise text", "  noise   text "]),
    min_size=1,
    max_size=12,
)


@given(_completion_st)
@settings(max_examples=300)
def test_duplication_invariance(completions):
    agg = Aggregator(kind=AggregatorKind.MAJORITY)
    index, _ = aggregate_with_index(completions, agg)
    winner = completions[index]
    extended = list(completions) + [winner]
    index2, _ = aggregate_with_index(extended, agg)
    assert normalize_completion(extended[index2]) == normalize_completion(winner)


@given(_completion_st)
@settings(max_examples=300)
def test_whitespace_invariance_over_parseable_forms(completions):
    agg = Aggregator(kind=AggregatorKind.MAJORITY)
    index, _ = aggregate_with_index(completions, agg)

    def respace(c):
        if not c.startswith("["):
            return c
        return c.replace(" ", "  ").replace("[IN:", "[ IN:")

    jittered = [respace(c) for c in completions]
    index2, _ = aggregate_with_index(jittered, agg)
    assert normalize_completion(jittered[index2]) == normalize_completion(completions[index])


def test_complex_majority_always_selects_from_longest_half():
    rng = random.Random(8)
    pool = ["[IN:A]", "[IN:BC]", "[IN:LONG_LABEL [SL:T: value here]]", "short", "a much longer noise completion"]
    agg = Aggregator(kind=AggregatorKind.COMPLEX_MAJORITY)
    for _ in range(300):
        completions = [rng.choice(pool) for _ in range(rng.randint(1, 9))]
        index, _ = aggregate_with_index(completions, agg)
        import math

        keep = math.ceil(len(completions) / 2)
        threshold = sorted((len(c) for c in completions), reverse=True)[keep - 1]
        assert len(completions[index]) >= threshold
