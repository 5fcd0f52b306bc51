"""Single-shot baseline prompt strategies and multi-sample aggregation.

The baselines all ask for the final logic form in one completion; they
differ in elicitation (direct, step-by-step, decompose-then-solve,
plan-then-solve) and in how an answer is selected from multiple sampled
completions. The aggregation machinery is shared with the multi-step
pipeline, which applies it per step.

Voting normalizes completions first so that formatting noise does not split
vote classes: a completion whose embedded bracketed expression parses as a
logic form votes as its canonical serialization, anything else votes as its
whitespace-trimmed text.
"""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

from .dataset import Example, Vocab
from .logicform import LogicFormError, find_bracketed_expression, parse_logic_form
from .templating import load_template, render


class StrategyError(ValueError):
    pass


class MissingAnnotations(StrategyError):
    """A demonstration lacks the per-step annotations the strategy needs."""


class Strategy(enum.Enum):
    DIRECT = "direct"
    COT = "cot"
    SC_COT = "sc_cot"
    COMPLEX_COT = "complex_cot"
    LEAST_TO_MOST = "least_to_most"
    PLAN_AND_SOLVE = "plan_and_solve"
    COF_COT = "cof_cot"


SINGLE_SHOT_STRATEGIES = (
    Strategy.DIRECT,
    Strategy.COT,
    Strategy.SC_COT,
    Strategy.COMPLEX_COT,
    Strategy.LEAST_TO_MOST,
    Strategy.PLAN_AND_SOLVE,
)

_TEMPLATE_BY_STRATEGY = {
    Strategy.DIRECT: "direct",
    Strategy.COT: "cot",
    Strategy.SC_COT: "cot",
    Strategy.COMPLEX_COT: "cot",
    Strategy.LEAST_TO_MOST: "least_to_most",
    Strategy.PLAN_AND_SOLVE: "plan_and_solve",
}


class AggregatorKind(enum.Enum):
    FIRST = "first"
    MAJORITY = "majority"
    COMPLEX_MAJORITY = "complex_majority"


class TieBreak(enum.Enum):
    LOWEST_INDEX = "lowest_index"
    LEXICOGRAPHIC = "lexicographic"


@dataclass(frozen=True)
class Aggregator:
    kind: AggregatorKind = AggregatorKind.MAJORITY
    tie_break: TieBreak = TieBreak.LOWEST_INDEX
    # Fraction of completions (by character length, longest first) that the
    # complexity-restricted vote keeps.
    complex_fraction: float = 0.5

    def __post_init__(self) -> None:
        if not 0 < self.complex_fraction <= 1:
            raise ValueError("complex_fraction must be in (0, 1]")


def default_aggregator(strategy: Strategy) -> Aggregator:
    if strategy is Strategy.COMPLEX_COT:
        return Aggregator(kind=AggregatorKind.COMPLEX_MAJORITY)
    if strategy in (Strategy.SC_COT, Strategy.COF_COT):
        return Aggregator(kind=AggregatorKind.MAJORITY)
    return Aggregator(kind=AggregatorKind.FIRST)


def normalize_completion(text: str) -> str:
    """Canonical logic form when one can be parsed out, else trimmed text."""
    candidate = find_bracketed_expression(text)
    if candidate is not None:
        try:
            return parse_logic_form(candidate).serialize()
        except LogicFormError:
            pass
    return " ".join(text.split())


def aggregate_with_index(
    completions: Sequence[str],
    agg: Aggregator,
    normalizer: Callable[[str], str] = normalize_completion,
) -> tuple[int, str]:
    """Pick a completion; returns (index, why) for trace records."""
    if not completions:
        raise ValueError("no completions to aggregate")
    if agg.kind is AggregatorKind.FIRST or len(completions) == 1:
        return 0, "first"
    if agg.kind is AggregatorKind.COMPLEX_MAJORITY:
        keep_n = math.ceil(len(completions) * agg.complex_fraction)
        kept = sorted(range(len(completions)), key=lambda i: (-len(completions[i]), i))[:keep_n]
        kept.sort()
        index, reason = _majority(completions, kept, agg.tie_break, normalizer)
        return index, f"complex_majority(kept={keep_n}/{len(completions)}, {reason})"
    index, reason = _majority(completions, list(range(len(completions))), agg.tie_break, normalizer)
    return index, f"majority({reason})"


def _majority(
    completions: Sequence[str],
    indices: list[int],
    tie_break: TieBreak,
    normalizer: Callable[[str], str],
) -> tuple[int, str]:
    norms = {i: normalizer(completions[i]) for i in indices}
    counts = Counter(norms.values())
    top = max(counts.values())
    winners = [key for key, c in counts.items() if c == top]
    if tie_break is TieBreak.LEXICOGRAPHIC:
        winner_key = min(winners)
    else:
        first_seen = {}
        for i in indices:
            first_seen.setdefault(norms[i], i)
        winner_key = min(winners, key=lambda key: first_seen[key])
    for i in indices:
        if norms[i] == winner_key:
            return i, f"count={top}/{len(indices)}"
    raise AssertionError("winner class vanished")


def aggregate(
    completions: Sequence[str],
    agg: Aggregator,
    normalizer: Callable[[str], str] = normalize_completion,
) -> str:
    """The selected completion string itself."""
    index, _ = aggregate_with_index(completions, agg, normalizer)
    return completions[index]


def _require(annotations, field: str, example_id: str):
    value = getattr(annotations, field, None) if annotations else None
    if value is None:
        raise MissingAnnotations(f"demonstration {example_id} lacks step annotation {field!r}")
    return value


def _demo_logic_form(demo: Example) -> str:
    if demo.step_annotations is not None and demo.step_annotations.logic_form is not None:
        return demo.step_annotations.logic_form
    return demo.gold.serialize()


def render_demonstrations(strategy: Strategy, demonstrations: Sequence[Example], include_domain: bool = True) -> str | None:
    """The demonstration block for a single-shot prompt, or None for zero-shot."""
    if not demonstrations:
        return None
    if strategy is Strategy.PLAN_AND_SOLVE:
        raise StrategyError("plan_and_solve is a zero-shot strategy; it takes no demonstrations")
    blocks = []
    for demo in demonstrations:
        lines = [f"Example from domain {demo.domain}:" if include_domain else "Example:"]
        lines.append(f"Utterance: {demo.utterance}")
        if strategy is Strategy.DIRECT:
            lines.append(f"Logic Form: {_demo_logic_form(demo)}")
        elif strategy in (Strategy.COT, Strategy.SC_COT, Strategy.COMPLEX_COT):
            ann = demo.step_annotations
            intent = _require(ann, "intent", demo.id)
            pairs = _require(ann, "slot_pairs", demo.id)
            values = ann.slot_values if ann.slot_values is not None else tuple(v for v, _ in pairs)
            lines.append(f"The intent of the utterance is {intent}.")
            lines.append(f"The slot values are: {', '.join(values) if values else 'none'}.")
            pair_text = "; ".join(f"{v} -> {t}" for v, t in pairs) if pairs else "none"
            lines.append(f"The slot types of the values are: {pair_text}.")
            lines.append(f"Logic Form: {_demo_logic_form(demo)}")
        elif strategy is Strategy.LEAST_TO_MOST:
            ann = demo.step_annotations
            intent = _require(ann, "intent", demo.id)
            pairs = _require(ann, "slot_pairs", demo.id)
            values = ann.slot_values if ann.slot_values is not None else tuple(v for v, _ in pairs)
            lines.append(f"Sub-problem 1, the intent: {intent}")
            lines.append(f"Sub-problem 2, the slot values: {', '.join(values) if values else 'none'}")
            pair_text = "; ".join(f"{v} -> {t}" for v, t in pairs) if pairs else "none"
            lines.append(f"Sub-problem 3, the slot types: {pair_text}")
            lines.append(f"Combined Logic Form: {_demo_logic_form(demo)}")
        else:
            raise StrategyError(f"{strategy.value} has no demonstration format")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def build_prompt(
    strategy: Strategy,
    example: Example,
    vocab: Vocab,
    demonstrations: Sequence[Example] = (),
    include_domain: bool = True,
    vocab_domain: str | None = None,
    template_dir=None,
) -> str:
    """Render the full prompt for a single-shot strategy."""
    if strategy not in SINGLE_SHOT_STRATEGIES:
        raise StrategyError(f"{strategy.value} is not a single-shot strategy")
    template = load_template(_TEMPLATE_BY_STRATEGY[strategy], template_dir)
    values = {
        "domain": example.domain if include_domain else None,
        "utterance": example.utterance,
        "intent_vocab": ", ".join(vocab.intent_list(vocab_domain)),
        "slot_vocab": ", ".join(vocab.slot_type_list(vocab_domain)),
        "demonstrations": render_demonstrations(strategy, demonstrations, include_domain),
    }
    return render(template, values)
