"""The five-step coarse-to-fine prompting pipeline.

The steps run over one utterance in a configurable order:

  1. GEN_STRUCTURE    generate a structured representation (AMR by default)
  2. GEN_INTENT       predict the intent label
  3. GEN_SLOT_VALUES  list the slot values present in the utterance
  4. GEN_SLOT_PAIRS   assign a slot type to each value
  5. GEN_LOGIC_FORM   aggregate intent and pairs into the final logic form

Each step's prompt is conditioned on the outputs of selected earlier steps
(and, when enabled, on the utterance's domain name); the conditioning map is
part of the plan, and ablation plans reorder steps, remove steps, or drop
the domain. Removing or reordering steps prunes conditioning edges so that
a prompt only ever references outputs that already exist.

The final step defaults to deterministic assembly of the predicted intent
and slot pairs; a model call composes the form instead when the plan asks
for it or when assembly inputs are unavailable (for instance after the
intent step was ablated away).

A full trace is kept per example: the exact prompt sent, all sampled
completions, which one was selected and why, the parsed value, and the
structure validation report. Structure validation failure is deliberately
not fatal; the raw text still conditions later steps.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .amr import StructureKind, ValidationReport, validate_structure
from .backend import Backend, BackendError, CompletionRequest
from .dataset import Example, Vocab
from .logicform import LogicForm, LogicFormError, SlotEntry, find_bracketed_expression, parse_logic_form
from .strategies import Aggregator, MissingAnnotations, aggregate_with_index, normalize_completion
from .templating import load_template, render


class PipelineError(Exception):
    pass


class InvalidAblation(PipelineError):
    pass


class NoExtractableAnswer(PipelineError):
    """The completion contains nothing the step parser can use."""

    def __init__(self, step: "StepId", message: str):
        super().__init__(f"{step.name}: {message}")
        self.step = step


class StepId(enum.Enum):
    GEN_STRUCTURE = "structure"
    GEN_INTENT = "intent"
    GEN_SLOT_VALUES = "slot_values"
    GEN_SLOT_PAIRS = "slot_pairs"
    GEN_LOGIC_FORM = "logic_form"


COF_ORDER = (
    StepId.GEN_STRUCTURE,
    StepId.GEN_INTENT,
    StepId.GEN_SLOT_VALUES,
    StepId.GEN_SLOT_PAIRS,
    StepId.GEN_LOGIC_FORM,
)
# Step numbering follows COF_ORDER (structure=1 ... logic_form=5).
RANDOM_ORDER = (
    StepId.GEN_SLOT_VALUES,
    StepId.GEN_STRUCTURE,
    StepId.GEN_INTENT,
    StepId.GEN_SLOT_PAIRS,
    StepId.GEN_LOGIC_FORM,
)
FOC_ORDER = (
    StepId.GEN_STRUCTURE,
    StepId.GEN_SLOT_VALUES,
    StepId.GEN_SLOT_PAIRS,
    StepId.GEN_INTENT,
    StepId.GEN_LOGIC_FORM,
)

# Which earlier outputs feed each step's prompt in the full pipeline.
DEFAULT_CONDITIONING: dict[StepId, frozenset[StepId]] = {
    StepId.GEN_STRUCTURE: frozenset(),
    StepId.GEN_INTENT: frozenset({StepId.GEN_STRUCTURE}),
    StepId.GEN_SLOT_VALUES: frozenset({StepId.GEN_STRUCTURE, StepId.GEN_INTENT}),
    StepId.GEN_SLOT_PAIRS: frozenset({StepId.GEN_STRUCTURE, StepId.GEN_INTENT, StepId.GEN_SLOT_VALUES}),
    StepId.GEN_LOGIC_FORM: frozenset({StepId.GEN_INTENT, StepId.GEN_SLOT_PAIRS}),
}

_TEMPLATE_BY_STEP = {
    StepId.GEN_STRUCTURE: "cof/step1_structure",
    StepId.GEN_INTENT: "cof/step2_intent",
    StepId.GEN_SLOT_VALUES: "cof/step3_slot_values",
    StepId.GEN_SLOT_PAIRS: "cof/step4_slot_pairs",
    StepId.GEN_LOGIC_FORM: "cof/step5_logic_form",
}

_STRUCTURE_WORDING = {
    StructureKind.AMR: {
        "name": "Abstract Meaning Representation (AMR) graph",
        "label": "AMR",
        "instruction": (
            "Write the AMR in parenthesized notation, for example "
            "(w / want-01 :ARG0 (b / boy)). Each node is a concept such as an "
            "entity, a noun phrase, a frameset, or a keyword; each edge names "
            "the relation between two concepts."
        ),
    },
    StructureKind.DEPENDENCY_PARSE: {
        "name": "dependency parse",
        "label": "Dependency parse",
        "instruction": "Write the dependency parse as relation(head, dependent) lines.",
    },
    StructureKind.CONSTITUENCY_PARSE: {
        "name": "constituency parse",
        "label": "Constituency parse",
        "instruction": "Write the constituency parse as a bracketed tree.",
    },
}


@dataclass(frozen=True)
class PipelinePlan:
    """Step order plus conditioning edges for one pipeline variant."""

    order: tuple[StepId, ...]
    removed: frozenset[StepId] = frozenset()
    condition_domain: bool = True
    structure_kind: StructureKind = StructureKind.AMR
    conditioning: Mapping[StepId, frozenset[StepId]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "order", tuple(self.order))
        object.__setattr__(self, "removed", frozenset(self.removed))
        object.__setattr__(self, "conditioning", dict(self.conditioning))
        present = [s for s in StepId if s not in self.removed]
        if sorted(self.order, key=lambda s: s.value) != sorted(present, key=lambda s: s.value):
            raise InvalidAblation("order must contain each non-removed step exactly once")
        if StepId.GEN_LOGIC_FORM in self.order and self.order[-1] is not StepId.GEN_LOGIC_FORM:
            raise InvalidAblation("the logic form step must come last")
        position = {s: i for i, s in enumerate(self.order)}
        for step, sources in self.conditioning.items():
            if step not in position:
                raise InvalidAblation(f"conditioning for removed step {step.name}")
            for src in sources:
                if src not in position or position[src] >= position[step]:
                    raise InvalidAblation(f"{step.name} conditions on {src.name}, which does not run earlier")

    def conditions_on(self, step: StepId) -> frozenset[StepId]:
        return self.conditioning.get(step, frozenset())


def _prune_conditioning(order: Sequence[StepId], removed: frozenset[StepId]) -> dict[StepId, frozenset[StepId]]:
    position = {s: i for i, s in enumerate(order)}
    pruned: dict[StepId, frozenset[StepId]] = {}
    for step in order:
        sources = DEFAULT_CONDITIONING[step]
        pruned[step] = frozenset(
            src for src in sources if src not in removed and src in position and position[src] < position[step]
        )
    return pruned


def default_cof_plan(structure_kind: StructureKind = StructureKind.AMR) -> PipelinePlan:
    """The full coarse-to-fine plan with domain conditioning enabled."""
    return PipelinePlan(
        order=COF_ORDER,
        removed=frozenset(),
        condition_domain=True,
        structure_kind=structure_kind,
        conditioning=_prune_conditioning(COF_ORDER, frozenset()),
    )


def ablation_plan(
    variant: str,
    drop: Sequence[StepId] = (),
    structure_kind: StructureKind = StructureKind.AMR,
) -> PipelinePlan:
    """One of the studied pipeline ablations.

    ``random_order`` runs steps 3, 1, 2, 4, 5; ``foc_order`` runs the
    fine-to-coarse order 1, 3, 4, 2, 5; ``drop`` removes the given steps;
    ``no_domain`` keeps the full plan but stops injecting the domain name.
    Conditioning edges that point at removed or not-yet-run steps are pruned.
    """
    if variant == "random_order":
        order: tuple[StepId, ...] = RANDOM_ORDER
        removed: frozenset[StepId] = frozenset()
        condition_domain = True
    elif variant == "foc_order":
        order = FOC_ORDER
        removed = frozenset()
        condition_domain = True
    elif variant == "no_domain":
        order = COF_ORDER
        removed = frozenset()
        condition_domain = False
    elif variant == "drop":
        removed = frozenset(drop)
        if StepId.GEN_LOGIC_FORM in removed:
            raise InvalidAblation("the logic form step cannot be dropped")
        if not removed:
            raise InvalidAblation("drop variant needs at least one step to remove")
        order = tuple(s for s in COF_ORDER if s not in removed)
        condition_domain = True
    else:
        raise InvalidAblation(f"unknown ablation variant {variant!r}")
    return PipelinePlan(
        order=order,
        removed=removed,
        condition_domain=condition_domain,
        structure_kind=structure_kind,
        conditioning=_prune_conditioning(order, removed),
    )


_ORDER_BY_NAME = {"cof": COF_ORDER, "foc": FOC_ORDER, "random": RANDOM_ORDER}


def compose_plan(
    order_name: str = "cof",
    drop: Sequence[StepId] = (),
    condition_domain: bool = True,
    structure_kind: StructureKind = StructureKind.AMR,
) -> PipelinePlan:
    """Combine a named step order with step removal and domain conditioning."""
    if order_name not in _ORDER_BY_NAME:
        raise InvalidAblation(f"unknown step order {order_name!r}")
    removed = frozenset(drop)
    if StepId.GEN_LOGIC_FORM in removed:
        raise InvalidAblation("the logic form step cannot be dropped")
    order = tuple(s for s in _ORDER_BY_NAME[order_name] if s not in removed)
    return PipelinePlan(
        order=order,
        removed=removed,
        condition_domain=condition_domain,
        structure_kind=structure_kind,
        conditioning=_prune_conditioning(order, removed),
    )


@dataclass(frozen=True)
class Selection:
    index: int
    reason: str


@dataclass(frozen=True)
class StepTrace:
    step: StepId
    prompt: str
    raw_completions: tuple[str, ...]
    parsed: object
    selection: Selection
    validation: ValidationReport | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        parsed = self.parsed
        if isinstance(parsed, LogicForm):
            parsed = parsed.serialize()
        elif isinstance(parsed, tuple):
            parsed = [list(p) if isinstance(p, tuple) else p for p in parsed]
        return {
            "step": self.step.value,
            "prompt": self.prompt,
            "raw_completions": list(self.raw_completions),
            "parsed": parsed,
            "selection": {"index": self.selection.index, "reason": self.selection.reason},
            "validation": self.validation.to_dict() if self.validation is not None else None,
            "error": self.error,
        }


@dataclass(frozen=True)
class Failure:
    kind: str
    message: str


@dataclass(frozen=True)
class PipelineResult:
    example_id: str
    final: LogicForm | None
    traces: tuple[StepTrace, ...]
    failure: Failure | None = None

    def to_dict(self) -> dict:
        return {
            "example_id": self.example_id,
            "final": self.final.serialize() if self.final is not None else None,
            "traces": [t.to_dict() for t in self.traces],
            "failure": {"kind": self.failure.kind, "message": self.failure.message} if self.failure else None,
        }


@dataclass(frozen=True)
class DecodingSettings:
    """Sampling parameters plus per-step answer selection."""

    model: str = "gpt-3.5-turbo"
    temperature: float = 0.7
    n: int = 10
    max_tokens: int = 512
    aggregator: Aggregator = Aggregator()
    llm_step5: bool = False


_FENCE_RE = re.compile(r"^```[a-zA-Z0-9_-]*\s*$")
_BULLET_RE = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*")
_LABEL_TOKEN_RE = re.compile(r"\b(?:IN:)?([A-Z][A-Z0-9_]{2,})\b")
_NONE_RE = re.compile(r"^\s*(?:none|no slot values?|n/?a)\.?\s*$", re.IGNORECASE)
_PREFIX_LABEL_RE = re.compile(
    r"^\s*(?:intent|answer|output|label|slot values?|pairs?|logic form)\s*[:=]\s*", re.IGNORECASE
)


def _strip_fences(text: str) -> str:
    lines = [line for line in text.splitlines() if not _FENCE_RE.match(line)]
    return "\n".join(lines).strip()


def _clean_line(line: str) -> str:
    line = _BULLET_RE.sub("", line.strip())
    line = _PREFIX_LABEL_RE.sub("", line)
    return line.strip().strip('"').strip("'").strip()


def _looks_like_type(token: str, slot_vocab: Sequence[str] | None) -> bool:
    token = token.strip()
    if not token:
        return False
    if slot_vocab and token.casefold() in {t.casefold() for t in slot_vocab}:
        return True
    stripped = token[3:] if token[:3].upper() == "SL:" else token
    return bool(re.fullmatch(r"[A-Z][A-Z0-9_]*", stripped))


def _canonical_type(token: str, slot_vocab: Sequence[str] | None) -> str:
    token = token.strip()
    if token[:3].upper() == "SL:":
        token = token[3:]
    if slot_vocab:
        for t in slot_vocab:
            if t.casefold() == token.casefold():
                return t
    return token


@dataclass(frozen=True)
class StructureOutput:
    text: str
    report: ValidationReport


def parse_step_output(
    step: StepId,
    raw: str,
    intent_vocab: Sequence[str] | None = None,
    slot_vocab: Sequence[str] | None = None,
    structure_kind: StructureKind = StructureKind.AMR,
):
    """Extract the step's answer from a raw completion.

    Intent extraction prefers a vocabulary match (case-insensitive, with an
    optional IN: prefix) anywhere in the text; value and pair lists accept
    line- or comma-delimited layouts with bullets, numbering, quoting, and
    label prefixes stripped; pairs accept "value -> TYPE", "TYPE: value",
    and "value: TYPE". The final-form step pulls the first bracketed
    expression out of surrounding prose. Raises NoExtractableAnswer when
    nothing usable is found.
    """
    if step is StepId.GEN_STRUCTURE:
        text = _strip_fences(raw)
        if not text:
            raise NoExtractableAnswer(step, "empty structure output")
        return StructureOutput(text=text, report=validate_structure(text, structure_kind))

    if step is StepId.GEN_INTENT:
        return _parse_intent(raw, intent_vocab)

    if step is StepId.GEN_SLOT_VALUES:
        return _parse_values(raw)

    if step is StepId.GEN_SLOT_PAIRS:
        return _parse_pairs(raw, slot_vocab)

    if step is StepId.GEN_LOGIC_FORM:
        candidate = find_bracketed_expression(_strip_fences(raw))
        if candidate is None:
            raise NoExtractableAnswer(step, "no bracketed expression in completion")
        try:
            return parse_logic_form(candidate)
        except LogicFormError as exc:
            raise NoExtractableAnswer(step, f"bracketed expression does not parse: {exc}") from exc

    raise ValueError(f"unknown step {step}")


def _parse_intent(raw: str, intent_vocab: Sequence[str] | None) -> str:
    text = _strip_fences(raw)
    if intent_vocab:
        best: tuple[int, int, str] | None = None
        lowered = text.casefold()
        for label in intent_vocab:
            for probe in (label.casefold(), f"in:{label.casefold()}"):
                pos = lowered.find(probe)
                while pos != -1:
                    before_ok = pos == 0 or not (lowered[pos - 1].isalnum() or lowered[pos - 1] == "_")
                    end = pos + len(probe)
                    after_ok = end >= len(lowered) or not (lowered[end].isalnum() or lowered[end] == "_")
                    if before_ok and after_ok:
                        key = (pos, -len(label), label)
                        if best is None or key < best:
                            best = key
                        break
                    pos = lowered.find(probe, pos + 1)
        if best is not None:
            return best[2]
    for line in text.splitlines():
        cleaned = _clean_line(line)
        if not cleaned:
            continue
        match = _LABEL_TOKEN_RE.search(cleaned)
        if match:
            return match.group(1)
        # Trust a bare single-token answer; prose without a label-shaped
        # token is unextractable.
        tokens = cleaned.split()
        if len(tokens) == 1:
            token = tokens[0].rstrip(".,;:!?")
            if token[:3].upper() == "IN:":
                token = token[3:]
            if token and re.fullmatch(r"[A-Za-z][A-Za-z0-9_]*", token):
                return token
    raise NoExtractableAnswer(StepId.GEN_INTENT, f"no intent label found in {raw[:80]!r}")


def _parse_values(raw: str) -> tuple[str, ...]:
    text = _strip_fences(raw)
    if not text.strip():
        raise NoExtractableAnswer(StepId.GEN_SLOT_VALUES, "empty output")
    if _NONE_RE.match(text.strip()):
        return ()
    lines = [
        cleaned
        for line in text.splitlines()
        # A cleaned line still ending with ':' is a header, not a value.
        if (cleaned := _clean_line(line)) and not cleaned.endswith(":")
    ]
    if not lines:
        raise NoExtractableAnswer(StepId.GEN_SLOT_VALUES, "no usable lines")
    if len(lines) == 1 and _NONE_RE.match(lines[0]):
        return ()
    if len(lines) == 1 and "," in lines[0]:
        parts = [p.strip().strip('"').strip("'") for p in lines[0].split(",")]
        return tuple(p for p in parts if p and not _NONE_RE.match(p))
    return tuple(line for line in lines if not _NONE_RE.match(line))


def _parse_pairs(raw: str, slot_vocab: Sequence[str] | None) -> tuple[tuple[str, str], ...]:
    text = _strip_fences(raw)
    if not text.strip():
        raise NoExtractableAnswer(StepId.GEN_SLOT_PAIRS, "empty output")
    if _NONE_RE.match(text.strip()):
        return ()
    pairs: list[tuple[str, str]] = []
    saw_usable_line = False
    for line in text.splitlines():
        cleaned = _clean_line(line)
        if not cleaned:
            continue
        if _NONE_RE.match(cleaned):
            saw_usable_line = True
            continue
        if "->" in cleaned:
            left, right = cleaned.split("->", 1)
        elif ":" in cleaned:
            left, right = cleaned.split(":", 1)
        else:
            continue
        left = left.strip().strip('"').strip("'")
        right = right.strip().strip('"').strip("'").rstrip(".")
        if not left or not right:
            continue
        if _looks_like_type(right, slot_vocab):
            pairs.append((left, _canonical_type(right, slot_vocab)))
            saw_usable_line = True
        elif _looks_like_type(left, slot_vocab):
            pairs.append((right, _canonical_type(left, slot_vocab)))
            saw_usable_line = True
    if not saw_usable_line:
        raise NoExtractableAnswer(StepId.GEN_SLOT_PAIRS, f"no value/type pairs found in {raw[:80]!r}")
    return tuple(pairs)


def _conditioning_text(step: StepId, parsed) -> str | None:
    if parsed is None:
        return None
    if step is StepId.GEN_STRUCTURE:
        return parsed.text if isinstance(parsed, StructureOutput) else str(parsed)
    if step is StepId.GEN_INTENT:
        return parsed
    if step is StepId.GEN_SLOT_VALUES:
        return ", ".join(parsed) if parsed else "none"
    if step is StepId.GEN_SLOT_PAIRS:
        return "; ".join(f"{v} -> {t}" for v, t in parsed) if parsed else "none"
    if step is StepId.GEN_LOGIC_FORM:
        return parsed.serialize() if isinstance(parsed, LogicForm) else str(parsed)
    return None


def _demo_step_answer(step: StepId, demo: Example) -> str:
    ann = demo.step_annotations
    if ann is None:
        raise MissingAnnotations(f"demonstration {demo.id} has no step annotations")
    value = {
        StepId.GEN_STRUCTURE: ann.amr_text,
        StepId.GEN_INTENT: ann.intent,
        StepId.GEN_SLOT_VALUES: ", ".join(ann.slot_values) if ann.slot_values is not None else None,
        StepId.GEN_SLOT_PAIRS: (
            "; ".join(f"{v} -> {t}" for v, t in ann.slot_pairs) if ann.slot_pairs is not None else None
        ),
        StepId.GEN_LOGIC_FORM: ann.logic_form,
    }[step]
    if value is None:
        raise MissingAnnotations(f"demonstration {demo.id} lacks the {step.value} annotation")
    return value if value else "none"


def _render_step_demonstrations(
    step: StepId,
    plan: PipelinePlan,
    demonstrations: Sequence[Example],
    wording: dict[str, str],
) -> str | None:
    if not demonstrations:
        return None
    conditioned = plan.conditions_on(step)
    blocks = []
    answer_label = {
        StepId.GEN_STRUCTURE: wording["label"],
        StepId.GEN_INTENT: "Intent",
        StepId.GEN_SLOT_VALUES: "Slot values",
        StepId.GEN_SLOT_PAIRS: "Pairs",
        StepId.GEN_LOGIC_FORM: "Logic Form",
    }[step]
    for demo in demonstrations:
        lines = [f"Example from domain {demo.domain}:" if plan.condition_domain else "Example:"]
        lines.append(f"Utterance: {demo.utterance}")
        if StepId.GEN_STRUCTURE in conditioned:
            lines.append(f"{wording['label']}: {_demo_step_answer(StepId.GEN_STRUCTURE, demo)}")
        if StepId.GEN_INTENT in conditioned:
            lines.append(f"Predicted intent: {_demo_step_answer(StepId.GEN_INTENT, demo)}")
        if StepId.GEN_SLOT_VALUES in conditioned:
            lines.append(f"Identified slot values: {_demo_step_answer(StepId.GEN_SLOT_VALUES, demo)}")
        if StepId.GEN_SLOT_PAIRS in conditioned:
            lines.append(f"Slot value and slot type pairs: {_demo_step_answer(StepId.GEN_SLOT_PAIRS, demo)}")
        lines.append(f"{answer_label}: {_demo_step_answer(step, demo)}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def render_step_prompt(
    step: StepId,
    plan: PipelinePlan,
    example: Example,
    prior_texts: Mapping[StepId, str | None],
    vocab: Vocab | None = None,
    demonstrations: Sequence[Example] = (),
    template_dir=None,
    vocab_domain: str | None = None,
) -> str:
    """The exact prompt for one step, honoring the plan's conditioning."""
    wording = _STRUCTURE_WORDING[plan.structure_kind]
    conditioned = plan.conditions_on(step)

    def conditioned_value(source: StepId) -> str | None:
        if source not in conditioned:
            return None
        return prior_texts.get(source)

    values = {
        "utterance": example.utterance,
        "domain": example.domain if plan.condition_domain else None,
        "amr": conditioned_value(StepId.GEN_STRUCTURE),
        "intent": conditioned_value(StepId.GEN_INTENT),
        "slot_values": conditioned_value(StepId.GEN_SLOT_VALUES),
        "slot_pairs": conditioned_value(StepId.GEN_SLOT_PAIRS),
        "intent_vocab": ", ".join(vocab.intent_list(vocab_domain)) if vocab else None,
        "slot_vocab": ", ".join(vocab.slot_type_list(vocab_domain)) if vocab else None,
        "structure_name": wording["name"],
        "structure_label": wording["label"],
        "structure_instruction": wording["instruction"],
        "demonstrations": _render_step_demonstrations(step, plan, demonstrations, wording),
    }
    template = load_template(_TEMPLATE_BY_STEP[step], template_dir)
    return render(template, values)


def _normalizer_for(step: StepId):
    if step is StepId.GEN_LOGIC_FORM:
        return normalize_completion
    return lambda s: " ".join(s.split()).casefold()


def _assemble_final(outputs: Mapping[StepId, object]) -> LogicForm | None:
    """Deterministic composition of the intent and slot pair outputs."""
    intent = outputs.get(StepId.GEN_INTENT)
    pairs = outputs.get(StepId.GEN_SLOT_PAIRS)
    if not isinstance(intent, str) or not isinstance(pairs, tuple):
        return None
    entries = []
    for value, stype in pairs:
        try:
            entries.append(SlotEntry(slot_type=stype, slot_value=value))
        except LogicFormError:
            continue
    try:
        return LogicForm(intent=intent, slots=tuple(entries))
    except LogicFormError:
        return None


def run_example(
    example: Example,
    plan: PipelinePlan,
    settings: DecodingSettings,
    backend: Backend,
    vocab: Vocab | None = None,
    demonstrations: Sequence[Example] = (),
    template_dir=None,
    vocab_domain: str | None = None,
) -> PipelineResult:
    """Run the plan over one example, recording a full trace per step.

    Backend failures and an unparseable final form produce a result with a
    typed failure instead of raising, so corpus runs keep going.
    """
    traces: list[StepTrace] = []
    outputs: dict[StepId, object] = {}
    prior_texts: dict[StepId, str | None] = {}
    intent_vocab = vocab.intent_list(vocab_domain) if vocab else None
    slot_vocab = vocab.slot_type_list(vocab_domain) if vocab else None

    for step in plan.order:
        if step is StepId.GEN_LOGIC_FORM and not settings.llm_step5:
            assembled = _assemble_final(outputs)
            if assembled is not None:
                serialized = assembled.serialize()
                traces.append(
                    StepTrace(
                        step=step,
                        prompt="",
                        raw_completions=(serialized,),
                        parsed=assembled,
                        selection=Selection(index=0, reason="deterministic_assembly"),
                    )
                )
                outputs[step] = assembled
                prior_texts[step] = serialized
                continue
            # Assembly inputs are missing (ablated or unparsed); fall back to
            # asking the model so ablation plans still produce a form.
        prompt = render_step_prompt(
            step,
            plan,
            example,
            prior_texts,
            vocab=vocab,
            demonstrations=demonstrations,
            template_dir=template_dir,
            vocab_domain=vocab_domain,
        )
        request = CompletionRequest(
            prompt=prompt,
            temperature=settings.temperature,
            n=settings.n,
            max_tokens=settings.max_tokens,
            model=settings.model,
        )
        try:
            response = backend.complete(request)
        except BackendError as exc:
            return PipelineResult(
                example_id=example.id,
                final=None,
                traces=tuple(traces),
                failure=Failure(kind="backend_error", message=f"{step.value}: {exc}"),
            )
        index, reason = aggregate_with_index(response.completions, settings.aggregator, _normalizer_for(step))
        selected = response.completions[index]
        parsed = None
        error = None
        try:
            parsed = parse_step_output(
                step, selected, intent_vocab=intent_vocab, slot_vocab=slot_vocab, structure_kind=plan.structure_kind
            )
        except NoExtractableAnswer as exc:
            error = str(exc)
        validation = parsed.report if isinstance(parsed, StructureOutput) else None
        traces.append(
            StepTrace(
                step=step,
                prompt=prompt,
                raw_completions=response.completions,
                parsed=parsed.text if isinstance(parsed, StructureOutput) else parsed,
                selection=Selection(index=index, reason=reason),
                validation=validation,
                error=error,
            )
        )
        outputs[step] = parsed.text if isinstance(parsed, StructureOutput) else parsed
        prior_texts[step] = _conditioning_text(step, outputs[step]) if error is None else None

    final = outputs.get(StepId.GEN_LOGIC_FORM)
    if isinstance(final, LogicForm):
        return PipelineResult(example_id=example.id, final=final, traces=tuple(traces))
    return PipelineResult(
        example_id=example.id,
        final=None,
        traces=tuple(traces),
        failure=Failure(kind="unparseable_final_form", message="no parseable logic form was produced"),
    )
