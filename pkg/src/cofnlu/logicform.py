"""Flat logic form parsing, serialization, and derived label views.

A logic form is a single bracketed expression carrying one intent and an
ordered list of typed slot values::

    [IN:CREATE_REMINDER [SL:TODO: message mike] [SL:DATE_TIME: at 7pm tonight]]

It is the label format shared by intent detection, slot filling, and
semantic parsing in this harness: the intent label is the sentence-level
annotation, the slot groups are the token-level annotations, and the whole
expression is what models are asked to predict. Only flat forms are
supported; an intent or bracket nested inside a slot value is a hard parse
error rather than something to silently flatten, since flattening would
corrupt downstream scoring.

Two traditional views can be derived from a parsed form: the semantic frame
(intent plus the ordered slot types, values dropped) and a token-level BIO
tag sequence aligned against the utterance tokens.

The parser is tolerant about whitespace and accepts both ``[SL:TYPE: value]``
and the colon-less ``[SL:TYPE value]`` layout; serialization always emits the
canonical single-spaced, colon-separated shape.
"""

from __future__ import annotations

import re
from dataclasses import dataclass


class LogicFormError(ValueError):
    """Base class for logic form parse and validation failures."""


class MalformedBrackets(LogicFormError):
    """Unbalanced brackets, trailing content, or stray top-level text."""


class MissingIntent(LogicFormError):
    """The expression carries no ``IN:`` group or an empty intent label."""


class NestedForm(LogicFormError):
    """A bracket or inner ``IN:`` group occurs inside a slot value."""


class EmptySlot(LogicFormError):
    """A slot group with an empty type or an empty value."""


class UnalignedSlot(LogicFormError):
    """A slot value that matches no contiguous token span of the utterance."""


_LABEL_RE = re.compile(r"[^\s\[\]]+\Z")
# A bare "IN:" token inside a slot value signals a nested intent the model
# failed to bracket; canonical values never contain it.
_INNER_INTENT_RE = re.compile(r"\bIN:[A-Za-z]")


def _clean_value(value: str) -> str:
    return " ".join(value.split())


@dataclass(frozen=True)
class SlotEntry:
    """One ``(slot type, slot value)`` pair of a logic form.

    ``slot_type`` is stored without the ``SL:`` prefix. ``slot_value`` is
    normalized to single internal spaces with no surrounding whitespace, so
    every constructible entry serializes and re-parses to itself.
    """

    slot_type: str
    slot_value: str

    def __post_init__(self) -> None:
        stype = self.slot_type.strip()
        value = _clean_value(self.slot_value)
        if not stype:
            raise EmptySlot("slot type is empty")
        if not _LABEL_RE.match(stype):
            raise LogicFormError(f"slot type {stype!r} contains whitespace or brackets")
        if not value:
            raise EmptySlot(f"slot {stype!r} has an empty value")
        if "[" in value or "]" in value:
            raise NestedForm(f"slot {stype!r} value contains a bracket: {value!r}")
        object.__setattr__(self, "slot_type", stype)
        object.__setattr__(self, "slot_value", value)

    def as_pair(self) -> tuple[str, str]:
        return (self.slot_type, self.slot_value)


@dataclass(frozen=True)
class LogicForm:
    """A flat logic form: one intent plus an ordered tuple of slot entries."""

    intent: str
    slots: tuple[SlotEntry, ...] = ()

    def __post_init__(self) -> None:
        intent = self.intent.strip()
        if not intent:
            raise MissingIntent("intent label is empty")
        if not _LABEL_RE.match(intent):
            raise LogicFormError(f"intent {intent!r} contains whitespace or brackets")
        object.__setattr__(self, "intent", intent)
        object.__setattr__(self, "slots", tuple(self.slots))

    def serialize(self) -> str:
        return serialize_logic_form(self)


@dataclass(frozen=True)
class SemanticFrame:
    """Intent plus ordered slot types, with slot values dropped."""

    intent: str
    slot_types: tuple[str, ...] = ()

    def label(self) -> str:
        """Render the frame as a single dash-joined label string."""
        return "-".join([f"IN:{self.intent}"] + [f"SL:{t}" for t in self.slot_types])


@dataclass(frozen=True)
class BioSequence:
    """A well-formed BIO tag sequence, one tag per utterance token."""

    tags: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "tags", tuple(self.tags))
        errors = bio_tag_errors(self.tags)
        if errors:
            raise ValueError("; ".join(errors))

    def __iter__(self):
        return iter(self.tags)

    def __len__(self) -> int:
        return len(self.tags)


def bio_tag_errors(tags) -> list[str]:
    """Check BIO well-formedness; returns one message per violation.

    A tag must be ``O``, ``B-<type>``, or ``I-<type>``, and ``I-<type>`` may
    only follow ``B-<type>`` or ``I-<type>`` of the same type.
    """
    errors = []
    prev = "O"
    for i, tag in enumerate(tags):
        if tag == "O":
            prev = tag
            continue
        if len(tag) < 3 or tag[1] != "-" or tag[0] not in "BI":
            errors.append(f"tag {i} is not O, B-<type>, or I-<type>: {tag!r}")
            prev = "O"
            continue
        if tag[0] == "I":
            if prev == "O" or prev[2:] != tag[2:]:
                errors.append(f"tag {i} ({tag}) does not continue a {tag[2:]} span")
        prev = tag
    return errors


def parse_logic_form(text: str) -> LogicForm:
    """Parse a single bracketed logic form expression.

    Accepts ragged whitespace and the colon-less slot layout. Raises
    MalformedBrackets, MissingIntent, NestedForm, or EmptySlot on bad input;
    never returns a partially parsed form.
    """
    s = text.strip()
    if not s:
        raise MalformedBrackets("empty input")
    if s[0] != "[":
        raise MalformedBrackets(f"expected '[' at start, got {s[0]!r}")
    i = 1
    i = _skip_ws(s, i)
    if not s[i:].upper().startswith("IN:"):
        raise MissingIntent("no IN: token after opening bracket")
    i += 3
    i = _skip_ws(s, i)
    intent, i = _read_label(s, i)
    if not intent:
        raise MissingIntent("IN: token has no intent label")

    slots: list[SlotEntry] = []
    closed = False
    while i < len(s):
        i = _skip_ws(s, i)
        if i >= len(s):
            break
        c = s[i]
        if c == "]":
            i += 1
            closed = True
            break
        if c == "[":
            entry, i = _parse_slot_group(s, i)
            slots.append(entry)
            continue
        end = min(i + 20, len(s))
        raise MalformedBrackets(f"unexpected text at top level: {s[i:end]!r}")
    if not closed:
        raise MalformedBrackets("unbalanced brackets: missing closing ']'")
    i = _skip_ws(s, i)
    if i != len(s):
        raise MalformedBrackets(f"trailing content after form: {s[i:i + 20]!r}")
    return LogicForm(intent=intent, slots=tuple(slots))


def _skip_ws(s: str, i: int) -> int:
    while i < len(s) and s[i].isspace():
        i += 1
    return i


def _read_label(s: str, i: int) -> tuple[str, int]:
    start = i
    while i < len(s) and not s[i].isspace() and s[i] not in "[]":
        i += 1
    return s[start:i], i


def _parse_slot_group(s: str, i: int) -> tuple[SlotEntry, int]:
    # s[i] == '['
    i += 1
    i = _skip_ws(s, i)
    if s[i:].upper().startswith("IN:"):
        raise NestedForm("inner IN: group; nested forms are not supported")
    if not s[i:].upper().startswith("SL:"):
        end = min(i + 20, len(s))
        raise MalformedBrackets(f"expected SL: group, got {s[i:end]!r}")
    i += 3
    stype_chars = []
    while i < len(s) and s[i] not in ":[]" and not s[i].isspace():
        stype_chars.append(s[i])
        i += 1
    stype = "".join(stype_chars)
    i = _skip_ws(s, i)
    if i < len(s) and s[i] == ":":
        i += 1
    value_chars = []
    while i < len(s) and s[i] != "]":
        if s[i] == "[":
            raise NestedForm(f"bracket inside value of slot {stype or '?'!r}")
        value_chars.append(s[i])
        i += 1
    if i >= len(s):
        raise MalformedBrackets(f"unbalanced brackets in slot {stype or '?'!r}")
    i += 1  # consume ']'
    value = _clean_value("".join(value_chars))
    if not stype:
        raise EmptySlot("slot group has no type label")
    if not value:
        raise EmptySlot(f"slot {stype!r} has an empty value")
    if _INNER_INTENT_RE.search(value):
        raise NestedForm(f"inner IN: token inside value of slot {stype!r}")
    return SlotEntry(slot_type=stype, slot_value=value), i


def serialize_logic_form(lf: LogicForm) -> str:
    """Emit the canonical text of a logic form.

    Single spaces between bracket groups and after the slot colon, so
    ``parse_logic_form(serialize_logic_form(lf)) == lf`` for every valid form.
    """
    parts = [f"[IN:{lf.intent}"]
    parts.extend(f"[SL:{e.slot_type}: {e.slot_value}]" for e in lf.slots)
    return " ".join(parts) + "]"


def canonicalize_logic_form(text: str) -> str:
    """Parse and re-serialize, normalizing all whitespace variation."""
    return serialize_logic_form(parse_logic_form(text))


def extract_frame(lf: LogicForm) -> SemanticFrame:
    """Drop slot values, keeping the intent and the ordered slot types."""
    return SemanticFrame(intent=lf.intent, slot_types=tuple(e.slot_type for e in lf.slots))


def align_bio(lf: LogicForm, tokens: list[str]) -> tuple[BioSequence, list[SlotEntry]]:
    """Align slot values to utterance tokens and emit BIO tags.

    Matching is case-insensitive, punctuation-preserving, and whole-token
    only: a slot value matches a contiguous token subsequence whose lowercased
    tokens equal the value's lowercased tokens. Slots are processed in logic
    form order; each takes the leftmost span whose tokens are all still
    untagged. Returns the tag sequence plus the entries that matched nothing.
    """
    if any(not t or any(ch.isspace() for ch in t) for t in tokens):
        raise ValueError("tokens must be non-empty and contain no whitespace")
    tags = ["O"] * len(tokens)
    lowered = [t.lower() for t in tokens]
    unaligned: list[SlotEntry] = []
    for entry in lf.slots:
        vtoks = entry.slot_value.lower().split()
        n = len(vtoks)
        placed = False
        for start in range(0, len(tokens) - n + 1):
            if lowered[start:start + n] != vtoks:
                continue
            if any(tags[j] != "O" for j in range(start, start + n)):
                continue
            tags[start] = f"B-{entry.slot_type}"
            for j in range(start + 1, start + n):
                tags[j] = f"I-{entry.slot_type}"
            placed = True
            break
        if not placed:
            unaligned.append(entry)
    return BioSequence(tuple(tags)), unaligned


def to_bio(lf: LogicForm, tokens: list[str], strict: bool = False) -> BioSequence:
    """BIO view of a logic form against the utterance's whitespace tokens.

    With ``strict`` a slot value that matches no token span raises
    UnalignedSlot; otherwise unmatched slots are dropped from the tag
    sequence (use align_bio to get the per-slot report).
    """
    seq, unaligned = align_bio(lf, tokens)
    if strict and unaligned:
        bad = ", ".join(f"{e.slot_type}={e.slot_value!r}" for e in unaligned)
        raise UnalignedSlot(f"slot values match no token span: {bad}")
    return seq


def find_bracketed_expression(text: str) -> str | None:
    """Return the first balanced ``[...]`` expression embedded in text.

    Model completions usually wrap the form in prose; this pulls out the
    first bracketed expression so it can be handed to parse_logic_form.
    Returns None when the text contains no ``[`` at all; an opening bracket
    that never closes returns the tail so the parser can report it.
    """
    start = text.find("[")
    if start < 0:
        return None
    depth = 0
    for i in range(start, len(text)):
        if text[i] == "[":
            depth += 1
        elif text[i] == "]":
            depth -= 1
            if depth == 0:
                return text[start:i + 1]
    return text[start:]
