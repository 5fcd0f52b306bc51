"""Dataset ingestion, domain-disjoint splitting, seeded sampling, and
demonstration selection.

Three input formats are supported and all converge on the same in-memory
record:

  * ``native_jsonl``: the harness's own interchange format, one JSON object
    per line with fields ``id``, ``utterance``, ``domain``, ``logic_form``
    and an optional ``step_annotations`` object (keys ``amr_text``,
    ``intent``, ``slot_values``, ``slot_pairs``, ``logic_form``);
  * ``mtop_tsv``: tab-separated rows of
    id, intent, slot spans, utterance, domain, locale, decoupled form,
    token JSON. The decoupled form column is converted to a flat logic
    form; rows whose form nests an intent inside a slot are skipped (the
    harness scores flat forms only) but still count toward the label
    inventory and domain statistics;
  * ``massive_jsonl``: JSON lines with ``scenario`` (used as the domain),
    ``intent``, ``utt`` and the bracket-annotated ``annot_utt`` from which
    slots are read. Non-English locales are skipped.

Sampling and demonstration selection are pure functions of
(data, parameters, seed): pools are sorted by example id before drawing
with ``random.Random(seed)`` (the Mersenne Twister), so the same seed gives
the same selection on any machine.
"""

from __future__ import annotations

import json
import math
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .logicform import LogicForm, LogicFormError, NestedForm, SlotEntry, parse_logic_form

SAMPLING_RNG = "mt19937"  # random.Random; pinned so configs can assert it

DEMO_MODE_DIFFERENT = "domain_different"
DEMO_MODE_SIMILAR = "domain_similar"
DATASET_FORMATS = ("native_jsonl", "mtop_tsv", "massive_jsonl")


class DatasetError(Exception):
    pass


class UnreadableFile(DatasetError):
    pass


class MalformedRecord(DatasetError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UnparseableGoldForm(DatasetError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class InsufficientData(DatasetError):
    pass


class DomainNotFound(DatasetError):
    pass


class InsufficientAnnotatedData(DatasetError):
    pass


@dataclass(frozen=True)
class StepAnnotations:
    """Hand-prepared per-step answers attached to demonstration examples."""

    amr_text: str | None = None
    intent: str | None = None
    slot_values: tuple[str, ...] | None = None
    slot_pairs: tuple[tuple[str, str], ...] | None = None
    logic_form: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "StepAnnotations":
        values = d.get("slot_values")
        pairs = d.get("slot_pairs")
        return cls(
            amr_text=d.get("amr_text"),
            intent=d.get("intent"),
            slot_values=tuple(values) if values is not None else None,
            slot_pairs=tuple((v, t) for v, t in pairs) if pairs is not None else None,
            logic_form=d.get("logic_form"),
        )

    def to_dict(self) -> dict:
        out: dict = {}
        if self.amr_text is not None:
            out["amr_text"] = self.amr_text
        if self.intent is not None:
            out["intent"] = self.intent
        if self.slot_values is not None:
            out["slot_values"] = list(self.slot_values)
        if self.slot_pairs is not None:
            out["slot_pairs"] = [list(p) for p in self.slot_pairs]
        if self.logic_form is not None:
            out["logic_form"] = self.logic_form
        return out


@dataclass(frozen=True)
class Example:
    id: str
    utterance: str
    domain: str
    gold: LogicForm
    step_annotations: StepAnnotations | None = None

    def tokens(self) -> list[str]:
        return self.utterance.split()


@dataclass(frozen=True)
class Split:
    train_domains: frozenset[str]
    test_domains: frozenset[str]

    def __post_init__(self) -> None:
        object.__setattr__(self, "train_domains", frozenset(self.train_domains))
        object.__setattr__(self, "test_domains", frozenset(self.test_domains))
        overlap = self.train_domains & self.test_domains
        if overlap:
            raise ValueError(f"train and test domains overlap: {sorted(overlap)}")


@dataclass(frozen=True)
class Vocab:
    intents: frozenset[str]
    slot_types: frozenset[str]
    intents_by_domain: dict = field(default_factory=dict)
    slots_by_domain: dict = field(default_factory=dict)

    def intent_list(self, domain: str | None = None) -> list[str]:
        if domain is not None and domain in self.intents_by_domain:
            return sorted(self.intents_by_domain[domain])
        return sorted(self.intents)

    def slot_type_list(self, domain: str | None = None) -> list[str]:
        if domain is not None and domain in self.slots_by_domain:
            return sorted(self.slots_by_domain[domain])
        return sorted(self.slot_types)


@dataclass(frozen=True)
class DatasetStats:
    n_examples: int
    n_skipped: int
    n_domains: int
    n_intents: int
    n_slot_types: int
    sentence_length_mean: float
    sentence_length_std: float
    slots_per_sample_mean: float
    slots_per_sample_std: float

    def lines(self) -> list[str]:
        return [
            f"examples            {self.n_examples}",
            f"skipped records     {self.n_skipped}",
            f"domains             {self.n_domains}",
            f"intents             {self.n_intents}",
            f"slot types          {self.n_slot_types}",
            f"sentence length     {self.sentence_length_mean:.2f} ± {self.sentence_length_std:.2f}",
            f"slots per sample    {self.slots_per_sample_mean:.2f} ± {self.slots_per_sample_std:.2f}",
        ]


@dataclass(frozen=True)
class Dataset:
    examples: tuple[Example, ...]
    vocab: Vocab
    stats: DatasetStats
    domains: frozenset[str]


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    if not values:
        return 0.0, 0.0
    m = sum(values) / len(values)
    return m, math.sqrt(sum((v - m) ** 2 for v in values) / len(values))


def _build_dataset(
    examples: list[Example],
    extra_intents: Iterable[str] = (),
    extra_slots: Iterable[str] = (),
    extra_domains: Iterable[str] = (),
    n_skipped: int = 0,
) -> Dataset:
    intents_by_domain: dict[str, set[str]] = {}
    slots_by_domain: dict[str, set[str]] = {}
    for ex in examples:
        intents_by_domain.setdefault(ex.domain, set()).add(ex.gold.intent)
        slots_by_domain.setdefault(ex.domain, set()).update(e.slot_type for e in ex.gold.slots)
    intents = set(extra_intents) | {ex.gold.intent for ex in examples}
    slot_types = set(extra_slots) | {e.slot_type for ex in examples for e in ex.gold.slots}
    domains = frozenset(extra_domains) | {ex.domain for ex in examples}
    vocab = Vocab(
        intents=frozenset(intents),
        slot_types=frozenset(slot_types),
        intents_by_domain={d: frozenset(s) for d, s in intents_by_domain.items()},
        slots_by_domain={d: frozenset(s) for d, s in slots_by_domain.items()},
    )
    sent_mean, sent_std = _mean_std([len(ex.tokens()) for ex in examples])
    slots_mean, slots_std = _mean_std([len(ex.gold.slots) for ex in examples])
    stats = DatasetStats(
        n_examples=len(examples),
        n_skipped=n_skipped,
        n_domains=len(domains),
        n_intents=len(vocab.intents),
        n_slot_types=len(vocab.slot_types),
        sentence_length_mean=sent_mean,
        sentence_length_std=sent_std,
        slots_per_sample_mean=slots_mean,
        slots_per_sample_std=slots_std,
    )
    return Dataset(examples=tuple(examples), vocab=vocab, stats=stats, domains=domains)


def load_dataset(path: str | Path, format: str) -> Dataset:
    """Load a dataset file in one of the supported formats.

    Raises UnreadableFile, MalformedRecord (with line number), or
    UnparseableGoldForm.
    """
    path = Path(path)
    if format not in DATASET_FORMATS:
        raise ValueError(f"unknown dataset format {format!r}; expected one of {DATASET_FORMATS}")
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UnreadableFile(f"cannot read {path}: {exc}") from exc
    if format == "native_jsonl":
        return _load_native(text)
    if format == "mtop_tsv":
        return _load_mtop(text)
    return _load_massive(text)


def _load_native(text: str) -> Dataset:
    examples: list[Example] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(f"invalid JSON: {exc}", lineno) from exc
        if not isinstance(record, dict):
            raise MalformedRecord("record is not an object", lineno)
        missing = [k for k in ("id", "utterance", "domain", "logic_form") if k not in record]
        if missing:
            raise MalformedRecord(f"missing fields: {missing}", lineno)
        if not str(record["utterance"]).strip():
            raise MalformedRecord("utterance is empty", lineno)
        try:
            gold = parse_logic_form(record["logic_form"])
        except LogicFormError as exc:
            raise UnparseableGoldForm(f"{exc}", lineno) from exc
        annotations = None
        if record.get("step_annotations") is not None:
            annotations = StepAnnotations.from_dict(record["step_annotations"])
        examples.append(
            Example(
                id=str(record["id"]),
                utterance=record["utterance"],
                domain=record["domain"],
                gold=gold,
                step_annotations=annotations,
            )
        )
    return _build_dataset(examples)


_MTOP_INTENT_RE = re.compile(r"\[IN:([A-Za-z0-9_]+)")
_MTOP_SLOT_RE = re.compile(r"\[SL:([A-Za-z0-9_]+)")


def _load_mtop(text: str) -> Dataset:
    examples: list[Example] = []
    intents: set[str] = set()
    slots: set[str] = set()
    domains: set[str] = set()
    n_skipped = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.rstrip("\n").split("\t")
        if len(fields) < 7:
            raise MalformedRecord(f"expected >= 7 tab-separated fields, got {len(fields)}", lineno)
        exid, _intent, _spans, utterance, domain, locale, decoupled = fields[:7]
        if locale and not locale.startswith("en"):
            n_skipped += 1
            continue
        if not utterance.strip():
            raise MalformedRecord("utterance is empty", lineno)
        domains.add(domain)
        # Count labels over the raw form so the inventory includes records
        # we cannot keep as flat examples.
        intents.update(_MTOP_INTENT_RE.findall(decoupled))
        slots.update(_MTOP_SLOT_RE.findall(decoupled))
        try:
            gold = parse_logic_form(decoupled)
        except NestedForm:
            n_skipped += 1
            continue
        except LogicFormError as exc:
            raise UnparseableGoldForm(f"{exc}", lineno) from exc
        examples.append(Example(id=exid, utterance=utterance, domain=domain, gold=gold))
    return _build_dataset(examples, extra_intents=intents, extra_slots=slots, extra_domains=domains, n_skipped=n_skipped)


_MASSIVE_SLOT_RE = re.compile(r"\[\s*([^\[\]:]+?)\s*:\s*([^\[\]]+?)\s*\]")


def _load_massive(text: str) -> Dataset:
    examples: list[Example] = []
    n_skipped = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(f"invalid JSON: {exc}", lineno) from exc
        missing = [k for k in ("id", "scenario", "intent", "utt", "annot_utt") if k not in record]
        if missing:
            raise MalformedRecord(f"missing fields: {missing}", lineno)
        locale = record.get("locale", "en-US")
        if locale and not str(locale).startswith("en"):
            n_skipped += 1
            continue
        if not str(record["utt"]).strip():
            raise MalformedRecord("utterance is empty", lineno)
        pairs = _MASSIVE_SLOT_RE.findall(record["annot_utt"])
        try:
            gold = LogicForm(
                intent=record["intent"],
                slots=tuple(SlotEntry(slot_type=t, slot_value=v) for t, v in pairs),
            )
        except LogicFormError as exc:
            raise UnparseableGoldForm(f"{exc}", lineno) from exc
        examples.append(
            Example(id=str(record["id"]), utterance=record["utt"], domain=record["scenario"], gold=gold)
        )
    return _build_dataset(examples, n_skipped=n_skipped)


def make_split(all_domains: Iterable[str], test_domains: Iterable[str]) -> Split:
    """Split domains into test vs the remaining train domains."""
    all_domains = set(all_domains)
    test = set(test_domains)
    unknown = test - all_domains
    if unknown:
        raise DomainNotFound(f"test domains not in dataset: {sorted(unknown)}")
    return Split(train_domains=frozenset(all_domains - test), test_domains=frozenset(test))


def sample_test_sets(
    data: Sequence[Example],
    test_domains: Iterable[str],
    n_per_set: int,
    seeds: Sequence[int],
) -> list[list[Example]]:
    """Draw one test set of n_per_set examples per seed, test domains only.

    Reproducible: the candidate pool is sorted by example id and sampled
    with random.Random(seed).
    """
    test_domains = set(test_domains)
    if not seeds:
        raise ValueError("at least one seed is required")
    if len(set(seeds)) != len(seeds):
        raise ValueError("seeds must be distinct")
    observed = {ex.domain for ex in data}
    unknown = test_domains - observed
    if unknown:
        raise DomainNotFound(f"test domains not in dataset: {sorted(unknown)}")
    pool = sorted((ex for ex in data if ex.domain in test_domains), key=lambda e: e.id)
    if len(pool) < n_per_set:
        raise InsufficientData(f"need {n_per_set} test-domain examples, have {len(pool)}")
    return [random.Random(seed).sample(pool, n_per_set) for seed in seeds]


def select_demonstrations(
    data: Sequence[Example],
    split: Split,
    k: int,
    mode: str,
    seed: int,
    require_annotations: bool = False,
    exclude_ids: Iterable[str] = (),
) -> list[Example]:
    """Pick k demonstration examples for few-shot prompts.

    ``domain_different`` draws from the train domains, ``domain_similar``
    from the test domains. ``exclude_ids`` keeps demonstrations disjoint
    from sampled test examples. Deterministic per seed.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    if k == 0:
        return []
    if mode == DEMO_MODE_DIFFERENT:
        domains = split.train_domains
    elif mode == DEMO_MODE_SIMILAR:
        domains = split.test_domains
    else:
        raise ValueError(f"unknown demonstration mode {mode!r}")
    excluded = set(exclude_ids)
    pool = [ex for ex in data if ex.domain in domains and ex.id not in excluded]
    if require_annotations:
        pool = [ex for ex in pool if ex.step_annotations is not None]
        if len(pool) < k:
            raise InsufficientAnnotatedData(f"need {k} annotated examples in {mode} pool, have {len(pool)}")
    if len(pool) < k:
        raise InsufficientData(f"need {k} examples in {mode} pool, have {len(pool)}")
    pool.sort(key=lambda e: e.id)
    return random.Random(seed).sample(pool, k)


def example_to_record(ex: Example) -> dict:
    """Native JSONL record for an example (inverse of the native loader)."""
    record: dict = {
        "id": ex.id,
        "utterance": ex.utterance,
        "domain": ex.domain,
        "logic_form": ex.gold.serialize(),
    }
    if ex.step_annotations is not None:
        record["step_annotations"] = ex.step_annotations.to_dict()
    return record
