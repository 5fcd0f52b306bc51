"""Coarse-to-fine prompting harness for multi-grained NLU.

A library plus CLI for running LLM prompting experiments over intent
detection, slot filling, and flat logic-form prediction: dataset loading
and seeded sampling, a five-step coarse-to-fine pipeline with configurable
ordering and conditioning, single-shot baseline strategies, multi-sample
aggregation, four-metric evaluation, and a record/replay backend for
deterministic offline runs.
"""

from .logicform import (
    BioSequence,
    LogicForm,
    SemanticFrame,
    SlotEntry,
    canonicalize_logic_form,
    extract_frame,
    parse_logic_form,
    serialize_logic_form,
    to_bio,
)
from .amr import AmrEdge, AmrGraph, AmrNode, StructureKind, concepts, parse_amr, serialize_amr, validate_structure
from .metrics import (
    MetricsReport,
    SeedAggregate,
    aggregate_seeds,
    compute_report,
    exact_match,
    frame_accuracy,
    intent_accuracy,
    slot_f1,
)

__all__ = [
    "BioSequence",
    "LogicForm",
    "SemanticFrame",
    "SlotEntry",
    "canonicalize_logic_form",
    "extract_frame",
    "parse_logic_form",
    "serialize_logic_form",
    "to_bio",
    "AmrEdge",
    "AmrGraph",
    "AmrNode",
    "StructureKind",
    "concepts",
    "parse_amr",
    "serialize_amr",
    "validate_structure",
    "MetricsReport",
    "SeedAggregate",
    "aggregate_seeds",
    "compute_report",
    "exact_match",
    "frame_accuracy",
    "intent_accuracy",
    "slot_f1",
]

__version__ = "0.1.0"
