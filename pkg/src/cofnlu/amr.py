"""Parser and validator for model-generated AMR text, plus opaque handling
of the alternative structured representations used in ablations.

The structure step of the pipeline asks the model for an Abstract Meaning
Representation written in the usual parenthesized (PENMAN-style) notation::

    (r / remind-01
        :ARG0 (p / person :name "John")
        :time (t / tonight))

Every ``var / concept`` introduction becomes a node; ``:rel`` arguments
become edges. A variable that is re-used creates a re-entrant edge back to
the existing node, never a duplicate node. Quoted strings and number-like
tokens in argument position are constants and get their own nodes.

Validation failure is not fatal anywhere in the pipeline: the raw structure
text is still passed downstream as conditioning context, with the findings
recorded in the step trace. Dependency and constituency parses are treated
as opaque strings (the model both produces and consumes them), so their
validation only checks non-emptiness and paren balance.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass


class AmrError(ValueError):
    """Base class for AMR parse failures."""


class UnbalancedParens(AmrError):
    """Parenthesis nesting never closes, or closes too early."""


class DuplicateVariableDefinition(AmrError):
    """The same variable is introduced with ``/ concept`` twice."""


class DanglingReference(AmrError):
    """A relation targets a variable that is never declared."""


class EmptyGraph(AmrError):
    """No node at all: blank input or a bare ``()``."""


class MalformedAmr(AmrError):
    """Any other shape violation (missing concept, stray tokens, ...)."""


class StructureKind(enum.Enum):
    AMR = "amr"
    DEPENDENCY_PARSE = "dependency_parse"
    CONSTITUENCY_PARSE = "constituency_parse"


@dataclass(frozen=True)
class AmrNode:
    variable: str
    concept: str
    constant: bool = False

    def __post_init__(self) -> None:
        if not self.variable:
            raise MalformedAmr("node variable is empty")
        if not self.concept:
            raise MalformedAmr(f"node {self.variable!r} has an empty concept")


@dataclass(frozen=True)
class AmrEdge:
    source: str
    relation: str
    target: str

    def __post_init__(self) -> None:
        if not self.relation.startswith(":"):
            raise MalformedAmr(f"relation {self.relation!r} does not start with ':'")


@dataclass(frozen=True)
class AmrGraph:
    nodes: tuple[AmrNode, ...]
    edges: tuple[AmrEdge, ...]
    root: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        ids = [n.variable for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise DuplicateVariableDefinition("node variable names are not unique")
        known = set(ids)
        if self.root not in known:
            raise MalformedAmr(f"root {self.root!r} is not a node")
        for e in self.edges:
            if e.source not in known or e.target not in known:
                raise DanglingReference(f"edge {e.source}{e.relation}{e.target} references an unknown node")

    def node(self, variable: str) -> AmrNode:
        for n in self.nodes:
            if n.variable == variable:
                return n
        raise KeyError(variable)

    def out_edges(self, variable: str) -> list[AmrEdge]:
        return [e for e in self.edges if e.source == variable]


@dataclass(frozen=True)
class ValidationFinding:
    code: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    kind: StructureKind
    ok: bool
    findings: tuple[ValidationFinding, ...] = ()

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "ok": self.ok,
            "findings": [{"code": f.code, "message": f.message} for f in self.findings],
        }


_VARIABLE_RE = re.compile(r"[A-Za-z][A-Za-z0-9_\-]*\Z")
_NUMBER_RE = re.compile(r"[+-]?\d+(\.\d+)?\Z")
# Bare tokens AMR conventionally allows in argument position besides
# variable references.
_CONSTANT_KEYWORDS = {"-", "+", "imperative", "expressive", "interrogative"}


def _tokenize(text: str) -> list[str]:
    tokens: list[str] = []
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c in "()/":
            tokens.append(c)
            i += 1
            continue
        if c == '"':
            j = i + 1
            buf = ['"']
            while j < n:
                if text[j] == "\\" and j + 1 < n:
                    buf.append(text[j:j + 2])
                    j += 2
                    continue
                buf.append(text[j])
                if text[j] == '"':
                    j += 1
                    break
                j += 1
            else:
                raise MalformedAmr("unterminated string constant")
            if buf[-1] != '"' or len(buf) < 2:
                raise MalformedAmr("unterminated string constant")
            tokens.append("".join(buf))
            i = j
            continue
        j = i
        while j < n and not text[j].isspace() and text[j] not in '()/"':
            j += 1
        tokens.append(text[i:j])
        i = j
    return tokens


class _Parser:
    def __init__(self, tokens: list[str]):
        self.tokens = tokens
        self.pos = 0
        self.nodes: list[AmrNode] = []
        self.declared: dict[str, AmrNode] = {}
        self.edges: list[tuple[str, str, str]] = []  # source, relation, raw target
        self.deferred: list[int] = []  # edge indices whose target is a bare symbol
        self.n_constants = 0

    def peek(self) -> str | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self) -> str:
        if self.pos >= len(self.tokens):
            raise UnbalancedParens("unexpected end of input")
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def add_constant(self, concept: str) -> str:
        var = f"_c{self.n_constants}"
        self.n_constants += 1
        self.nodes.append(AmrNode(variable=var, concept=concept, constant=True))
        return var

    def parse_node(self) -> str:
        # opening '(' already consumed
        tok = self.take()
        if tok == ")":
            raise EmptyGraph("empty node: '()'")
        if tok == "(":
            raise UnbalancedParens("'(' opened where a variable was expected")
        if tok == "/":
            raise MalformedAmr(f"expected a variable, got {tok!r}")
        var = tok
        if self.take() != "/":
            raise MalformedAmr(f"expected '/' after variable {var!r}")
        concept = self.take()
        if concept in "()/":
            raise MalformedAmr(f"expected a concept after {var!r} /")
        if var in self.declared:
            raise DuplicateVariableDefinition(f"variable {var!r} introduced twice")
        node = AmrNode(variable=var, concept=concept)
        self.declared[var] = node
        self.nodes.append(node)
        while True:
            tok = self.take()
            if tok == ")":
                return var
            if not tok.startswith(":"):
                raise MalformedAmr(f"expected a ':relation' or ')', got {tok!r}")
            relation = tok
            target_tok = self.take()
            if target_tok == "(":
                # Reserve the slot first so edges keep declaration order.
                idx = len(self.edges)
                self.edges.append((var, relation, var))
                child = self.parse_node()
                self.edges[idx] = (var, relation, child)
            elif target_tok.startswith('"'):
                const = self.add_constant(target_tok)
                self.edges.append((var, relation, const))
            elif target_tok in "()/":
                raise MalformedAmr(f"bad argument for {relation}: {target_tok!r}")
            else:
                self.edges.append((var, relation, target_tok))
                self.deferred.append(len(self.edges) - 1)


def parse_amr(text: str) -> AmrGraph:
    """Parse PENMAN-style parenthesized AMR text into a graph.

    Raises UnbalancedParens, DuplicateVariableDefinition, DanglingReference,
    EmptyGraph, or MalformedAmr; never returns a partial graph.
    """
    tokens = _tokenize(text)
    if not tokens:
        raise EmptyGraph("no tokens in input")
    p = _Parser(tokens)
    first = p.take()
    if first == ")":
        raise UnbalancedParens("input starts with ')'")
    if first != "(":
        raise MalformedAmr(f"expected '(' at start, got {first!r}")
    root = p.parse_node()
    if p.peek() is not None:
        extra = p.take()
        if extra == ")":
            raise UnbalancedParens("extra ')' after the root expression")
        raise MalformedAmr(f"trailing content after the root expression: {extra!r}")

    # Bare symbol arguments are either references to a declared variable or
    # literal constants; anything else is a dangling reference.
    deferred = set(p.deferred)
    edges: list[AmrEdge] = []
    for idx, (src, rel, raw) in enumerate(p.edges):
        target = raw
        if idx in deferred:
            if raw in p.declared:
                target = raw
            elif _NUMBER_RE.match(raw) or raw in _CONSTANT_KEYWORDS:
                target = p.add_constant(raw)
            else:
                raise DanglingReference(f"{rel} targets undeclared variable {raw!r}")
        edges.append(AmrEdge(source=src, relation=rel, target=target))
    return AmrGraph(nodes=tuple(p.nodes), edges=tuple(edges), root=root)


def serialize_amr(g: AmrGraph) -> str:
    """Single-line PENMAN text for the component of g reachable from its root.

    Re-entrant targets are emitted as bare variable references; constant
    nodes are emitted as their literal token.
    """
    by_source: dict[str, list[AmrEdge]] = {}
    for e in g.edges:
        by_source.setdefault(e.source, []).append(e)
    emitted: set[str] = set()

    def emit(variable: str) -> str:
        node = g.node(variable)
        if node.constant:
            return node.concept
        if variable in emitted:
            return variable
        emitted.add(variable)
        parts = [f"({variable} / {node.concept}"]
        for e in by_source.get(variable, []):
            parts.append(f"{e.relation} {emit(e.target)}")
        return " ".join(parts) + ")"

    return emit(g.root)


def concepts(g: AmrGraph) -> list[str]:
    """Concept strings in depth-first order from the root.

    Edges are followed in declaration order; each node contributes its
    concept once, at first visit, so re-entrant references add nothing.
    """
    by_source: dict[str, list[AmrEdge]] = {}
    for e in g.edges:
        by_source.setdefault(e.source, []).append(e)
    seen: set[str] = set()
    out: list[str] = []
    stack = [g.root]
    while stack:
        var = stack.pop()
        if var in seen:
            continue
        seen.add(var)
        out.append(g.node(var).concept)
        children = [e.target for e in by_source.get(var, [])]
        stack.extend(reversed(children))
    return out


def _paren_balance_ok(text: str) -> bool:
    depth = 0
    for c in text:
        if c == "(":
            depth += 1
        elif c == ")":
            depth -= 1
            if depth < 0:
                return False
    return depth == 0


def validate_structure(text: str, kind: StructureKind) -> ValidationReport:
    """Check a generated structure without mutating or normalizing it.

    AMR text is fully parsed and any parse error becomes a finding.
    Dependency and constituency parses are opaque, so only non-emptiness
    and paren balance are checked.
    """
    findings: list[ValidationFinding] = []
    if kind is StructureKind.AMR:
        try:
            parse_amr(text)
        except AmrError as exc:
            findings.append(ValidationFinding(code=type(exc).__name__, message=str(exc)))
    else:
        if not text.strip():
            findings.append(ValidationFinding(code="EmptyStructure", message="structure text is empty"))
        elif not _paren_balance_ok(text):
            findings.append(ValidationFinding(code="UnbalancedParens", message="parentheses do not balance"))
    return ValidationReport(kind=kind, ok=not findings, findings=tuple(findings))
