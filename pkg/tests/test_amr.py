import json
import random
from pathlib import Path

import pytest

import cofnlu.amr as amr_mod
from cofnlu.amr import (
    AmrError,
    AmrGraph,
    StructureKind,
    concepts,
    parse_amr,
    serialize_amr,
    validate_structure,
)

FIXTURE = Path(__file__).parent / "fixtures" / "amr_cases.json"
CASES = json.loads(FIXTURE.read_text())
VALID_CASES = [c for c in CASES if "error" not in c]
ERROR_CASES = [c for c in CASES if "error" in c]


@pytest.mark.parametrize("case", VALID_CASES, ids=lambda c: c["text"][:40])
def test_fixture_valid_cases(case):
    g = parse_amr(case["text"])
    assert len(g.nodes) == case["nodes"]
    assert len(g.edges) == case["edges"]
    assert g.node(g.root).concept == case["root_concept"]


@pytest.mark.parametrize("case", ERROR_CASES, ids=lambda c: c["text"][:40] or "<blank>")
def test_fixture_error_cases(case):
    expected = getattr(amr_mod, case["error"])
    with pytest.raises(expected):
        parse_amr(case["text"])


def test_remind_example_shape():
    g = parse_amr('(r / remind-01 :ARG1 (p / person :name (j / "John")))')
    assert g.root == "r"
    assert {n.variable for n in g.nodes} == {"r", "p", "j"}
    assert [(e.source, e.relation, e.target) for e in g.edges] == [
        ("r", ":ARG1", "p"),
        ("p", ":name", "j"),
    ]
    assert concepts(g) == ["remind-01", "person", '"John"']


def test_self_edge_re_entrancy():
    g = parse_amr("(a / b :r a)")
    assert len(g.nodes) == 1
    assert g.edges[0].source == "a" and g.edges[0].target == "a"


def test_concepts_depth_first_order():
    g = parse_amr("(a / top :x (b / left :y (c / deep)) :z (d / right))")
    assert concepts(g) == ["top", "left", "deep", "right"]


def test_concepts_root_only():
    assert concepts(parse_amr("(x / thing)")) == ["thing"]


def test_reused_variable_adds_edge_not_node():
    g = parse_amr("(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-02 :ARG0 b))")
    assert len(g.nodes) == 3
    assert sum(1 for e in g.edges if e.target == "b") == 2


def canonical_form(g: AmrGraph) -> str:
    """Serialization with variables renamed by first-visit order.

    Comparing canonical forms checks isomorphism on the (concept, relation)
    structure for graphs whose edge declaration order matches, which holds
    along the serialize -> parse path.
    """
    rename: dict[str, str] = {}
    by_source: dict[str, list] = {}
    for e in g.edges:
        by_source.setdefault(e.source, []).append(e)

    def walk(var: str) -> str:
        node = g.node(var)
        if node.constant:
            return node.concept
        if var in rename:
            return rename[var]
        rename[var] = f"v{len(rename)}"
        parts = [f"({rename[var]} / {node.concept}"]
        for e in by_source.get(var, []):
            parts.append(f"{e.relation} {walk(e.target)}")
        return " ".join(parts) + ")"

    return walk(g.root)


class RandomAmrBuilder:
    """Generates random graphs and writes their PENMAN text directly.

    The text is produced independently of serialize_amr (with randomized
    whitespace), so parsing it checks the parser against ground-truth node
    and edge counts rather than against its own inverse.
    """

    CONCEPTS = ["want-01", "go-02", "person", "city", "thing", "meet-03", "remind-01", "music", "now", "and"]
    STRINGS = ['"John"', '"New York"', '"7pm"']

    def __init__(self, rng: random.Random):
        self.rng = rng
        self.counter = 0

    def fresh_var(self) -> str:
        self.counter += 1
        return f"v{self.counter}"

    def build(self, max_nodes: int = 6):
        self.counter = 0
        n_nodes = self.rng.randint(1, max_nodes)
        declared: list[str] = []
        n_edges = 0
        n_constants = 0

        def node_text(budget: list[int]) -> str:
            nonlocal n_edges, n_constants
            var = self.fresh_var()
            declared.append(var)
            parts = [f"({var}", self.maybe_ws("/"), self.rng.choice(self.CONCEPTS)]
            while budget[0] > 0 and self.rng.random() < 0.6:
                budget[0] -= 1
                rel = f":r{self.rng.randint(0, 9)}"
                roll = self.rng.random()
                if roll < 0.55:
                    parts.append(f"{rel} {node_text(budget)}")
                    n_edges += 1
                elif roll < 0.75 and declared:
                    parts.append(f"{rel} {self.rng.choice(declared)}")
                    n_edges += 1
                elif roll < 0.9:
                    parts.append(f"{rel} {self.rng.choice(self.STRINGS)}")
                    n_edges += 1
                    n_constants += 1
                else:
                    parts.append(f"{rel} {self.rng.randint(0, 99)}")
                    n_edges += 1
                    n_constants += 1
            return self.ws_join(parts) + ")"

        budget = [n_nodes - 1]
        text = node_text(budget)
        return text, len(declared) + n_constants, n_edges

    def maybe_ws(self, s: str) -> str:
        pad = " " * self.rng.randint(0, 2)
        return f"{pad}{s}{pad or ' '}"

    def ws_join(self, parts: list[str]) -> str:
        sep = self.rng.choice([" ", "  ", "\n  ", " "])
        return sep.join(parts)


def test_generated_graphs_counts_and_round_trip():
    rng = random.Random(31337)
    builder = RandomAmrBuilder(rng)
    for _ in range(150):
        text, n_nodes, n_edges = builder.build()
        g = parse_amr(text)
        assert len(g.nodes) == n_nodes
        assert len(g.edges) == n_edges
        g2 = parse_amr(serialize_amr(g))
        assert canonical_form(g2) == canonical_form(g)
        assert len(g2.nodes) == len(g.nodes)
        assert len(g2.edges) == len(g.edges)


def test_serialize_emits_re_entrant_reference_once():
    g = parse_amr("(k / know-01 :ARG0 (p / person) :ARG1 p)")
    text = serialize_amr(g)
    assert text.count("person") == 1
    assert canonical_form(parse_amr(text)) == canonical_form(g)


class TestValidateStructure:
    def test_valid_amr_ok(self):
        report = validate_structure("(x / thing)", StructureKind.AMR)
        assert report.ok and report.findings == ()

    def test_unbalanced_amr_reported(self):
        report = validate_structure("((", StructureKind.AMR)
        assert not report.ok
        assert report.findings[0].code == "UnbalancedParens"

    def test_dangling_reference_reported(self):
        report = validate_structure("(a / b :r zz)", StructureKind.AMR)
        assert not report.ok
        assert report.findings[0].code == "DanglingReference"

    @pytest.mark.parametrize("kind", [StructureKind.DEPENDENCY_PARSE, StructureKind.CONSTITUENCY_PARSE])
    def test_opaque_kinds_accept_nonempty_text(self, kind):
        assert validate_structure("nsubj(remind, John)", kind).ok
        assert validate_structure("plain prose description", kind).ok

    def test_opaque_kinds_reject_empty_and_unbalanced(self):
        report = validate_structure("   ", StructureKind.DEPENDENCY_PARSE)
        assert not report.ok and report.findings[0].code == "EmptyStructure"
        report = validate_structure("((S (NP)", StructureKind.CONSTITUENCY_PARSE)
        assert not report.ok and report.findings[0].code == "UnbalancedParens"

    def test_validation_idempotent_and_non_mutating(self):
        text = "(a / b :r zz)"
        first = validate_structure(text, StructureKind.AMR)
        second = validate_structure(text, StructureKind.AMR)
        assert first == second


def test_parser_never_raises_non_amr_errors_on_noise():
    rng = random.Random(99)
    alphabet = '()/:"abc 123-'
    for _ in range(500):
        s = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 25)))
        try:
            parse_amr(s)
        except AmrError:
            pass
