"""Regenerate the shipped demo fixtures under demo/.

Produces:
  demo/dataset.jsonl       20 test-domain + 4 train-domain synthetic examples
  demo/replay.jsonl        recorded completions for the demo config's run
  demo/golden_metrics.json the per-seed metrics of that run, frozen

The recorded completions come from a deterministic stand-in model that
answers each pipeline step from the example's gold annotation, with a fixed
set of planted mistakes (wrong intent, dropped value, wrong slot type,
malformed structure) so the golden metrics are not trivially perfect and
the non-fatal validation path is exercised.

Replay keys hash the full prompt text, so rerun this script whenever the
step templates, the demo config, or the demo dataset change:

    python3 scripts/make_demo_fixtures.py
"""

from __future__ import annotations

import json
import re
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from cofnlu.backend import Backend, CompletionRequest, CompletionResponse, RecordingBackend
from cofnlu.config import load_config
from cofnlu.dataset import load_dataset
from cofnlu.logicform import parse_logic_form
from cofnlu.runner import run_experiment

DEMO = REPO / "demo"

# id, domain, utterance, gold logic form
ROWS = [
    ("ev1", "events", "any music festivals in atlanta this weekend",
     "[IN:GET_EVENT [SL:CATEGORY_EVENT: music festivals] [SL:LOCATION: atlanta] [SL:DATE_TIME: this weekend]]"),
    ("ev2", "events", "what concerts are happening tonight",
     "[IN:GET_EVENT [SL:CATEGORY_EVENT: concerts] [SL:DATE_TIME: tonight]]"),
    ("ev3", "events", "are there art shows downtown",
     "[IN:GET_EVENT [SL:CATEGORY_EVENT: art shows] [SL:LOCATION: downtown]]"),
    ("ev4", "events", "when does the farmers market start",
     "[IN:GET_EVENT_TIME [SL:CATEGORY_EVENT: farmers market]]"),
    ("ev5", "events", "find food truck events near me",
     "[IN:GET_EVENT [SL:CATEGORY_EVENT: food truck events] [SL:LOCATION: near me]]"),
    ("ev6", "events", "what is happening this weekend",
     "[IN:GET_EVENT [SL:DATE_TIME: this weekend]]"),
    ("ev7", "events", "any comedy nights on friday",
     "[IN:GET_EVENT [SL:CATEGORY_EVENT: comedy nights] [SL:DATE_TIME: on friday]]"),
    ("rem1", "reminders", "set up a reminder to message mike at 7pm tonight",
     "[IN:CREATE_REMINDER [SL:TODO: message mike] [SL:DATE_TIME: at 7pm tonight]]"),
    ("rem2", "reminders", "remind me to water the plants tomorrow morning",
     "[IN:CREATE_REMINDER [SL:TODO: water the plants] [SL:DATE_TIME: tomorrow morning]]"),
    ("rem3", "reminders", "delete all my reminders",
     "[IN:DELETE_REMINDER]"),
    ("rem4", "reminders", "what reminders do i have for friday",
     "[IN:GET_REMINDER [SL:DATE_TIME: for friday]]"),
    ("rem5", "reminders", "remind me to call grandma on sunday",
     "[IN:CREATE_REMINDER [SL:TODO: call grandma] [SL:DATE_TIME: on sunday]]"),
    ("rem6", "reminders", "cancel the dentist reminder",
     "[IN:DELETE_REMINDER [SL:TODO: dentist]]"),
    ("rem7", "reminders", "show my reminders",
     "[IN:GET_REMINDER]"),
    ("wea1", "weather", "what is the weather in boston",
     "[IN:GET_WEATHER [SL:LOCATION: boston]]"),
    ("wea2", "weather", "will it rain tomorrow",
     "[IN:GET_WEATHER [SL:WEATHER_ATTRIBUTE: rain] [SL:DATE_TIME: tomorrow]]"),
    ("wea3", "weather", "how hot is it today",
     "[IN:GET_WEATHER [SL:WEATHER_ATTRIBUTE: hot] [SL:DATE_TIME: today]]"),
    ("wea4", "weather", "do i need an umbrella tonight",
     "[IN:GET_WEATHER [SL:WEATHER_ATTRIBUTE: umbrella] [SL:DATE_TIME: tonight]]"),
    ("wea5", "weather", "when is sunset today",
     "[IN:GET_SUNSET [SL:DATE_TIME: today]]"),
    ("wea6", "weather", "weather forecast for seattle this week",
     "[IN:GET_WEATHER [SL:LOCATION: seattle] [SL:DATE_TIME: this week]]"),
    ("cal1", "calls", "call my mom",
     "[IN:CREATE_CALL [SL:CONTACT: mom]]"),
    ("cal2", "calls", "phone dad at noon",
     "[IN:CREATE_CALL [SL:CONTACT: dad] [SL:DATE_TIME: at noon]]"),
    ("cal3", "calls", "end the call",
     "[IN:END_CALL]"),
    ("cal4", "calls", "answer the incoming call",
     "[IN:ANSWER_CALL]"),
]

WRONG_INTENT = {"ev6": "GET_EVENT_TIME", "rem7": "DELETE_REMINDER"}
DROP_LAST_VALUE = {"ev1", "wea2"}
WRONG_FIRST_TYPE = {"rem4": "TODO", "wea6": "CONTACT"}
BROKEN_STRUCTURE = {"ev3", "rem2"}

_UTTERANCE_RE = re.compile(r"^Utterance: (.+)$", re.MULTILINE)


def structure_text(example_id: str, intent: str, domain: str) -> str:
    if example_id in BROKEN_STRUCTURE:
        return "(x0 / broken-structure (("
    concept = intent.lower().replace("_", "-")
    return f"(s0 / {concept} :domain (d0 / {domain}))"


def model_pairs(example_id: str, gold) -> list[tuple[str, str]]:
    pairs = [(e.slot_value, e.slot_type) for e in gold.slots]
    if example_id in DROP_LAST_VALUE and pairs:
        pairs = pairs[:-1]
    if example_id in WRONG_FIRST_TYPE and pairs:
        value, _ = pairs[0]
        pairs[0] = (value, WRONG_FIRST_TYPE[example_id])
    return pairs


class DemoModel(Backend):
    """Answers pipeline prompts from the gold labels with planted mistakes.

    Completion lists are [answer, answer, decoy] so majority voting at n=3
    has to do real work.
    """

    def __init__(self, by_utterance: dict[str, tuple]):
        self.by_utterance = by_utterance

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        match = _UTTERANCE_RE.search(req.prompt)
        if not match:
            raise AssertionError(f"no utterance line in prompt: {req.prompt[:80]!r}")
        example_id, domain, gold = self.by_utterance[match.group(1)]
        intent = WRONG_INTENT.get(example_id, gold.intent)
        pairs = model_pairs(example_id, gold)
        if "Generate the" in req.prompt:
            answer = structure_text(example_id, gold.intent, domain)
            decoy = "(z9 / something-else)"
        elif "What is the intent" in req.prompt:
            answer = f"The intent is {intent}."
            decoy = "The intent is MAYBE_UNSURE."
        elif "List the slot values" in req.prompt:
            answer = "\n".join(v for v, _ in pairs) or "none"
            decoy = (answer + "\nperhaps something") if pairs else "perhaps something"
        elif "Label each identified slot value" in req.prompt:
            answer = "\n".join(f"{v} -> {t}" for v, t in pairs) or "none"
            decoy = "\n".join(f"{v} -> OTHER" for v, _ in pairs) or "maybe -> OTHER"
        elif "Aggregate the intent" in req.prompt:
            parts = [f"[IN:{intent}"] + [f"[SL:{t}: {v}]" for v, t in pairs]
            answer = " ".join(parts) + "]"
            decoy = "[IN:MAYBE_UNSURE]"
        else:
            raise AssertionError(f"unrecognized step prompt: {req.prompt[:80]!r}")
        completions = ([answer] * (req.n - 1) + [decoy])[: req.n]
        return CompletionResponse(completions=tuple(completions))


def write_dataset(path: Path) -> None:
    records = []
    for example_id, domain, utterance, form in ROWS:
        gold = parse_logic_form(form)
        annotations = {
            "amr_text": structure_text("", gold.intent, domain),
            "intent": gold.intent,
            "slot_values": [e.slot_value for e in gold.slots],
            "slot_pairs": [[e.slot_value, e.slot_type] for e in gold.slots],
            "logic_form": form,
        }
        records.append({
            "id": example_id,
            "utterance": utterance,
            "domain": domain,
            "logic_form": form,
            "step_annotations": annotations,
        })
    path.write_text("\n".join(json.dumps(r, sort_keys=True) for r in records) + "\n", encoding="utf-8")


def main() -> None:
    DEMO.mkdir(exist_ok=True)
    write_dataset(DEMO / "dataset.jsonl")

    dataset = load_dataset(DEMO / "dataset.jsonl", "native_jsonl")
    by_utterance = {ex.utterance: (ex.id, ex.domain, ex.gold) for ex in dataset.examples}

    config = load_config(DEMO / "config.yaml", {"backend.mode": "mock"})
    recorder = RecordingBackend(DemoModel(by_utterance), DEMO / "replay.jsonl")
    result = run_experiment(config, backend=recorder, write_outputs=False)

    golden = result.seed_runs[0].report.to_dict()
    (DEMO / "golden_metrics.json").write_text(json.dumps(golden, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"dataset: {len(dataset.examples)} examples")
    print(f"archive: {len((DEMO / 'replay.jsonl').read_text().splitlines()) - 1} records")
    print(f"golden:  {golden}")


if __name__ == "__main__":
    main()
