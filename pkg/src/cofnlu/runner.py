"""Experiment orchestration: seeds, strategy dispatch, scoring, outputs.

One run is: for each seed, sample a test set from the held-out domains,
pick demonstrations if few-shot, execute the configured strategy over every
example (the multi-step pipeline or a single-shot baseline), score the
predicted logic forms against gold, then aggregate across seeds and write
results, traces, the table, a config snapshot, and the metrics figure.

Seeds run sequentially to keep API spend bounded and results ordered;
examples within a seed run concurrently up to run.parallelism. Per-example
failures never abort the run; they score zero and are counted in the
summary.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .backend import (
    Backend,
    BackendError,
    CompletionRequest,
    HttpChatBackend,
    MockBackend,
    RecordingBackend,
    ReplayBackend,
)
from .config import RunConfig, save_config_snapshot
from .dataset import Example, Vocab, load_dataset, make_split, sample_test_sets, select_demonstrations
from .logicform import LogicForm
from .metrics import MetricsReport, SeedAggregate, aggregate_seeds, compute_report
from .pipeline import (
    DecodingSettings,
    Failure,
    NoExtractableAnswer,
    PipelinePlan,
    PipelineResult,
    Selection,
    StepId,
    StepTrace,
    compose_plan,
    parse_step_output,
    render_step_prompt,
    run_example,
)
from .report import format_table, render_metrics_figure, result_record, write_results_jsonl, write_results_tsv
from .strategies import Strategy, aggregate_with_index, build_prompt, normalize_completion

MOCK_FALLBACK_COMPLETION = "[IN:UNKNOWN]"

# Strategies whose demonstrations need hand-prepared step annotations; the
# direct baseline only needs the gold form.
ANNOTATION_STRATEGIES = frozenset(
    {Strategy.COT, Strategy.SC_COT, Strategy.COMPLEX_COT, Strategy.LEAST_TO_MOST, Strategy.COF_COT}
)


@dataclass(frozen=True)
class SeedRun:
    seed: int
    report: MetricsReport
    results: tuple[PipelineResult, ...]
    n_failures: int


@dataclass(frozen=True)
class ExperimentResult:
    label: str
    config_hash: str
    seed_runs: tuple[SeedRun, ...]
    aggregate: SeedAggregate
    output_dir: Path | None

    def table(self) -> str:
        return format_table({self.label: self.aggregate})


def make_backend(config: RunConfig) -> Backend:
    mode = config.backend.mode
    b = config.backend
    if mode == "mock":
        if b.mock_rules:
            return MockBackend.from_rules_file(config.resolve(b.mock_rules), default=MOCK_FALLBACK_COMPLETION)
        return MockBackend.static(MOCK_FALLBACK_COMPLETION)
    if mode == "replay":
        return ReplayBackend(config.resolve(b.archive))
    live = HttpChatBackend(
        base_url=b.base_url,
        max_retries=b.max_retries,
        requests_per_second=b.requests_per_second,
        max_concurrent_requests=b.max_concurrent_requests,
        timeout=b.timeout,
    )
    if mode == "record":
        return RecordingBackend(live, config.resolve(b.archive))
    return live


def plan_from_config(config: RunConfig) -> PipelinePlan:
    return compose_plan(
        order_name=config.plan.order,
        drop=config.drop_steps(),
        condition_domain=config.plan.condition_domain,
        structure_kind=config.structure_kind(),
    )


def decoding_from_config(config: RunConfig) -> DecodingSettings:
    return DecodingSettings(
        model=config.backend.model,
        temperature=config.strategy.temperature,
        n=config.strategy.n,
        max_tokens=config.backend.max_tokens,
        aggregator=config.aggregator_obj(),
        llm_step5=config.plan.llm_step5,
    )


def run_label(config: RunConfig) -> str:
    parts = [config.strategy.name]
    if config.strategy_enum() is Strategy.COF_COT:
        if config.plan.order != "cof":
            parts.append(config.plan.order)
        if config.plan.drop:
            parts.append("drop_" + "+".join(config.plan.drop))
        if not config.plan.condition_domain:
            parts.append("no_domain")
        if config.plan.structure != "amr":
            parts.append(config.plan.structure)
    if config.fewshot.k:
        parts.append(f"k{config.fewshot.k}")
    return "/".join(parts)


def run_single_shot(
    example: Example,
    strategy: Strategy,
    settings: DecodingSettings,
    backend: Backend,
    vocab: Vocab,
    demonstrations: Sequence[Example] = (),
    include_domain: bool = True,
    template_dir=None,
    vocab_domain: str | None = None,
) -> PipelineResult:
    """One baseline completion: prompt, sample, aggregate, parse the form."""
    prompt = build_prompt(
        strategy,
        example,
        vocab,
        demonstrations=demonstrations,
        include_domain=include_domain,
        vocab_domain=vocab_domain,
        template_dir=template_dir,
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
            traces=(),
            failure=Failure(kind="backend_error", message=str(exc)),
        )
    index, reason = aggregate_with_index(response.completions, settings.aggregator, normalize_completion)
    selected = response.completions[index]
    final: LogicForm | None = None
    error = None
    try:
        final = parse_step_output(StepId.GEN_LOGIC_FORM, selected)
    except NoExtractableAnswer as exc:
        error = str(exc)
    trace = StepTrace(
        step=StepId.GEN_LOGIC_FORM,
        prompt=prompt,
        raw_completions=response.completions,
        parsed=final,
        selection=Selection(index=index, reason=reason),
        error=error,
    )
    if final is None:
        return PipelineResult(
            example_id=example.id,
            final=None,
            traces=(trace,),
            failure=Failure(kind="unparseable_final_form", message=error or "no form"),
        )
    return PipelineResult(example_id=example.id, final=final, traces=(trace,))


def _run_seed(
    config: RunConfig,
    strategy: Strategy,
    test_set: Sequence[Example],
    demonstrations: Sequence[Example],
    plan: PipelinePlan,
    settings: DecodingSettings,
    backend: Backend,
    vocab: Vocab,
    template_dir,
) -> list[PipelineResult]:
    def one(example: Example) -> PipelineResult:
        vocab_domain = example.domain if config.run.vocab_filter == "domain" else None
        if strategy is Strategy.COF_COT:
            return run_example(
                example,
                plan,
                settings,
                backend,
                vocab=vocab,
                demonstrations=demonstrations,
                template_dir=template_dir,
                vocab_domain=vocab_domain,
            )
        return run_single_shot(
            example,
            strategy,
            settings,
            backend,
            vocab,
            demonstrations=demonstrations,
            include_domain=config.plan.condition_domain,
            template_dir=template_dir,
            vocab_domain=vocab_domain,
        )

    if config.run.parallelism <= 1:
        return [one(ex) for ex in test_set]
    with ThreadPoolExecutor(max_workers=config.run.parallelism) as pool:
        return list(pool.map(one, test_set))


def run_experiment(config: RunConfig, backend: Backend | None = None, write_outputs: bool = True) -> ExperimentResult:
    """Execute the configured experiment end to end."""
    config.validate()
    strategy = config.strategy_enum()
    dataset = load_dataset(config.resolve(config.dataset.path), config.dataset.format)
    split = make_split(dataset.domains, config.split.test_domains)
    test_sets = sample_test_sets(dataset.examples, split.test_domains, config.sample.n, list(config.sample.seeds))
    plan = plan_from_config(config)
    settings = decoding_from_config(config)
    if backend is None:
        backend = make_backend(config)
    template_dir = config.resolve(config.templates_dir) if config.templates_dir else None
    label = run_label(config)
    config_hash = config.hash()

    seed_runs: list[SeedRun] = []
    for seed, test_set in zip(config.sample.seeds, test_sets):
        demonstrations = select_demonstrations(
            dataset.examples,
            split,
            config.fewshot.k,
            config.fewshot.mode,
            seed,
            require_annotations=strategy in ANNOTATION_STRATEGIES and config.fewshot.k > 0,
            exclude_ids=[ex.id for ex in test_set],
        )
        results = _run_seed(config, strategy, test_set, demonstrations, plan, settings, backend, dataset.vocab, template_dir)
        preds = [r.final for r in results]
        golds = [ex.gold for ex in test_set]
        report = compute_report(preds, golds)
        seed_runs.append(
            SeedRun(
                seed=seed,
                report=report,
                results=tuple(results),
                n_failures=sum(1 for r in results if r.failure is not None),
            )
        )

    aggregate = aggregate_seeds([run.report for run in seed_runs])
    output_dir = None
    if write_outputs:
        output_dir = config.resolve(config.output.dir)
        _write_outputs(config, label, config_hash, seed_runs, aggregate, output_dir)
    return ExperimentResult(
        label=label,
        config_hash=config_hash,
        seed_runs=tuple(seed_runs),
        aggregate=aggregate,
        output_dir=output_dir,
    )


def _write_outputs(
    config: RunConfig,
    label: str,
    config_hash: str,
    seed_runs: Sequence[SeedRun],
    aggregate: SeedAggregate,
    output_dir: Path,
) -> None:
    output_dir.mkdir(parents=True, exist_ok=True)
    save_config_snapshot(config.with_absolute_paths(), output_dir / "config_snapshot.yaml")
    records = [result_record(label, config_hash, run.seed, run.report) for run in seed_runs]
    write_results_jsonl(records, output_dir / "results.jsonl")
    write_results_tsv({label: aggregate}, output_dir / "results.tsv")
    (output_dir / "table.txt").write_text(format_table({label: aggregate}) + "\n", encoding="utf-8")
    with (output_dir / "traces.jsonl").open("w", encoding="utf-8") as fh:
        for run in seed_runs:
            for result in run.results:
                fh.write(json.dumps({"seed": run.seed, **result.to_dict()}, sort_keys=True) + "\n")
    if config.output.figures:
        render_metrics_figure({label: aggregate}, output_dir / "metrics.png")


def record_session(config: RunConfig, backend: Backend | None = None) -> Path:
    """Run the experiment in record mode and return the archive path.

    ``backend`` overrides the live side for tests; responses still flow
    through the recording wrapper.
    """
    if backend is None:
        if config.backend.mode not in ("live", "record"):
            raise ValueError("record_session needs a live backend (backend.mode live or record)")
        backend = HttpChatBackend(
            base_url=config.backend.base_url,
            max_retries=config.backend.max_retries,
            requests_per_second=config.backend.requests_per_second,
            max_concurrent_requests=config.backend.max_concurrent_requests,
            timeout=config.backend.timeout,
        )
    archive = config.resolve(config.backend.archive)
    recording = RecordingBackend(backend, archive)
    run_experiment(config, backend=recording)
    return archive


def score_prediction_pairs(pairs: Sequence[tuple[str, str]]) -> tuple[MetricsReport, int]:
    """Score (predicted text, gold text) pairs; returns (report, n_unparseable).

    Gold forms must parse; predictions that do not parse score zero.
    """
    from .logicform import LogicFormError, parse_logic_form

    preds: list[LogicForm | None] = []
    golds: list[LogicForm] = []
    n_unparseable = 0
    for i, (pred_text, gold_text) in enumerate(pairs, start=1):
        try:
            golds.append(parse_logic_form(gold_text))
        except LogicFormError as exc:
            raise LogicFormError(f"gold form on line {i} does not parse: {exc}") from exc
        try:
            preds.append(parse_step_output(StepId.GEN_LOGIC_FORM, pred_text))
        except NoExtractableAnswer:
            preds.append(None)
            n_unparseable += 1
    return compute_report(preds, golds), n_unparseable


def render_prompts_preview(config: RunConfig, limit: int = 3) -> list[tuple[str, str, str]]:
    """Dry-run prompt rendering without any backend calls.

    Returns (example_id, step name, prompt) triples. Conditioned fields that
    would come from earlier steps are filled with visible stand-ins.
    """
    config.validate()
    strategy = config.strategy_enum()
    dataset = load_dataset(config.resolve(config.dataset.path), config.dataset.format)
    split = make_split(dataset.domains, config.split.test_domains)
    test_sets = sample_test_sets(
        dataset.examples, split.test_domains, config.sample.n, [config.sample.seeds[0]]
    )
    examples = test_sets[0][:limit]
    seed = config.sample.seeds[0]
    demonstrations = select_demonstrations(
        dataset.examples,
        split,
        config.fewshot.k,
        config.fewshot.mode,
        seed,
        require_annotations=strategy in ANNOTATION_STRATEGIES and config.fewshot.k > 0,
        exclude_ids=[ex.id for ex in examples],
    )
    template_dir = config.resolve(config.templates_dir) if config.templates_dir else None
    out: list[tuple[str, str, str]] = []
    if strategy is not Strategy.COF_COT:
        for ex in examples:
            vocab_domain = ex.domain if config.run.vocab_filter == "domain" else None
            prompt = build_prompt(
                strategy,
                ex,
                dataset.vocab,
                demonstrations=demonstrations,
                include_domain=config.plan.condition_domain,
                vocab_domain=vocab_domain,
                template_dir=template_dir,
            )
            out.append((ex.id, strategy.value, prompt))
        return out
    plan = plan_from_config(config)
    stand_ins = {
        StepId.GEN_STRUCTURE: "<structure>",
        StepId.GEN_INTENT: "<intent>",
        StepId.GEN_SLOT_VALUES: "<slot values>",
        StepId.GEN_SLOT_PAIRS: "<slot pairs>",
    }
    for ex in examples:
        vocab_domain = ex.domain if config.run.vocab_filter == "domain" else None
        for step in plan.order:
            if step is StepId.GEN_LOGIC_FORM and not config.plan.llm_step5:
                continue
            prompt = render_step_prompt(
                step,
                plan,
                ex,
                stand_ins,
                vocab=dataset.vocab,
                demonstrations=demonstrations,
                template_dir=template_dir,
                vocab_domain=vocab_domain,
            )
            out.append((ex.id, step.value, prompt))
    return out
