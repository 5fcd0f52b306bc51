"""Command line driver.

Subcommands:
  run             execute an experiment from a config file (plus overrides)
  score           score an existing predictions file against gold forms
  validate-data   load a dataset and print its statistics
  render-prompts  dry-run prompt rendering, no backend calls
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .backend import BackendError
from .config import ConfigError, RunConfig, load_config
from .dataset import DatasetError, load_dataset
from .logicform import LogicFormError
from .pipeline import PipelineError
from .metrics import aggregate_seeds
from .report import format_table, render_metrics_figure, write_results_jsonl
from .runner import render_prompts_preview, run_experiment, score_prediction_pairs


def _fail(message: str) -> None:
    raise click.ClickException(message)


def _load(config_path: str, overrides: dict) -> RunConfig:
    try:
        return load_config(config_path, overrides)
    except ConfigError as exc:
        _fail(str(exc))


@click.group()
@click.version_option(package_name="cofnlu")
def main() -> None:
    """Prompting experiments for multi-grained NLU over flat logic forms."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True), help="YAML run config.")
@click.option("--strategy", default=None, help="Override strategy.name.")
@click.option("--plan", "plan_name", default=None, help="Override plan.order (cof, foc, random).")
@click.option("--seed", "seeds", multiple=True, type=int, help="Override sample.seeds (repeatable).")
@click.option("--k", default=None, type=int, help="Override fewshot.k.")
@click.option("--mode", default=None, help="Override fewshot.mode.")
@click.option("--backend", "backend_mode", default=None, type=click.Choice(["live", "record", "replay", "mock"]))
@click.option("--out", default=None, type=click.Path(), help="Override output.dir.")
@click.option("--n-per-seed", default=None, type=int, help="Override sample.n.")
@click.option("--no-domain", is_flag=True, default=False, help="Disable domain conditioning.")
@click.option("--drop", default=None, help="Comma-separated steps to remove (e.g. structure,intent).")
def run(config_path, strategy, plan_name, seeds, k, mode, backend_mode, out, n_per_seed, no_domain, drop):
    """Run the configured experiment across its seeds and write results."""
    overrides: dict = {
        "strategy.name": strategy,
        "plan.order": plan_name,
        "fewshot.k": k,
        "fewshot.mode": mode,
        "backend.mode": backend_mode,
        "output.dir": out,
        "sample.n": n_per_seed,
    }
    if seeds:
        overrides["sample.seeds"] = list(seeds)
    if no_domain:
        overrides["plan.condition_domain"] = False
    if drop is not None:
        overrides["plan.drop"] = [s.strip() for s in drop.split(",") if s.strip()]
    config = _load(config_path, overrides)
    try:
        result = run_experiment(config)
    except (ConfigError, DatasetError, BackendError, PipelineError) as exc:
        _fail(str(exc))
    click.echo(result.table())
    total_failures = sum(run.n_failures for run in result.seed_runs)
    total_examples = sum(len(run.results) for run in result.seed_runs)
    click.echo(f"\nexamples: {total_examples}  failures: {total_failures}  config: {result.config_hash}")
    if result.output_dir is not None:
        click.echo(f"outputs written to {result.output_dir}")


def _read_pairs(path: Path, pred_key: str, gold_key: str) -> list[tuple[str, str]]:
    pairs: list[tuple[str, str]] = []
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".jsonl":
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            record = json.loads(line)
            if pred_key not in record or gold_key not in record:
                _fail(f"line {lineno}: records need {pred_key!r} and {gold_key!r} fields")
            pairs.append((record[pred_key], record[gold_key]))
    else:
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            cells = line.split("\t")
            if len(cells) < 2:
                _fail(f"line {lineno}: expected two tab-separated columns (prediction, gold)")
            pairs.append((cells[0], cells[1]))
    if not pairs:
        _fail(f"{path} contains no prediction pairs")
    return pairs


@main.command()
@click.argument("predictions", type=click.Path(exists=True, path_type=Path))
@click.option("--pred-key", default="pred", help="JSONL field holding the prediction.")
@click.option("--gold-key", default="gold", help="JSONL field holding the gold form.")
@click.option("--out", default=None, type=click.Path(path_type=Path), help="Directory for results and figure.")
@click.option("--label", default="scored", help="Run label used in the table.")
def score(predictions, pred_key, gold_key, out, label):
    """Score a predictions file: TSV (pred, gold) or JSONL with pred/gold."""
    pairs = _read_pairs(predictions, pred_key, gold_key)
    try:
        report, n_unparseable = score_prediction_pairs(pairs)
    except LogicFormError as exc:
        _fail(str(exc))
    aggregate = aggregate_seeds([report])
    click.echo(format_table({label: aggregate}))
    click.echo(f"\nexamples: {int(report.n_examples)}  unparseable predictions: {n_unparseable}")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_results_jsonl(
            [{"run": label, "seed": 0, "metrics": report.to_dict()}], out / "results.jsonl"
        )
        render_metrics_figure({label: aggregate}, out / "metrics.png")
        click.echo(f"outputs written to {out}")


@main.command("validate-data")
@click.option("--path", "data_path", required=True, type=click.Path(exists=True), help="Dataset file.")
@click.option(
    "--format",
    "data_format",
    required=True,
    type=click.Choice(["native_jsonl", "mtop_tsv", "massive_jsonl"]),
)
def validate_data(data_path, data_format):
    """Load a dataset, check every gold form, and print its statistics."""
    try:
        ds = load_dataset(data_path, data_format)
    except DatasetError as exc:
        _fail(str(exc))
    for line in ds.stats.lines():
        click.echo(line)
    click.echo("domains: " + ", ".join(sorted(ds.domains)))


@main.command("render-prompts")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True), help="YAML run config.")
@click.option("--limit", default=3, type=int, show_default=True, help="Examples to render.")
def render_prompts(config_path, limit):
    """Print every prompt the configured run would send, without sending."""
    config = _load(config_path, {})
    try:
        prompts = render_prompts_preview(config, limit=limit)
    except (ConfigError, DatasetError, PipelineError) as exc:
        _fail(str(exc))
    for example_id, step, prompt in prompts:
        click.echo(f"### example {example_id} step {step}")
        click.echo(prompt)
        click.echo()


if __name__ == "__main__":
    sys.exit(main())
