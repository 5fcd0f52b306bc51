"""Result rendering: text table, delimited files, JSONL records, and a
metrics figure.

The text table groups the sentence/token-level metrics (intent accuracy,
slot F1) separately from the connection metrics (frame accuracy, exact
match) and prints each cell as percent "mean ± std" with two decimals. The
same numbers go to a TSV next to the table, and a grouped bar chart with
std error bars is rendered to PNG on the same path.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import METRIC_FIELDS, MetricsReport, SeedAggregate

METRIC_TITLES = {
    "intent_accuracy": "Intent Acc",
    "slot_f1": "Slot F1",
    "frame_accuracy": "Frame Acc",
    "exact_match": "Exact Match",
}

NLU_FIELDS = ("intent_accuracy", "slot_f1")
SEMANTIC_FIELDS = ("frame_accuracy", "exact_match")


def format_mean_std(mean: float, std: float) -> str:
    """Percent cell with two decimals, e.g. fractions (0.5767, 0.0275) render
    as "57.67 ± 2.75"."""
    return f"{100 * mean:.2f} ± {100 * std:.2f}"


def format_table(aggregates: Mapping[str, SeedAggregate]) -> str:
    """One row per run label, metric columns grouped NLU vs Semantic Parsing."""
    header_groups = f"{'':24} | {'NLU':^29} | {'Semantic Parsing':^29}"
    titles = [METRIC_TITLES[f] for f in (*NLU_FIELDS, *SEMANTIC_FIELDS)]
    header_cols = f"{'Run':24} | " + " | ".join(f"{t:^13}" for t in titles)
    ruler = "-" * len(header_cols)
    lines = [header_groups, header_cols, ruler]
    for label, agg in aggregates.items():
        cells = [
            format_mean_std(getattr(agg.mean, f), getattr(agg.std, f))
            for f in (*NLU_FIELDS, *SEMANTIC_FIELDS)
        ]
        lines.append(f"{label:24} | " + " | ".join(f"{c:^13}" for c in cells))
    return "\n".join(lines)


def result_record(label: str, config_hash: str, seed: int, report: MetricsReport) -> dict:
    return {
        "run": label,
        "config_hash": config_hash,
        "seed": seed,
        "metrics": report.to_dict(),
    }


def write_results_jsonl(records: Sequence[dict], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def write_results_tsv(aggregates: Mapping[str, SeedAggregate], path: str | Path) -> None:
    """Per-seed rows plus mean/std rows, tab-delimited fractions."""
    columns = ["run", "seed", *METRIC_FIELDS, "n_examples"]
    lines = ["\t".join(columns)]

    def row(label: str, seed: str, report: MetricsReport) -> str:
        values = [f"{getattr(report, f):.6f}" for f in METRIC_FIELDS]
        return "\t".join([label, seed, *values, f"{report.n_examples:g}"])

    for label, agg in aggregates.items():
        for i, report in enumerate(agg.per_seed):
            lines.append(row(label, str(i), report))
        lines.append(row(label, "mean", agg.mean))
        lines.append(row(label, "std", agg.std))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def render_metrics_figure(aggregates: Mapping[str, SeedAggregate], path: str | Path) -> Path:
    """Grouped bar chart of the four metrics with std error bars."""
    path = Path(path)
    labels = list(aggregates)
    fields = list(METRIC_FIELDS)
    x = range(len(fields))
    width = 0.8 / max(1, len(labels))

    fig, ax = plt.subplots(figsize=(8, 4.5))
    for i, label in enumerate(labels):
        agg = aggregates[label]
        means = [100 * getattr(agg.mean, f) for f in fields]
        stds = [100 * getattr(agg.std, f) for f in fields]
        offsets = [xi + (i - (len(labels) - 1) / 2) * width for xi in x]
        ax.bar(offsets, means, width=width, yerr=stds, capsize=3, label=label)
    ax.set_xticks(list(x))
    ax.set_xticklabels([METRIC_TITLES[f] for f in fields])
    ax.set_ylabel("percent")
    ax.set_ylim(bottom=0)
    ax.set_title("Evaluation metrics (mean ± std over seeds)")
    if labels:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
