import json

from cofnlu.metrics import MetricsReport, aggregate_seeds
from cofnlu.report import (
    format_mean_std,
    format_table,
    render_metrics_figure,
    result_record,
    write_results_jsonl,
    write_results_tsv,
)


def make_aggregate():
    reports = [
        MetricsReport(0.55, 0.21, 0.10, 0.08, 200),
        MetricsReport(0.60, 0.25, 0.12, 0.10, 200),
        MetricsReport(0.58, 0.23, 0.08, 0.09, 200),
    ]
    return aggregate_seeds(reports)


class TestFormatting:
    def test_mean_std_two_decimals_percent(self):
        assert format_mean_std(0.5767, 0.0275) == "57.67 ± 2.75"
        assert format_mean_std(0.09, 0.01) == "9.00 ± 1.00"

    def test_table_groups_and_rows(self):
        table = format_table({"cof_cot": make_aggregate(), "direct": make_aggregate()})
        assert "NLU" in table and "Semantic Parsing" in table
        assert "Intent Acc" in table and "Exact Match" in table
        lines = table.splitlines()
        assert any(line.startswith("cof_cot") for line in lines)
        assert any(line.startswith("direct") for line in lines)
        assert "±" in lines[-1]

    def test_table_cell_value(self):
        table = format_table({"run": make_aggregate()})
        # mean intent accuracy = (0.55 + 0.60 + 0.58) / 3 = 0.576667
        assert "57.67" in table


class TestFiles:
    def test_results_jsonl(self, tmp_path):
        record = result_record("run", "abc123", 7, MetricsReport(1, 1, 1, 1, 5))
        path = tmp_path / "results.jsonl"
        write_results_jsonl([record], path)
        loaded = json.loads(path.read_text().splitlines()[0])
        assert loaded["seed"] == 7
        assert loaded["config_hash"] == "abc123"
        assert loaded["metrics"]["exact_match"] == 1

    def test_results_tsv_shape(self, tmp_path):
        path = tmp_path / "results.tsv"
        write_results_tsv({"run": make_aggregate()}, path)
        lines = path.read_text().splitlines()
        header = lines[0].split("\t")
        assert header[:2] == ["run", "seed"]
        assert "slot_f1" in header
        # 3 per-seed rows + mean + std
        assert len(lines) == 1 + 3 + 2
        assert lines[-2].split("\t")[1] == "mean"
        assert lines[-1].split("\t")[1] == "std"

    def test_figure_written(self, tmp_path):
        path = tmp_path / "metrics.png"
        out = render_metrics_figure({"cof_cot": make_aggregate(), "direct": make_aggregate()}, path)
        assert out.exists()
        assert out.stat().st_size > 1000
        with out.open("rb") as fh:
            assert fh.read(8) == b"\x89PNG\r\n\x1a\n"
