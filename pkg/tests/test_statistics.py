"""
PR 10 — Statistics Tests

Testing Endpoints:
1. mean_sd skips undefined values and uses the population sd
2. per-seed reports aggregate per metric and per attack mode
3. generate_statistics reads 03_metrics_seed*.json and writes stats.json
4. tables render mean±sd and n/a
"""

import json

import pytest

from sessionguard.statistics import (
    StatisticsError,
    aggregate_reports,
    format_table,
    format_value,
    generate_statistics,
    mean_sd,
    write_jsonl,
)


def _report(seed, auroc, recall_input=None):
    per_mode = []
    if recall_input is not None:
        per_mode.append({"mode": "tool_input", "n": 4, "recall": recall_input, "auroc": auroc})
    return {"seed": seed, "protocol": "task_stratified", "auroc": auroc, "auprc": 0.5,
            "macro_f1": None, "precision": 1.0, "recall": 0.5, "fpr": 0.0, "per_mode": per_mode}


@pytest.mark.pr10
def test_mean_sd():
    """
    Testing Endpoint 1: None entries are ignored
    """
    assert mean_sd([0.8, 0.9, None]) == pytest.approx({"mean": 0.85, "sd": 0.05, "n": 2})
    assert mean_sd([None, None]) == {"mean": None, "sd": None, "n": 0}
    assert mean_sd([0.7])["sd"] == 0.0


@pytest.mark.pr10
def test_aggregate_reports():
    """
    Testing Endpoint 2: one entry per metric plus per-mode aggregates
    """
    stats = aggregate_reports([_report(7, 0.8, 0.5), _report(42, 1.0, 1.0)])
    assert stats["auroc"]["mean"] == pytest.approx(0.9)
    assert stats["auroc"]["sd"] == pytest.approx(0.1)
    assert stats["macro_f1"]["n"] == 0
    assert stats["seeds"] == [7, 42]
    assert stats["protocol"] == "task_stratified"
    assert stats["per_mode"]["tool_input"]["recall"]["mean"] == pytest.approx(0.75)
    assert stats["per_mode"]["tool_input"]["n_total"] == 8

    with pytest.raises(StatisticsError):
        aggregate_reports([])


@pytest.mark.pr10
def test_generate_statistics(tmp_path):
    """
    Testing Endpoint 3: files are ordered by seed and stats.json is written

    REAL TEST - Seed 123 sorts after 7 and 42 numerically.
    """
    for seed, auroc in ((123, 0.7), (7, 0.9), (42, 0.8)):
        (tmp_path / f"03_metrics_seed{seed}.json").write_text(json.dumps(_report(seed, auroc)), encoding="utf-8")

    stats = generate_statistics(tmp_path)

    assert stats["files"] == ["03_metrics_seed7.json", "03_metrics_seed42.json", "03_metrics_seed123.json"]
    assert stats["seeds"] == [7, 42, 123]
    assert stats["auroc"]["mean"] == pytest.approx(0.8)
    written = json.loads((tmp_path / "stats.json").read_text(encoding="utf-8"))
    assert written["auroc"] == stats["auroc"]


@pytest.mark.pr10
def test_generate_statistics_only_current_seeds(tmp_path):
    """
    REAL TEST - A seed file left over from an earlier run stays out of stats.json.
    """
    for seed, auroc in ((7, 0.6), (42, 0.8)):
        (tmp_path / f"03_metrics_seed{seed}.json").write_text(json.dumps(_report(seed, auroc)), encoding="utf-8")

    stats = generate_statistics(tmp_path, seeds=[42])

    assert stats["seeds"] == [42]
    assert stats["files"] == ["03_metrics_seed42.json"]
    assert stats["auroc"] == {"mean": 0.8, "sd": 0.0, "n": 1}
    written = json.loads((tmp_path / "stats.json").read_text(encoding="utf-8"))
    assert written["seeds"] == [42]

    with pytest.raises(StatisticsError):
        generate_statistics(tmp_path, seeds=[42, 123])
    with pytest.raises(StatisticsError):
        generate_statistics(tmp_path, seeds=[])


@pytest.mark.pr10
def test_generate_statistics_failures(tmp_path):
    with pytest.raises(StatisticsError):
        generate_statistics(tmp_path)
    (tmp_path / "03_metrics_seed7.json").write_text("{broken", encoding="utf-8")
    with pytest.raises(StatisticsError):
        generate_statistics(tmp_path)


@pytest.mark.pr10
def test_format_table():
    """
    Testing Endpoint 4: aligned plain text
    """
    rows = [
        {"method": "supervised", "auroc": {"mean": 0.91234, "sd": 0.01}, "flag": None},
        {"method": "ssl_ft", "auroc": {"mean": None, "sd": None}, "flag": True},
    ]
    table = format_table(rows, ["method", "auroc", "flag"]).splitlines()
    assert table[0].split() == ["method", "auroc", "flag"]
    assert table[2].split() == ["supervised", "0.912±0.010", "n/a"]
    assert table[3].split() == ["ssl_ft", "n/a", "yes"]
    assert format_value(0.5) == "0.500"
    with pytest.raises(StatisticsError):
        format_table(rows, ["method"], ["a", "b"])


@pytest.mark.pr10
def test_write_jsonl(tmp_path):
    path = tmp_path / "out" / "cells.jsonl"
    assert write_jsonl(path, [{"b": 1, "a": 2}, {"a": None}]) == 2
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines == ['{"a": 2, "b": 1}', '{"a": null}']
