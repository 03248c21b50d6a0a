"""
PR 10 — Statistics

Aggregates per-seed metrics into mean ± sd and emits stats.json.

Reads:
- <out_dir>/03_metrics_seed<k>.json (one MetricsReport per seed)

Creates:
- <out_dir>/stats.json
"""

import json
import re
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np


class StatisticsError(Exception):
    """Raised when statistics aggregation fails"""
    pass


METRIC_KEYS = ["auroc", "auprc", "macro_f1", "precision", "recall", "fpr"]
METRICS_GLOB = "03_metrics_seed*.json"
_SEED_PATTERN = re.compile(r"03_metrics_seed(-?\d+)\.json$")


def mean_sd(values: Iterable[Optional[float]]) -> Dict:
    """Mean and population sd over the defined values; None when there are none."""
    defined = [float(v) for v in values if v is not None]
    if not defined:
        return {"mean": None, "sd": None, "n": 0}
    arr = np.asarray(defined, dtype=np.float64)
    return {"mean": float(arr.mean()), "sd": float(arr.std(ddof=0)), "n": len(defined)}


def aggregate_reports(reports: Sequence[Mapping]) -> Dict:
    """
    Aggregate MetricsReport dicts across seeds.

    Returns dict with one {"mean", "sd", "n"} entry per metric, per-mode recall
    and AUROC aggregates, and the seeds included.
    """
    if not reports:
        raise StatisticsError("no reports to aggregate")
    out: Dict[str, Any] = {key: mean_sd(r.get(key) for r in reports) for key in METRIC_KEYS}

    by_mode: Dict[str, Dict[str, List]] = {}
    for report in reports:
        for row in report.get("per_mode", []):
            entry = by_mode.setdefault(row["mode"], {"recall": [], "auroc": [], "n": []})
            entry["recall"].append(row.get("recall"))
            entry["auroc"].append(row.get("auroc"))
            entry["n"].append(row.get("n", 0))
    out["per_mode"] = {
        mode: {"recall": mean_sd(v["recall"]), "auroc": mean_sd(v["auroc"]), "n_total": int(sum(v["n"]))}
        for mode, v in by_mode.items()
    }
    out["seeds"] = [r.get("seed") for r in reports]
    out["protocol"] = reports[0].get("protocol")
    return out


def _seed_of(path: Path) -> int:
    match = _SEED_PATTERN.search(path.name)
    if not match:
        raise StatisticsError(f"not a per-seed metrics file: {path.name}")
    return int(match.group(1))


def generate_statistics(out_dir: Path, seeds: Optional[Sequence[int]] = None) -> Dict:
    """
    Aggregate per-seed metrics files in out_dir and write stats.json.

    Args:
        out_dir: Run output directory
        seeds: Seeds of the current evaluation; files of other seeds left in
            out_dir by earlier runs are ignored. None aggregates every file.

    Returns dict with stats content.
    """
    out_dir = Path(out_dir)
    if seeds is None:
        paths = sorted(out_dir.glob(METRICS_GLOB), key=_seed_of)
        if not paths:
            raise StatisticsError(f"no {METRICS_GLOB} files in {out_dir}")
    else:
        if not seeds:
            raise StatisticsError("no seeds to aggregate")
        paths = [out_dir / f"03_metrics_seed{seed}.json" for seed in dict.fromkeys(seeds)]
        absent = [p.name for p in paths if not p.exists()]
        if absent:
            raise StatisticsError(f"metrics files not found in {out_dir}: {absent}")
    reports = []
    for path in paths:
        try:
            with open(path, "r", encoding="utf-8") as f:
                reports.append(json.load(f))
        except (OSError, json.JSONDecodeError) as e:
            raise StatisticsError(f"cannot read {path}: {e}")

    stats = aggregate_reports(reports)
    stats["files"] = [p.name for p in paths]
    with open(out_dir / "stats.json", "w", encoding="utf-8") as f:
        json.dump(stats, f, indent=2, ensure_ascii=False, sort_keys=True)
    return stats


def format_value(value: Any, digits: int = 3) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    if isinstance(value, Mapping) and "mean" in value:
        if value["mean"] is None:
            return "n/a"
        return f"{value['mean']:.{digits}f}±{(value.get('sd') or 0.0):.{digits}f}"
    return str(value)


def format_table(rows: Sequence[Mapping], columns: Sequence[str], headers: Optional[Sequence[str]] = None) -> str:
    """Aligned plain-text table; floats to 3 decimals, {"mean","sd"} as mean±sd."""
    headers = list(headers or columns)
    if len(headers) != len(columns):
        raise StatisticsError("headers and columns must have the same length")
    cells = [[format_value(row.get(c)) for c in columns] for row in rows]
    widths = [max([len(h)] + [len(r[i]) for r in cells]) for i, h in enumerate(headers)]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(headers, widths)),
        "  ".join("-" * w for w in widths),
    ]
    lines.extend("  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in cells)
    return "\n".join(line.rstrip() for line in lines)


def write_jsonl(path: Path, rows: Iterable[Mapping]) -> int:
    """Results file: one JSON object per line, keys sorted."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
            count += 1
    return count


__all__ = [
    "StatisticsError",
    "METRIC_KEYS",
    "mean_sd",
    "aggregate_reports",
    "generate_statistics",
    "format_value",
    "format_table",
    "write_jsonl",
]
