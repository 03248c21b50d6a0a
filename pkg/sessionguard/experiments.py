"""
PR 08 — Experiments

- multi_seed_evaluate(): one model setup over the headline seeds, mean ± sd
- leakage_gap(): the same setup under task-disjoint and label-stratified
  splits with matched seeds; gap = random - task_disjoint
- label_efficiency_sweep(): k-fold sweep over label fractions for supervised
  GraphSAGE and contrastive pre-training + fine-tuning
- window_ablation(): data-flow edge counts under different prefix windows

Cells whose training subset is single-class (or whose AUROC is undefined)
are flagged, never fatal.
"""

from dataclasses import replace
from typing import Dict, List, Optional, Sequence

from sessionguard.contrastive import AugmentConfig, SslConfig, finetune, pretrain_encoder
from sessionguard.embedding_provider import EmbeddingProvider
from sessionguard.eval_protocol import (
    DEFAULT_FOLDS,
    Protocol,
    SplitError,
    UndefinedMetricError,
    auroc,
    fold_partitions,
    kfold_label_split,
    kfold_task_split,
)
from sessionguard.feature_extractor import graph_labels
from sessionguard.graph_builder import PREFIX_WINDOW, build_graph, edge_counts
from sessionguard.neural_models import TrainConfig, TrainingConfigError, train_supervised
from sessionguard.pipeline import featurize_split, run_once, score_model
from sessionguard.run_log import get_logger
from sessionguard.seeding import HEADLINE_SEEDS, numpy_rng
from sessionguard.session_model import Session
from sessionguard.statistics import aggregate_reports, mean_sd


class ExperimentError(Exception):
    """Raised when an experiment cannot be set up"""
    pass


SWEEP_FRACTIONS = (0.01, 0.05, 0.10, 0.25, 0.50, 1.00)
SWEEP_METHODS = ("supervised", "ssl_ft")
ABLATION_WINDOWS = (50, 500)


def multi_seed_evaluate(
    sessions: Sequence[Session],
    kind: str,
    mode: str,
    protocol: str = Protocol.TASK_STRATIFIED.value,
    seeds: Sequence[int] = HEADLINE_SEEDS,
    provider: Optional[EmbeddingProvider] = None,
    train_config: Optional[TrainConfig] = None,
    ssl_config: Optional[SslConfig] = None,
    prefix_window: int = PREFIX_WINDOW,
) -> Dict:
    logger = get_logger("experiments")
    reports = []
    for seed in seeds:
        _, report, _ = run_once(sessions, kind, mode, protocol, seed, provider, train_config, ssl_config,
                                prefix_window)
        logger.info("%s/%s/%s seed %d auroc %s", kind, mode, protocol, seed, report.auroc)
        reports.append(report.to_dict())
    return {
        "model": kind,
        "mode": mode,
        "protocol": protocol,
        "per_seed": reports,
        "aggregate": aggregate_reports(reports),
    }


def leakage_gap(
    sessions: Sequence[Session],
    kind: str,
    mode: str,
    seeds: Sequence[int] = HEADLINE_SEEDS,
    provider: Optional[EmbeddingProvider] = None,
    train_config: Optional[TrainConfig] = None,
) -> Dict:
    """
    Train the identical setup under both protocols with matched seeds.

    Returns dict with per-protocol AUROC aggregates and gap = random - task_disjoint.
    """
    if any(s.task_id is None for s in sessions):
        raise SplitError("leakage_gap needs task ids on every session")
    results = {}
    for protocol in (Protocol.TASK_STRATIFIED.value, Protocol.LABEL_STRATIFIED.value):
        results[protocol] = multi_seed_evaluate(sessions, kind, mode, protocol, seeds, provider, train_config)
    task = results[Protocol.TASK_STRATIFIED.value]["aggregate"]["auroc"]
    random = results[Protocol.LABEL_STRATIFIED.value]["aggregate"]["auroc"]
    per_seed_gap = [
        (r["auroc"] - t["auroc"]) if r["auroc"] is not None and t["auroc"] is not None else None
        for t, r in zip(results[Protocol.TASK_STRATIFIED.value]["per_seed"],
                        results[Protocol.LABEL_STRATIFIED.value]["per_seed"])
    ]
    gap = None
    if task["mean"] is not None and random["mean"] is not None:
        gap = random["mean"] - task["mean"]
    return {
        "model": kind,
        "mode": mode,
        "seeds": list(seeds),
        "task_stratified": task,
        "label_stratified": random,
        "gap": gap,
        "per_seed_gap": per_seed_gap,
    }


def _subsample(graphs, fraction: float, seed: int, fold: int):
    n = max(1, int(round(fraction * len(graphs))))
    order = numpy_rng(seed, "subsample", fold, f"{fraction:.4f}").permutation(len(graphs))
    return [graphs[i] for i in sorted(order[:n].tolist())]


def label_efficiency_sweep(
    sessions: Sequence[Session],
    mode: str,
    provider: Optional[EmbeddingProvider] = None,
    fractions: Sequence[float] = SWEEP_FRACTIONS,
    folds: int = DEFAULT_FOLDS,
    methods: Sequence[str] = SWEEP_METHODS,
    seed: int = 42,
    train_config: Optional[TrainConfig] = None,
    ssl_config: Optional[SslConfig] = None,
    aug_config: Optional[AugmentConfig] = None,
) -> Dict:
    """
    Per (fraction, fold, method): subsample the fold's training labels, train,
    and measure test AUROC. Pre-training runs once per fold on every benign
    graph of the training part, whatever the fraction.

    Returns dict with "cells" (one row per cell) and "summary" (one row per
    method and fraction: mean, sd, flagged count, fraction of the full-budget AUROC).
    """
    unknown = set(methods) - set(SWEEP_METHODS)
    if unknown:
        raise ExperimentError(f"methods must be in {list(SWEEP_METHODS)}, got: {sorted(unknown)}")
    if any(not 0.0 < f <= 1.0 for f in fractions):
        raise ExperimentError(f"fractions must lie in (0, 1], got: {list(fractions)}")
    logger = get_logger("experiments")
    ssl_config = ssl_config or SslConfig()
    config = replace(train_config or TrainConfig(), seed=seed)

    if all(s.task_id is not None for s in sessions):
        spec = kfold_task_split(sessions, folds, seed)
    else:
        spec = kfold_label_split(sessions, folds, seed)

    cells: List[Dict] = []
    for fold in range(folds):
        part = fold_partitions(spec, sessions, fold)
        split = featurize_split(sessions, part, mode, provider)
        pretrained = None
        if "ssl_ft" in methods:
            benign = [g for g in split.train if g.label == 0]
            pretrained = pretrain_encoder(benign, ssl_config, config, aug_config)
        for fraction in fractions:
            subset = _subsample(split.train, fraction, seed, fold)
            for method in methods:
                cell = {
                    "protocol": spec.protocol.value, "fold": fold, "fraction": fraction,
                    "method": method, "seed": seed, "n_labeled": len(subset), "auroc": None, "flag": None,
                }
                labels = set(graph_labels(subset).tolist())
                if len(labels) < 2:
                    cell["flag"] = "single_class_training"
                    logger.warning("fold %d fraction %s: single-class training subset", fold, fraction)
                    cells.append(cell)
                    continue
                try:
                    if method == "supervised":
                        model = train_supervised(subset, split.val, config, architecture="sage")
                    else:
                        model = finetune(pretrained, subset, split.val, ssl_config, config)
                    cell["auroc"] = auroc(score_model(model, split.test), graph_labels(split.test))
                except TrainingConfigError as e:
                    cell["flag"] = f"training_config: {e}"
                except UndefinedMetricError:
                    cell["flag"] = "undefined_test_auroc"
                if cell["flag"]:
                    logger.warning("fold %d fraction %s %s flagged: %s", fold, fraction, method, cell["flag"])
                cells.append(cell)

    summary = []
    for method in methods:
        full = mean_sd(c["auroc"] for c in cells if c["method"] == method and c["fraction"] == max(fractions))
        for fraction in fractions:
            chosen = [c for c in cells if c["method"] == method and c["fraction"] == fraction]
            stats = mean_sd(c["auroc"] for c in chosen)
            ratio = None
            if stats["mean"] is not None and full["mean"]:
                ratio = stats["mean"] / full["mean"]
            summary.append({
                "method": method,
                "fraction": fraction,
                "auroc": stats,
                "n_folds": stats["n"],
                "n_flagged": sum(1 for c in chosen if c["flag"]),
                "fraction_of_full": ratio,
            })
    return {
        "protocol": spec.protocol.value,
        "folds": folds,
        "seed": seed,
        "validation": "1/8 of each fold's training part",
        "cells": cells,
        "summary": summary,
    }


def window_ablation(sessions: Sequence[Session], windows: Sequence[int] = ABLATION_WINDOWS) -> Dict:
    """Edge counts per prefix window; identical counts mean the window does not matter."""
    rows = []
    for window in windows:
        counts = edge_counts(build_graph(s, prefix_window=window) for s in sessions)
        rows.append({"window": window, "n_graphs": len(sessions), **counts})
    keys = [k for k in rows[0] if k not in ("window", "n_graphs")] if rows else []
    identical = all(all(r[k] == rows[0][k] for k in keys) for r in rows)
    return {"rows": rows, "identical_edge_counts": identical}


__all__ = [
    "ExperimentError",
    "SWEEP_FRACTIONS",
    "SWEEP_METHODS",
    "ABLATION_WINDOWS",
    "multi_seed_evaluate",
    "leakage_gap",
    "label_efficiency_sweep",
    "window_ablation",
]
