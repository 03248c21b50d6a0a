"""
PR 10 — Pipeline

split -> featurize -> fit -> score -> evaluate, shared by the experiments
and the CLI.

The tool vocabulary is built from the training part only; sessions outside
it get an all-zero one-hot block. Every model records the feature config it
was trained on, so later scoring re-featurizes with the same vocabulary.
"""

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from sessionguard.classical_classifiers import LabeledMatrix, fit_classical, predict_score
from sessionguard.contrastive import AugmentConfig, SslConfig, finetune, pretrain_encoder
from sessionguard.embedding_provider import DEFAULT_DIM, EmbeddingProvider
from sessionguard.eval_protocol import (
    MetricsReport,
    SplitSpec,
    classification_metrics,
    make_split,
    partition,
    per_category_breakdown,
    per_mode_breakdown,
)
from sessionguard.feature_extractor import (
    FeatureConfig,
    FeatureConfigError,
    featurize_corpus,
    graph_labels,
    pooled_matrix,
)
from sessionguard.graph_builder import PREFIX_WINDOW, SessionGraph
from sessionguard.model_store import (
    CLASSICAL_KINDS,
    NEURAL_KINDS,
    VALID_MODEL_KINDS,
    FeatureDimensionError,
    TrainedModel,
)
from sessionguard.neural_models import TrainConfig, score_graphs, train_supervised
from sessionguard.session_model import Session, build_tool_vocabulary


class PipelineError(Exception):
    """Raised when pipeline stages cannot be chained"""
    pass


MODEL_KINDS = VALID_MODEL_KINDS


@dataclass
class FeaturizedSplit:
    spec: SplitSpec
    config: FeatureConfig
    train: List[SessionGraph]
    val: List[SessionGraph]
    test: List[SessionGraph]


def split_corpus(sessions: Sequence[Session], protocol: str, seed: int) -> SplitSpec:
    return make_split(protocol, sessions, seed)


def feature_config_for(sessions: Sequence[Session], mode: str,
                       provider: Optional[EmbeddingProvider] = None) -> FeatureConfig:
    config = FeatureConfig(
        mode=mode,
        vocab=build_tool_vocabulary(sessions),
        embedding_dim=provider.dim if provider is not None else DEFAULT_DIM,
    )
    if config.needs_provider and provider is None:
        raise FeatureConfigError(f"feature mode '{config.mode.value}' requires an embedding provider")
    return config


def featurize_split(
    sessions: Sequence[Session],
    spec: SplitSpec,
    mode: str,
    provider: Optional[EmbeddingProvider] = None,
    prefix_window: int = PREFIX_WINDOW,
) -> FeaturizedSplit:
    train, val, test = partition(spec, sessions)
    if not train:
        raise PipelineError("training part of the split is empty")
    config = feature_config_for(train, mode, provider)
    return FeaturizedSplit(
        spec=spec,
        config=config,
        train=featurize_corpus(train, config, provider, prefix_window),
        val=featurize_corpus(val, config, provider, prefix_window),
        test=featurize_corpus(test, config, provider, prefix_window),
    )


def featurize_for_model(sessions: Sequence[Session], model: TrainedModel,
                        provider: Optional[EmbeddingProvider] = None,
                        prefix_window: int = PREFIX_WINDOW) -> List[SessionGraph]:
    """Featurize with the exact config the model was trained on."""
    if model.feature_config is None:
        raise PipelineError(f"{model.kind} model carries no feature config")
    config = FeatureConfig.from_dict(model.feature_config)
    if config.node_dim * (1 if model.is_neural else 2) != model.n_features:
        raise FeatureDimensionError(
            f"stored feature config gives dim {config.node_dim}, model expects {model.n_features}"
        )
    return featurize_corpus(sessions, config, provider, prefix_window)


def fit_model(
    kind: str,
    split: FeaturizedSplit,
    seed: int,
    train_config: Optional[TrainConfig] = None,
    ssl_config: Optional[SslConfig] = None,
    aug_config: Optional[AugmentConfig] = None,
    hyperparameters: Optional[Dict] = None,
) -> TrainedModel:
    if kind not in MODEL_KINDS:
        raise PipelineError(f"model must be one of {MODEL_KINDS}, got: {kind}")
    hyperparameters = dict(hyperparameters or {})
    if kind in CLASSICAL_KINDS:
        data = LabeledMatrix(pooled_matrix(split.train), graph_labels(split.train))
        model = fit_classical(kind, data, seed=seed, **hyperparameters)
    else:
        config = replace(train_config or TrainConfig(), seed=seed)
        if kind == "ssl_ft":
            benign = [g for g in split.train if g.label == 0]
            pretrained = pretrain_encoder(benign, ssl_config, config, aug_config)
            model = finetune(pretrained, split.train, split.val, ssl_config, config)
        else:
            model = train_supervised(split.train, split.val, config, architecture=kind)
    model.feature_config = split.config.to_dict()
    model.feature_digest = split.config.digest()
    model.metadata["seed"] = seed
    model.metadata["protocol"] = split.spec.protocol.value
    return model


def score_model(model: TrainedModel, graphs: Sequence[SessionGraph]) -> np.ndarray:
    if not graphs:
        return np.zeros(0, dtype=np.float64)
    if model.kind in CLASSICAL_KINDS:
        return predict_score(model, pooled_matrix(graphs))
    if model.kind in NEURAL_KINDS:
        for g in graphs:
            model.check_dim(g.feature_dim)
        return score_graphs(model.estimator, graphs)
    raise PipelineError(f"model must be one of {MODEL_KINDS}, got: {model.kind}")


def evaluate_model(model: TrainedModel, graphs: Sequence[SessionGraph], seed: Optional[int] = None,
                   protocol: Optional[str] = None) -> Tuple[MetricsReport, np.ndarray]:
    """Metrics report (with per-mode and per-category rows) and the raw scores."""
    scores = score_model(model, graphs)
    labels = graph_labels(graphs) if graphs else np.zeros(0, dtype=np.int64)
    report = classification_metrics(scores, labels, seed=seed, protocol=protocol)
    modes = [g.attack_mode for g in graphs]
    report.per_mode = per_mode_breakdown(scores, labels, modes)
    report.per_category = per_category_breakdown(scores, labels, modes)
    return report, scores


def run_once(
    sessions: Sequence[Session],
    kind: str,
    mode: str,
    protocol: str,
    seed: int,
    provider: Optional[EmbeddingProvider] = None,
    train_config: Optional[TrainConfig] = None,
    ssl_config: Optional[SslConfig] = None,
    prefix_window: int = PREFIX_WINDOW,
) -> Tuple[TrainedModel, MetricsReport, SplitSpec]:
    """One seeded train/evaluate cycle on the test part of a fresh split."""
    if protocol in ("kfold_task", "kfold_label"):
        raise PipelineError(f"run_once needs a train/val/test protocol, got: {protocol}")
    spec = split_corpus(sessions, protocol, seed)
    split = featurize_split(sessions, spec, mode, provider, prefix_window)
    model = fit_model(kind, split, seed, train_config, ssl_config)
    report, _ = evaluate_model(model, split.test, seed=seed, protocol=spec.protocol.value)
    return model, report, spec


__all__ = [
    "PipelineError",
    "MODEL_KINDS",
    "FeaturizedSplit",
    "split_corpus",
    "feature_config_for",
    "featurize_split",
    "featurize_for_model",
    "fit_model",
    "score_model",
    "evaluate_model",
    "run_once",
]
