"""
PR 05 — Model Artifacts

TrainedModel is the versioned, serializable classifier artifact shared by
classical baselines (logreg, linear_svm, random_forest), neural models
(mlp, sage) and contrastively pre-trained fine-tuned models (ssl_ft).

On disk (torch.save container):
    {"format": "sessionguard.model", "format_version": 1, "kind": ...,
     "n_features": int, "feature_config": {...}, "feature_digest": str,
     "hyperparameters": {...}, "params": <estimator | state dict>,
     "architecture": {...} (neural only), "metadata": {...}}
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import torch


class ModelStoreError(Exception):
    """Raised when a model artifact cannot be written or read"""
    pass


class FeatureDimensionError(ModelStoreError):
    """Raised when inputs do not match the dimension a model was trained on"""
    pass


MODEL_FORMAT = "sessionguard.model"
MODEL_FORMAT_VERSION = 1

CLASSICAL_KINDS = ["logreg", "linear_svm", "random_forest"]
NEURAL_KINDS = ["mlp", "sage", "ssl_ft"]
VALID_MODEL_KINDS = CLASSICAL_KINDS + NEURAL_KINDS


@dataclass
class TrainedModel:
    kind: str
    estimator: Any
    n_features: int
    hyperparameters: Dict = field(default_factory=dict)
    feature_config: Optional[Dict] = None
    feature_digest: Optional[str] = None
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in VALID_MODEL_KINDS:
            raise ModelStoreError(f"kind must be one of {VALID_MODEL_KINDS}, got: {self.kind}")

    @property
    def is_neural(self) -> bool:
        return self.kind in NEURAL_KINDS

    def check_dim(self, dim: int) -> None:
        if dim != self.n_features:
            raise FeatureDimensionError(
                f"{self.kind} model expects feature dim {self.n_features}, got {dim}"
            )


def save_model(model: TrainedModel, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    container: Dict[str, Any] = {
        "format": MODEL_FORMAT,
        "format_version": MODEL_FORMAT_VERSION,
        "kind": model.kind,
        "n_features": model.n_features,
        "feature_config": model.feature_config,
        "feature_digest": model.feature_digest,
        "hyperparameters": model.hyperparameters,
        "metadata": model.metadata,
    }
    if model.is_neural:
        container["architecture"] = model.estimator.architecture_config()
        container["params"] = {k: v.detach().clone() for k, v in model.estimator.state_dict().items()}
    else:
        container["params"] = model.estimator
    torch.save(container, path)
    return path


def load_model(path: Path) -> TrainedModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model artifact not found: {path}")
    # Classical containers hold pickled scikit-learn estimators
    try:
        container = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as e:
        raise ModelStoreError(f"cannot read model artifact {path}: {type(e).__name__}: {e}")
    if not isinstance(container, dict) or container.get("format") != MODEL_FORMAT:
        raise ModelStoreError(f"{path} is not a {MODEL_FORMAT} artifact")
    if container.get("format_version") != MODEL_FORMAT_VERSION:
        raise ModelStoreError(
            f"unsupported format_version {container.get('format_version')} in {path}"
        )

    if not isinstance(container.get("n_features"), int):
        raise ModelStoreError(f"{path} lacks an integer n_features")
    kind = container.get("kind")
    if kind in NEURAL_KINDS:
        from sessionguard.neural_models import SessionClassifier

        try:
            estimator = SessionClassifier.from_architecture(container["architecture"])
            estimator.load_state_dict(container["params"])
        except (KeyError, TypeError, RuntimeError) as e:
            raise ModelStoreError(f"{path}: {kind} parameters do not load: {e}")
        estimator.eval()
    else:
        estimator = container.get("params")

    return TrainedModel(
        kind=kind,
        estimator=estimator,
        n_features=int(container["n_features"]),
        hyperparameters=dict(container.get("hyperparameters") or {}),
        feature_config=container.get("feature_config"),
        feature_digest=container.get("feature_digest"),
        metadata=dict(container.get("metadata") or {}),
    )


__all__ = [
    "ModelStoreError",
    "FeatureDimensionError",
    "MODEL_FORMAT",
    "MODEL_FORMAT_VERSION",
    "CLASSICAL_KINDS",
    "NEURAL_KINDS",
    "VALID_MODEL_KINDS",
    "TrainedModel",
    "save_model",
    "load_model",
]
