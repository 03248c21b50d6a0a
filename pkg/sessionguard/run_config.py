"""
PR 09 — Run Configuration

A run is driven by one JSON file whose keys are exactly the RunConfig field
names. CLI flags override file values; the effective config is saved next to
the run's artifacts and its digest goes into the manifest.

Example:
    {
      "datasets": [{"path": "raw/ras_eval.jsonl", "source": "ras_eval"}],
      "corpus": "runs/demo/corpus.jsonl",
      "feature_mode": "content",
      "provider": {"backend": "deterministic_test"},
      "model": "sage",
      "train": {"max_epochs": 200},
      "protocol": "task_stratified",
      "seeds": [7, 42, 123],
      "out_dir": "runs/demo",
      "ssl": {},
      "sweep": {"fractions": [0.01, 0.05, 0.1, 0.25, 0.5, 1.0], "folds": 5,
                "methods": ["supervised", "ssl_ft"]},
      "prefix_window": 50
    }
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

from sessionguard.contrastive import ContrastiveError, SslConfig
from sessionguard.embedding_provider import ProviderConfig, ProviderConfigError
from sessionguard.eval_protocol import VALID_PROTOCOLS
from sessionguard.experiments import SWEEP_FRACTIONS, SWEEP_METHODS
from sessionguard.feature_extractor import VALID_FEATURE_MODES
from sessionguard.graph_builder import PREFIX_WINDOW
from sessionguard.model_store import VALID_MODEL_KINDS
from sessionguard.neural_models import TrainConfig, TrainingConfigError
from sessionguard.seeding import HEADLINE_SEEDS
from sessionguard.session_model import VALID_SOURCES


class RunConfigError(Exception):
    """Raised when a run configuration is invalid"""
    pass


class MissingInputError(RunConfigError):
    """Raised when a referenced input file does not exist"""
    pass


CONFIG_NAME = "run_config.json"
VALID_SWEEP_KEYS = ["fractions", "folds", "methods"]


@dataclass
class RunConfig:
    datasets: List[Dict[str, str]] = field(default_factory=list)
    corpus: Optional[str] = None
    feature_mode: str = "content"
    provider: Optional[Dict[str, Any]] = None
    model: str = "sage"
    train: Dict[str, Any] = field(default_factory=dict)
    protocol: str = "task_stratified"
    seeds: List[int] = field(default_factory=lambda: list(HEADLINE_SEEDS))
    out_dir: str = "runs/default"
    ssl: Dict[str, Any] = field(default_factory=dict)
    sweep: Dict[str, Any] = field(default_factory=dict)
    prefix_window: int = PREFIX_WINDOW

    def to_dict(self) -> Dict:
        return asdict(self)


def collect_run_config(**values: Any) -> RunConfig:
    """
    Build and validate a RunConfig.

    Raises:
        RunConfigError: If any field is unknown or invalid
    """
    unknown = set(values) - set(RunConfig.__dataclass_fields__)
    if unknown:
        raise RunConfigError(f"unknown config keys: {sorted(unknown)}")
    config = RunConfig(**values)

    for entry in config.datasets:
        if not isinstance(entry, Mapping) or set(entry) != {"path", "source"}:
            raise RunConfigError(f"datasets entries need exactly 'path' and 'source', got: {entry}")
        if entry["source"] not in VALID_SOURCES:
            raise RunConfigError(f"source must be one of {VALID_SOURCES}, got: {entry['source']}")
    if config.feature_mode not in VALID_FEATURE_MODES:
        raise RunConfigError(f"feature_mode must be one of {VALID_FEATURE_MODES}, got: {config.feature_mode}")
    if config.model not in VALID_MODEL_KINDS:
        raise RunConfigError(f"model must be one of {VALID_MODEL_KINDS}, got: {config.model}")
    if config.protocol not in VALID_PROTOCOLS:
        raise RunConfigError(f"protocol must be one of {VALID_PROTOCOLS}, got: {config.protocol}")
    if not config.seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in config.seeds):
        raise RunConfigError(f"seeds must be a non-empty list of integers, got: {config.seeds}")
    if len(set(config.seeds)) != len(config.seeds):
        raise RunConfigError(f"seeds must be distinct, got: {config.seeds}")
    if not config.out_dir:
        raise RunConfigError("out_dir cannot be empty")
    if not isinstance(config.prefix_window, int) or config.prefix_window < 1:
        raise RunConfigError(f"prefix_window must be a positive integer, got: {config.prefix_window}")
    unknown_sweep = set(config.sweep) - set(VALID_SWEEP_KEYS)
    if unknown_sweep:
        raise RunConfigError(f"sweep keys must be in {VALID_SWEEP_KEYS}, got: {sorted(unknown_sweep)}")

    # Typed sub-configs validate their own ranges
    provider_config(config)
    train_config(config)
    ssl_config(config)
    return config


def provider_config(config: RunConfig) -> Optional[ProviderConfig]:
    """None when no provider is configured; content modes then fail with a config error."""
    if config.provider is None:
        return None
    try:
        return ProviderConfig.from_dict(config.provider)
    except (ProviderConfigError, TypeError) as e:
        raise RunConfigError(f"provider: {e}")


def train_config(config: RunConfig, seed: Optional[int] = None) -> TrainConfig:
    values = dict(config.train)
    if seed is not None:
        values["seed"] = seed
    try:
        return TrainConfig.from_dict(values)
    except (TrainingConfigError, TypeError) as e:
        raise RunConfigError(f"train: {e}")


def ssl_config(config: RunConfig) -> SslConfig:
    try:
        return SslConfig.from_dict(config.ssl)
    except (ContrastiveError, TypeError) as e:
        raise RunConfigError(f"ssl: {e}")


def sweep_settings(config: RunConfig) -> Dict:
    return {
        "fractions": list(config.sweep.get("fractions", SWEEP_FRACTIONS)),
        "folds": int(config.sweep.get("folds", 5)),
        "methods": list(config.sweep.get("methods", SWEEP_METHODS)),
    }


def load_run_config(path: Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise RunConfigError(f"{path} is not valid JSON: {e.msg}")
    if not isinstance(data, dict):
        raise RunConfigError(f"{path} must hold a JSON object")
    return collect_run_config(**data)


def save_run_config(config: RunConfig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config.to_dict(), f, indent=2, ensure_ascii=False, sort_keys=True)
    return path


def apply_overrides(config: RunConfig, **flags: Any) -> RunConfig:
    """Flags that are not None replace file values; the result is revalidated."""
    values = config.to_dict()
    values.update({k: v for k, v in flags.items() if v is not None})
    return collect_run_config(**values)


def config_digest(config: RunConfig) -> str:
    """sha256 of the canonical config without out_dir (which never changes results)."""
    data = config.to_dict()
    data.pop("out_dir", None)
    text = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def check_paths(config: RunConfig, need_corpus: bool = True) -> None:
    """
    Raises:
        MissingInputError: If a dataset or the corpus file is absent
    """
    for entry in config.datasets:
        if not Path(entry["path"]).exists():
            raise MissingInputError(f"dataset not found: {entry['path']}")
    if need_corpus:
        if not config.corpus:
            raise MissingInputError("no corpus configured (set 'corpus' or pass --corpus)")
        if not Path(config.corpus).exists():
            raise MissingInputError(f"corpus not found: {config.corpus}")


__all__ = [
    "RunConfigError",
    "MissingInputError",
    "CONFIG_NAME",
    "RunConfig",
    "collect_run_config",
    "provider_config",
    "train_config",
    "ssl_config",
    "sweep_settings",
    "load_run_config",
    "save_run_config",
    "apply_overrides",
    "config_digest",
    "check_paths",
]
