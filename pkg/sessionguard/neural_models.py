"""
PR 06 — Neural Models

No-graph MLP and two-layer GraphSAGE session classifiers.

- SageLayer:  h_i' = ELU(W_self h_i + W_neigh mean_{j in N(i)} h_j + b)
- readout:    z_G = mean_i h_i ‖ max_i h_i
- head:       Linear(., 128) -> ELU -> Dropout(0.3) -> Linear(128, 2)
- mlp:        the same readout and head applied to raw node features

Training: class-weighted cross-entropy, Adam (lr 1e-3, weight decay 1e-4),
global-norm clipping at 1.0, batches of 64 graphs as one block-diagonal union,
validation AUROC every 10 epochs, stop after 5 evaluations without
improvement, best checkpoint restored.

Reads: featurized SessionGraphs (feature_extractor)
Creates: TrainedModel (kind mlp | sage | ssl_ft), see model_store
"""

import copy
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from sessionguard.eval_protocol import UndefinedMetricError, auroc
from sessionguard.graph_builder import SessionGraph, edge_index
from sessionguard.model_store import FeatureDimensionError, TrainedModel
from sessionguard.seeding import numpy_rng, seed_torch


logger = logging.getLogger("sessionguard.neural_models")


class NeuralModelError(Exception):
    """Raised when a neural model cannot be built, trained or scored"""
    pass


class GraphInvariantError(NeuralModelError):
    """Raised when a graph violates the degree >= 1 message-passing invariant"""
    pass


class TrainingConfigError(NeuralModelError):
    """Raised when training inputs or hyperparameters are unusable"""
    pass


VALID_ARCHITECTURES = ["mlp", "sage"]
VALID_DTYPES = {"float32": torch.float32, "float64": torch.float64}

HIDDEN_DIM = 128
DROPOUT = 0.3


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 64
    max_epochs: int = 200
    grad_clip: float = 1.0
    eval_every: int = 10
    patience: int = 5
    seed: int = 42
    hidden_dim: int = HIDDEN_DIM
    dropout: float = DROPOUT
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("lr", "batch_size", "grad_clip", "eval_every", "patience", "hidden_dim"):
            if getattr(self, name) <= 0:
                raise TrainingConfigError(f"{name} must be > 0, got: {getattr(self, name)}")
        if self.weight_decay < 0:
            raise TrainingConfigError(f"weight_decay must be >= 0, got: {self.weight_decay}")
        if self.max_epochs < 0:
            raise TrainingConfigError(f"max_epochs must be >= 0, got: {self.max_epochs}")
        if not 0.0 <= self.dropout < 1.0:
            raise TrainingConfigError(f"dropout must be in [0, 1), got: {self.dropout}")
        if self.dtype not in VALID_DTYPES:
            raise TrainingConfigError(f"dtype must be one of {sorted(VALID_DTYPES)}, got: {self.dtype}")

    @property
    def torch_dtype(self) -> torch.dtype:
        return VALID_DTYPES[self.dtype]

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrainConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise TrainingConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**dict(data))


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------

@dataclass
class GraphBatch:
    x: torch.Tensor
    edge_index: torch.Tensor
    batch: torch.Tensor
    n_graphs: int
    labels: torch.Tensor

    @classmethod
    def collate(cls, graphs: Sequence[SessionGraph], dtype: torch.dtype = torch.float32) -> "GraphBatch":
        """Disjoint union: node rows stacked, edge ids offset, batch[i] = graph of node i."""
        if not graphs:
            raise NeuralModelError("cannot collate an empty list of graphs")
        dims = {g.feature_dim for g in graphs}
        if len(dims) != 1:
            raise FeatureDimensionError(f"graphs in one batch have different feature dims: {sorted(dims)}")
        xs, edges, owners = [], [], []
        offset = 0
        for k, g in enumerate(graphs):
            xs.append(torch.as_tensor(g.node_features, dtype=dtype))
            edges.append(torch.as_tensor(edge_index(g)) + offset)
            owners.append(torch.full((g.n_nodes,), k, dtype=torch.long))
            offset += g.n_nodes
        return cls(
            x=torch.cat(xs, dim=0),
            edge_index=torch.cat(edges, dim=1).long(),
            batch=torch.cat(owners),
            n_graphs=len(graphs),
            labels=torch.as_tensor([g.label for g in graphs], dtype=torch.long),
        )


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

class SageLayer(nn.Module):
    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.lin_self = nn.Linear(in_dim, out_dim, bias=True)
        self.lin_neigh = nn.Linear(in_dim, out_dim, bias=False)

    def forward(self, h: torch.Tensor, edges: torch.Tensor) -> torch.Tensor:
        src, dst = edges[0], edges[1]
        n = h.shape[0]
        degree = torch.zeros(n, dtype=h.dtype, device=h.device)
        degree.index_add_(0, dst, torch.ones(dst.shape[0], dtype=h.dtype, device=h.device))
        if bool((degree == 0).any()):
            isolated = torch.nonzero(degree == 0).flatten().tolist()
            raise GraphInvariantError(f"isolated nodes without neighbors: {isolated[:10]}")
        summed = torch.zeros_like(h).index_add_(0, dst, h[src])
        neighbor_mean = summed / degree.unsqueeze(1)
        return F.elu(self.lin_self(h) + self.lin_neigh(neighbor_mean))


def dual_readout(h: torch.Tensor, batch: torch.Tensor, n_graphs: int) -> torch.Tensor:
    """Per-graph mean ‖ max over node rows."""
    counts = torch.zeros(n_graphs, dtype=h.dtype, device=h.device)
    counts.index_add_(0, batch, torch.ones(batch.shape[0], dtype=h.dtype, device=h.device))
    mean = torch.zeros(n_graphs, h.shape[1], dtype=h.dtype, device=h.device).index_add_(0, batch, h)
    mean = mean / counts.unsqueeze(1)
    index = batch.unsqueeze(1).expand_as(h)
    maximum = torch.zeros(n_graphs, h.shape[1], dtype=h.dtype, device=h.device).scatter_reduce(
        0, index, h, reduce="amax", include_self=False
    )
    return torch.cat([mean, maximum], dim=1)


class SageEncoder(nn.Module):
    """Two SAGE layers (dropout after the first) and the dual readout."""

    def __init__(self, in_dim: int, hidden_dim: int = HIDDEN_DIM, dropout: float = DROPOUT):
        super().__init__()
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.layer1 = SageLayer(in_dim, hidden_dim)
        self.layer2 = SageLayer(hidden_dim, hidden_dim)
        self.dropout = nn.Dropout(dropout)

    @property
    def out_dim(self) -> int:
        return 2 * self.hidden_dim

    def node_embeddings(self, x: torch.Tensor, edges: torch.Tensor) -> torch.Tensor:
        h = self.dropout(self.layer1(x, edges))
        return self.layer2(h, edges)

    def forward(self, batch: GraphBatch) -> torch.Tensor:
        return dual_readout(self.node_embeddings(batch.x, batch.edge_index), batch.batch, batch.n_graphs)


class ClassifierHead(nn.Module):
    def __init__(self, in_dim: int, hidden_dim: int = HIDDEN_DIM, dropout: float = DROPOUT):
        super().__init__()
        self.hidden = nn.Linear(in_dim, hidden_dim)
        self.dropout = nn.Dropout(dropout)
        self.out = nn.Linear(hidden_dim, 2)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.out(self.dropout(F.elu(self.hidden(z))))


class SessionClassifier(nn.Module):
    def __init__(self, in_dim: int, architecture: str = "sage", hidden_dim: int = HIDDEN_DIM,
                 dropout: float = DROPOUT):
        super().__init__()
        if architecture not in VALID_ARCHITECTURES:
            raise TrainingConfigError(f"architecture must be one of {VALID_ARCHITECTURES}, got: {architecture}")
        if in_dim < 1:
            raise TrainingConfigError(f"in_dim must be >= 1, got: {in_dim}")
        self.in_dim = in_dim
        self.architecture = architecture
        self.hidden_dim = hidden_dim
        self.dropout_rate = dropout
        self.encoder: Optional[SageEncoder] = None
        if architecture == "sage":
            self.encoder = SageEncoder(in_dim, hidden_dim, dropout)
            readout_dim = self.encoder.out_dim
        else:
            readout_dim = 2 * in_dim
        self.head = ClassifierHead(readout_dim, hidden_dim, dropout)

    def embed(self, batch: GraphBatch) -> torch.Tensor:
        if self.encoder is None:
            return dual_readout(batch.x, batch.batch, batch.n_graphs)
        return self.encoder(batch)

    def forward(self, batch: GraphBatch) -> torch.Tensor:
        return self.head(self.embed(batch))

    def architecture_config(self) -> Dict:
        return {
            "in_dim": self.in_dim,
            "architecture": self.architecture,
            "hidden_dim": self.hidden_dim,
            "dropout": self.dropout_rate,
            "dtype": str(next(self.parameters()).dtype).replace("torch.", ""),
        }

    @classmethod
    def from_architecture(cls, config: Mapping) -> "SessionClassifier":
        model = cls(
            in_dim=int(config["in_dim"]),
            architecture=config["architecture"],
            hidden_dim=int(config["hidden_dim"]),
            dropout=float(config["dropout"]),
        )
        return model.to(VALID_DTYPES.get(config.get("dtype", "float32"), torch.float32))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _model_dtype(model: nn.Module) -> torch.dtype:
    return next(model.parameters()).dtype


def _check_dims(model: SessionClassifier, graphs: Sequence[SessionGraph]) -> None:
    for g in graphs:
        if g.feature_dim != model.in_dim:
            raise FeatureDimensionError(
                f"graph {g.session_id} has feature dim {g.feature_dim}, model expects {model.in_dim}"
            )


def _logits(model: SessionClassifier, graphs: Sequence[SessionGraph], batch_size: int = 256) -> torch.Tensor:
    dtype = _model_dtype(model)
    chunks = []
    for start in range(0, len(graphs), batch_size):
        chunks.append(model(GraphBatch.collate(graphs[start:start + batch_size], dtype)))
    return torch.cat(chunks, dim=0)


def score_graphs(model: SessionClassifier, graphs: Sequence[SessionGraph], batch_size: int = 256) -> np.ndarray:
    """Softmax attack probability per graph, in evaluation mode."""
    if not graphs:
        return np.zeros(0, dtype=np.float64)
    _check_dims(model, graphs)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            probs = torch.softmax(_logits(model, graphs, batch_size), dim=1)[:, 1]
    finally:
        model.train(was_training)
    return probs.double().numpy()


def _class_weight_tensor(labels: np.ndarray, dtype: torch.dtype) -> torch.Tensor:
    counts = np.bincount(labels, minlength=2)
    if (counts[:2] == 0).any():
        raise TrainingConfigError(
            f"training partition needs both classes, got benign={counts[0]} attack={counts[1]}"
        )
    m = labels.size
    return torch.tensor([m / (2.0 * counts[0]), m / (2.0 * counts[1])], dtype=dtype)


def _global_grad_norm(parameters: Sequence[nn.Parameter]) -> float:
    norms = [p.grad.detach().norm(2) for p in parameters if p.grad is not None]
    if not norms:
        return 0.0
    return float(torch.norm(torch.stack(norms), 2))


def _validation_auroc(model: SessionClassifier, graphs: Sequence[SessionGraph]) -> float:
    labels = np.asarray([g.label for g in graphs])
    return auroc(score_graphs(model, graphs), labels)


@dataclass
class TrainingHistory:
    epoch_loss: List[float] = field(default_factory=list)
    clip_events: List[Tuple[float, float]] = field(default_factory=list)
    val_auroc: List[Tuple[int, float]] = field(default_factory=list)
    best_epoch: int = 0
    best_val_auroc: Optional[float] = None
    stopped_early: bool = False

    def to_dict(self) -> Dict:
        return {
            "epoch_loss": list(self.epoch_loss),
            "clip_events": [list(e) for e in self.clip_events],
            "val_auroc": [list(e) for e in self.val_auroc],
            "best_epoch": self.best_epoch,
            "best_val_auroc": self.best_val_auroc,
            "stopped_early": self.stopped_early,
        }


def train_supervised(
    train_graphs: Sequence[SessionGraph],
    val_graphs: Sequence[SessionGraph],
    config: Optional[TrainConfig] = None,
    architecture: str = "sage",
    warm_start: Optional[SageEncoder] = None,
    encoder_lr: Optional[float] = None,
    kind: Optional[str] = None,
) -> TrainedModel:
    """
    Train an mlp or sage classifier and return the best-validation checkpoint.

    Args:
        train_graphs: Featurized graphs with both labels present
        val_graphs: Featurized graphs with both labels present (AUROC must be defined)
        config: TrainConfig (defaults mirror the reference hyperparameters)
        architecture: "mlp" or "sage"
        warm_start: Pre-trained encoder copied into the sage model before training
        encoder_lr: Learning rate for encoder parameters (defaults to config.lr; 0 freezes)
        kind: Artifact kind override ("ssl_ft" for fine-tuned models)

    Returns:
        TrainedModel whose metadata["history"] holds per-epoch loss, clip events
        and validation AUROC per evaluation
    """
    config = config or TrainConfig()
    if not train_graphs:
        raise TrainingConfigError("training partition is empty")
    if not val_graphs:
        raise TrainingConfigError("validation partition is empty")
    dtype = config.torch_dtype
    train_labels = np.asarray([g.label for g in train_graphs], dtype=np.int64)
    weights = _class_weight_tensor(train_labels, dtype)
    val_labels = np.asarray([g.label for g in val_graphs], dtype=np.int64)
    if len(set(val_labels.tolist())) < 2:
        raise TrainingConfigError("validation partition is single-class; validation AUROC is undefined")

    in_dim = train_graphs[0].feature_dim
    if warm_start is not None and architecture != "sage":
        raise TrainingConfigError("warm_start requires the sage architecture")

    seed_torch(config.seed, "init")
    model = SessionClassifier(in_dim, architecture, config.hidden_dim, config.dropout).to(dtype)
    _check_dims(model, train_graphs)
    _check_dims(model, val_graphs)
    if warm_start is not None:
        if warm_start.in_dim != in_dim or warm_start.hidden_dim != config.hidden_dim:
            raise FeatureDimensionError(
                f"warm-start encoder is {warm_start.in_dim}->{warm_start.hidden_dim}, "
                f"model needs {in_dim}->{config.hidden_dim}"
            )
        model.encoder.load_state_dict(warm_start.state_dict())

    if model.encoder is not None:
        groups = [
            {"params": list(model.encoder.parameters()),
             "lr": config.lr if encoder_lr is None else encoder_lr},
            {"params": list(model.head.parameters()), "lr": config.lr},
        ]
    else:
        groups = [{"params": list(model.parameters()), "lr": config.lr}]
    optimizer = torch.optim.Adam(groups, lr=config.lr, weight_decay=config.weight_decay)
    loss_fn = nn.CrossEntropyLoss(weight=weights)
    parameters = [p for p in model.parameters()]

    history = TrainingHistory()
    best_state = copy.deepcopy(model.state_dict())
    best_auroc: Optional[float] = None
    stale = 0
    shuffle_rng = numpy_rng(config.seed, "shuffle")
    seed_torch(config.seed, "dropout")

    for epoch in range(1, config.max_epochs + 1):
        model.train()
        order = shuffle_rng.permutation(len(train_graphs))
        total, seen = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            chunk = [train_graphs[i] for i in order[start:start + config.batch_size]]
            batch = GraphBatch.collate(chunk, dtype)
            optimizer.zero_grad()
            loss = loss_fn(model(batch), batch.labels)
            loss.backward()
            pre = float(torch.nn.utils.clip_grad_norm_(parameters, config.grad_clip))
            if pre > config.grad_clip:
                history.clip_events.append((pre, _global_grad_norm(parameters)))
            optimizer.step()
            total += float(loss.detach()) * len(chunk)
            seen += len(chunk)
        history.epoch_loss.append(total / seen)

        if epoch % config.eval_every == 0 or epoch == config.max_epochs:
            value = _validation_auroc(model, val_graphs)
            history.val_auroc.append((epoch, value))
            if best_auroc is None or value > best_auroc:
                best_auroc = value
                best_state = copy.deepcopy(model.state_dict())
                history.best_epoch = epoch
                stale = 0
            else:
                stale += 1
            logger.debug("epoch %d loss %.4f val_auroc %.4f", epoch, history.epoch_loss[-1], value)
            if stale >= config.patience:
                history.stopped_early = True
                logger.info("early stop at epoch %d (best epoch %d)", epoch, history.best_epoch)
                break

    model.load_state_dict(best_state)
    model.eval()
    history.best_val_auroc = best_auroc

    hyperparameters = config.to_dict()
    hyperparameters["architecture"] = architecture
    if encoder_lr is not None:
        hyperparameters["encoder_lr"] = encoder_lr
    return TrainedModel(
        kind=kind or architecture,
        estimator=model,
        n_features=in_dim,
        hyperparameters=hyperparameters,
        metadata={"history": history.to_dict()},
    )


# ---------------------------------------------------------------------------
# Verification utilities
# ---------------------------------------------------------------------------

def loss_and_gradient_norm(model: SessionClassifier, graphs: Sequence[SessionGraph]) -> Tuple[float, float]:
    """Unweighted mean cross-entropy and its global gradient norm (evaluation mode)."""
    model.eval()
    model.zero_grad()
    batch = GraphBatch.collate(graphs, _model_dtype(model))
    loss = F.cross_entropy(model(batch), batch.labels)
    loss.backward()
    norm = _global_grad_norm(list(model.parameters()))
    model.zero_grad()
    return float(loss.detach()), norm


def gradient_check(model: SessionClassifier, graphs: Sequence[SessionGraph], step: float = 1e-5) -> float:
    """
    Max relative error between autograd and central finite differences over
    every parameter entry, in double precision with dropout disabled.

    Relative error is |a - n| / max(|a|, |n|, 1e-3), so entries with vanishing
    gradients are compared on an absolute scale.
    """
    model = copy.deepcopy(model).double().eval()
    batch = GraphBatch.collate(graphs, torch.float64)

    def loss_value() -> torch.Tensor:
        return F.cross_entropy(model(batch), batch.labels)

    model.zero_grad()
    loss_value().backward()
    worst = 0.0
    with torch.no_grad():
        for param in model.parameters():
            analytic = param.grad.detach().clone()
            flat = param.data.view(-1)
            for k in range(flat.numel()):
                original = float(flat[k])
                flat[k] = original + step
                plus = float(loss_value())
                flat[k] = original - step
                minus = float(loss_value())
                flat[k] = original
                numeric = (plus - minus) / (2.0 * step)
                a = float(analytic.view(-1)[k])
                error = abs(a - numeric) / max(abs(a), abs(numeric), 1e-3)
                worst = max(worst, error)
    return worst


__all__ = [
    "NeuralModelError",
    "GraphInvariantError",
    "TrainingConfigError",
    "VALID_ARCHITECTURES",
    "HIDDEN_DIM",
    "DROPOUT",
    "TrainConfig",
    "GraphBatch",
    "SageLayer",
    "dual_readout",
    "SageEncoder",
    "ClassifierHead",
    "SessionClassifier",
    "TrainingHistory",
    "score_graphs",
    "train_supervised",
    "loss_and_gradient_norm",
    "gradient_check",
]
