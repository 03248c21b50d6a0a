"""
PR 07 — Contrastive Pre-training

Self-supervised pre-training of the GraphSAGE encoder on benign sessions,
then supervised fine-tuning with a fresh classification head.

- augment_graph(): per-entry feature masking + undirected edge dropping
  (rates 0.2 / 0.2), self-loops inserted for nodes left without neighbors
- nt_xent_loss(): cosine-similarity NT-Xent (tau 0.5) on the readout vectors,
  no projection head
- pretrain_encoder(): 100 epochs over benign graphs, two views per graph
- finetune(): warm-started sage training at lr 1e-4 for up to 50 epochs

Creates: encoder artifact (save_encoder), TrainedModel kind "ssl_ft"
"""

import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import torch

from sessionguard.graph_builder import Edge, EdgeKind, SessionGraph
from sessionguard.model_store import TrainedModel
from sessionguard.neural_models import (
    GraphBatch,
    SageEncoder,
    TrainConfig,
    train_supervised,
)
from sessionguard.seeding import numpy_rng, seed_torch


logger = logging.getLogger("sessionguard.contrastive")


class ContrastiveError(Exception):
    """Raised when contrastive pre-training or fine-tuning cannot run"""
    pass


class ContrastiveNumericError(ContrastiveError):
    """Raised when a similarity is undefined (zero-norm embedding)"""
    pass


ENCODER_FORMAT = "sessionguard.encoder"
ENCODER_FORMAT_VERSION = 1


@dataclass
class AugmentConfig:
    feature_mask_rate: float = 0.2
    edge_drop_rate: float = 0.2

    def __post_init__(self):
        for name in ("feature_mask_rate", "edge_drop_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ContrastiveError(f"{name} must be in [0, 1], got: {value}")

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class SslConfig:
    temperature: float = 0.5
    pretrain_epochs: int = 100
    finetune_epochs: int = 50
    finetune_lr: float = 1e-4

    def __post_init__(self):
        if self.temperature <= 0:
            raise ContrastiveError(f"temperature must be > 0, got: {self.temperature}")
        if self.pretrain_epochs < 0 or self.finetune_epochs < 0:
            raise ContrastiveError("epoch counts must be >= 0")
        if self.finetune_lr <= 0:
            raise ContrastiveError(f"finetune_lr must be > 0, got: {self.finetune_lr}")

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "SslConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ContrastiveError(f"unknown ssl config keys: {sorted(unknown)}")
        return cls(**dict(data))


def augment_graph(graph: SessionGraph, config: AugmentConfig, rng: np.random.Generator) -> SessionGraph:
    """Return an augmented view; node count and label are preserved."""
    features = np.array(graph.node_features, dtype=np.float64, copy=True)
    mask = rng.random(features.shape) < config.feature_mask_rate
    features[mask] = 0.0

    pairs = sorted({(min(e.src, e.dst), max(e.src, e.dst)) for e in graph.edges if e.src != e.dst})
    dropped = {pair for pair in pairs if rng.random() < config.edge_drop_rate}
    edges = [
        e for e in graph.edges
        if e.src == e.dst or (min(e.src, e.dst), max(e.src, e.dst)) not in dropped
    ]

    has_neighbor = np.zeros(graph.n_nodes, dtype=bool)
    for e in edges:
        has_neighbor[e.dst] = True
    edges.extend(Edge(i, i, EdgeKind.SELF_LOOP) for i in np.flatnonzero(~has_neighbor).tolist())

    return SessionGraph(
        session_id=graph.session_id,
        n_nodes=graph.n_nodes,
        edges=sorted(set(edges)),
        label=graph.label,
        attack_mode=graph.attack_mode,
        task_id=graph.task_id,
        source=graph.source,
        node_features=features,
    )


def _default_partners(n_views: int) -> torch.Tensor:
    half = n_views // 2
    return torch.cat([torch.arange(half, n_views), torch.arange(0, half)])


def nt_xent_loss(z: torch.Tensor, temperature: float = 0.5,
                 partners: Optional[Sequence[int]] = None) -> torch.Tensor:
    """
    Mean over all 2N views of -log(exp(cos(a,b)/t) / sum_{c != a} exp(cos(a,c)/t)).

    Without `partners`, row a is paired with row a + N (and back).
    """
    n_views = z.shape[0]
    if n_views < 2 or n_views % 2:
        raise ContrastiveError(f"need an even number (>= 2) of views, got {n_views}")
    if temperature <= 0:
        raise ContrastiveError(f"temperature must be > 0, got: {temperature}")
    if partners is None:
        partner = _default_partners(n_views)
    else:
        partner = torch.as_tensor(list(partners), dtype=torch.long)
        arange = torch.arange(n_views)
        if partner.shape[0] != n_views or bool((partner == arange).any()) or \
                not torch.equal(partner[partner], arange):
            raise ContrastiveError("partners must pair every view with exactly one other view")

    norms = z.norm(dim=1)
    if bool((norms <= 1e-12).any()):
        raise ContrastiveNumericError("zero-norm embedding; cosine similarity is undefined")
    unit = z / norms.unsqueeze(1)
    logits = (unit @ unit.T) / temperature
    self_mask = torch.eye(n_views, dtype=torch.bool, device=z.device)
    logits = logits.masked_fill(self_mask, float("-inf"))
    positive = logits[torch.arange(n_views), partner]
    return (torch.logsumexp(logits, dim=1) - positive).mean()


@dataclass
class PretrainedEncoder:
    encoder: SageEncoder
    ssl_config: SslConfig
    aug_config: AugmentConfig
    train_config: TrainConfig
    epoch_loss: List[float] = field(default_factory=list)

    @property
    def in_dim(self) -> int:
        return self.encoder.in_dim

    @property
    def hidden_dim(self) -> int:
        return self.encoder.hidden_dim


def _views(graphs: Sequence[SessionGraph], aug: AugmentConfig, seed: int, epoch: int, view: int):
    return [augment_graph(g, aug, numpy_rng(seed, "augment", epoch, g.session_id, view)) for g in graphs]


def pretrain_encoder(
    benign_graphs: Sequence[SessionGraph],
    ssl_config: Optional[SslConfig] = None,
    train_config: Optional[TrainConfig] = None,
    aug_config: Optional[AugmentConfig] = None,
) -> PretrainedEncoder:
    ssl_config = ssl_config or SslConfig()
    train_config = train_config or TrainConfig()
    aug_config = aug_config or AugmentConfig()
    if not benign_graphs:
        raise ContrastiveError("pre-training corpus is empty")
    if any(g.label != 0 for g in benign_graphs):
        raise ContrastiveError("pre-training corpus must contain benign sessions only")

    dtype = train_config.torch_dtype
    seed = train_config.seed
    seed_torch(seed, "init", "pretrain")
    encoder = SageEncoder(benign_graphs[0].feature_dim, train_config.hidden_dim, train_config.dropout).to(dtype)
    optimizer = torch.optim.Adam(encoder.parameters(), lr=train_config.lr, weight_decay=train_config.weight_decay)
    shuffle_rng = numpy_rng(seed, "shuffle", "pretrain")
    seed_torch(seed, "dropout", "pretrain")

    epoch_loss: List[float] = []
    for epoch in range(1, ssl_config.pretrain_epochs + 1):
        encoder.train()
        order = shuffle_rng.permutation(len(benign_graphs))
        total, seen = 0.0, 0
        for start in range(0, len(order), train_config.batch_size):
            chunk = [benign_graphs[i] for i in order[start:start + train_config.batch_size]]
            first = GraphBatch.collate(_views(chunk, aug_config, seed, epoch, 1), dtype)
            second = GraphBatch.collate(_views(chunk, aug_config, seed, epoch, 2), dtype)
            optimizer.zero_grad()
            loss = nt_xent_loss(torch.cat([encoder(first), encoder(second)], dim=0), ssl_config.temperature)
            loss.backward()
            torch.nn.utils.clip_grad_norm_(list(encoder.parameters()), train_config.grad_clip)
            optimizer.step()
            total += float(loss.detach()) * len(chunk)
            seen += len(chunk)
        epoch_loss.append(total / seen)
        if epoch % train_config.eval_every == 0:
            logger.debug("pretrain epoch %d nt_xent %.4f", epoch, epoch_loss[-1])

    encoder.eval()
    return PretrainedEncoder(
        encoder=encoder,
        ssl_config=ssl_config,
        aug_config=aug_config,
        train_config=train_config,
        epoch_loss=epoch_loss,
    )


def finetune(
    pretrained: PretrainedEncoder,
    train_graphs: Sequence[SessionGraph],
    val_graphs: Sequence[SessionGraph],
    ssl_config: Optional[SslConfig] = None,
    train_config: Optional[TrainConfig] = None,
    freeze_encoder: bool = False,
) -> TrainedModel:
    """Fresh head on the pre-trained encoder; freeze_encoder sets the encoder lr to 0."""
    ssl_config = ssl_config or pretrained.ssl_config
    base = train_config or pretrained.train_config
    config = replace(
        base,
        lr=ssl_config.finetune_lr,
        max_epochs=ssl_config.finetune_epochs,
        hidden_dim=pretrained.hidden_dim,
    )
    model = train_supervised(
        train_graphs,
        val_graphs,
        config,
        architecture="sage",
        warm_start=pretrained.encoder,
        encoder_lr=0.0 if freeze_encoder else None,
        kind="ssl_ft",
    )
    model.hyperparameters["ssl"] = ssl_config.to_dict()
    model.hyperparameters["augment"] = pretrained.aug_config.to_dict()
    model.metadata["pretrain_epoch_loss"] = list(pretrained.epoch_loss)
    return model


def save_encoder(pretrained: PretrainedEncoder, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "format": ENCODER_FORMAT,
        "format_version": ENCODER_FORMAT_VERSION,
        "in_dim": pretrained.in_dim,
        "hidden_dim": pretrained.hidden_dim,
        "dropout": float(pretrained.encoder.dropout.p),
        "state_dict": pretrained.encoder.state_dict(),
        "ssl_config": pretrained.ssl_config.to_dict(),
        "aug_config": pretrained.aug_config.to_dict(),
        "train_config": pretrained.train_config.to_dict(),
        "epoch_loss": list(pretrained.epoch_loss),
    }, path)
    return path


def load_encoder(path: Path) -> PretrainedEncoder:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"encoder artifact not found: {path}")
    container = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(container, dict) or container.get("format") != ENCODER_FORMAT:
        raise ContrastiveError(f"{path} is not a {ENCODER_FORMAT} artifact")
    train_config = TrainConfig.from_dict(container["train_config"])
    encoder = SageEncoder(container["in_dim"], container["hidden_dim"], container["dropout"])
    encoder = encoder.to(train_config.torch_dtype)
    encoder.load_state_dict(container["state_dict"])
    encoder.eval()
    return PretrainedEncoder(
        encoder=encoder,
        ssl_config=SslConfig.from_dict(container["ssl_config"]),
        aug_config=AugmentConfig(**container["aug_config"]),
        train_config=train_config,
        epoch_loss=list(container["epoch_loss"]),
    )


__all__ = [
    "ContrastiveError",
    "ContrastiveNumericError",
    "AugmentConfig",
    "SslConfig",
    "augment_graph",
    "nt_xent_loss",
    "PretrainedEncoder",
    "pretrain_encoder",
    "finetune",
    "save_encoder",
    "load_encoder",
]
