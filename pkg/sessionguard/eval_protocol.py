"""
PR 08 — Evaluation Protocol

Splits, metrics and per-mode breakdowns. Attack is the positive class
everywhere.

Splits (units = tasks or sessions, shuffled by the "split" seed stream):
- task_stratified:  70/10/20 of unique task ids, all sessions of a task together
- label_stratified: 70/10/20 within each label
- kfold_task / kfold_label: k test folds; fold_partitions() carves 1/8 of
  the remaining training part as validation

Rounding: cut points at floor(0.7 U) and floor(0.8 U); train is the units
before the first cut, val the units between the cuts, test the remainder
(10 -> 7/1/2, 80 -> 56/8/16). Each part stays within one unit of its ratio.

Creates (CLI): 01_split_seed<k>.json, 03_metrics_seed<k>.json, curves
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from sklearn import metrics

from sessionguard.seeding import numpy_rng
from sessionguard.session_model import AttackMode, THREAT_MODES


class EvalProtocolError(Exception):
    """Raised when a split or metric cannot be computed"""
    pass


class SplitError(EvalProtocolError):
    """Raised when the corpus does not support the requested split protocol"""
    pass


class UndefinedMetricError(EvalProtocolError):
    """Raised when a metric is undefined for the given labels"""
    pass


class Protocol(str, Enum):
    TASK_STRATIFIED = "task_stratified"
    LABEL_STRATIFIED = "label_stratified"
    KFOLD_TASK = "kfold_task"
    KFOLD_LABEL = "kfold_label"


VALID_PROTOCOLS = [p.value for p in Protocol]
DEFAULT_RATIOS = (0.7, 0.1, 0.2)
DEFAULT_FOLDS = 5
VALIDATION_CARVE = 8
THRESHOLD = 0.5


# ---------------------------------------------------------------------------
# Split spec
# ---------------------------------------------------------------------------

@dataclass
class SplitSpec:
    protocol: Protocol
    seed: int
    train: Tuple[str, ...] = ()
    val: Tuple[str, ...] = ()
    test: Tuple[str, ...] = ()
    folds: Optional[List[Tuple[str, ...]]] = None
    fold: Optional[int] = None
    ratios: Tuple[float, float, float] = DEFAULT_RATIOS

    def __post_init__(self):
        try:
            self.protocol = Protocol(self.protocol)
        except ValueError:
            raise SplitError(f"protocol must be one of {VALID_PROTOCOLS}, got: {self.protocol}")
        self.train = tuple(sorted(self.train))
        self.val = tuple(sorted(self.val))
        self.test = tuple(sorted(self.test))
        if self.folds is not None:
            self.folds = [tuple(sorted(f)) for f in self.folds]
        self.ratios = tuple(self.ratios)

    @property
    def is_kfold(self) -> bool:
        return self.protocol in (Protocol.KFOLD_TASK, Protocol.KFOLD_LABEL)

    def validate(self, sessions: Sequence[Any]) -> None:
        """Parts (or folds) are pairwise disjoint and cover exactly the corpus."""
        ids = {s.session_id for s in sessions}
        parts = list(self.folds) if self.folds is not None and self.fold is None else [self.train, self.val, self.test]
        seen: set = set()
        for part in parts:
            overlap = seen & set(part)
            if overlap:
                raise SplitError(f"split parts overlap on {sorted(overlap)[:5]}")
            seen |= set(part)
        if seen != ids:
            missing = sorted(ids - seen)[:5]
            extra = sorted(seen - ids)[:5]
            raise SplitError(f"split does not cover the corpus: missing={missing} extra={extra}")
        if self.protocol in (Protocol.TASK_STRATIFIED, Protocol.KFOLD_TASK):
            by_id = {s.session_id: s.task_id for s in sessions}
            owners: Dict[str, int] = {}
            for k, part in enumerate(parts):
                for session_id in part:
                    task = by_id[session_id]
                    if owners.setdefault(task, k) != k:
                        raise SplitError(f"task {task!r} appears in more than one split part")

    def to_dict(self) -> Dict:
        data: Dict[str, Any] = {
            "protocol": self.protocol.value,
            "seed": self.seed,
            "ratios": list(self.ratios),
            "train": list(self.train),
            "val": list(self.val),
            "test": list(self.test),
        }
        if self.folds is not None:
            data["folds"] = [list(f) for f in self.folds]
        if self.fold is not None:
            data["fold"] = self.fold
            data["validation_carve"] = f"1/{VALIDATION_CARVE} of the fold training part"
        return data

    @classmethod
    def from_dict(cls, data: Mapping) -> "SplitSpec":
        return cls(
            protocol=Protocol(data["protocol"]),
            seed=int(data["seed"]),
            train=tuple(data.get("train", ())),
            val=tuple(data.get("val", ())),
            test=tuple(data.get("test", ())),
            folds=[tuple(f) for f in data["folds"]] if data.get("folds") is not None else None,
            fold=data.get("fold"),
            ratios=tuple(data.get("ratios", DEFAULT_RATIOS)),
        )


def _label(item: Any) -> int:
    if hasattr(item, "is_attack"):
        return 1 if item.is_attack else 0
    return int(item.label)


def _check_ratios(ratios: Sequence[float]) -> Tuple[float, float, float]:
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise SplitError(f"ratios must be three non-negative numbers summing to 1, got: {tuple(ratios)}")
    return tuple(float(r) for r in ratios)  # type: ignore[return-value]


def _cut(units: Sequence[Any], ratios: Sequence[float]) -> Tuple[List[Any], List[Any], List[Any]]:
    # Floors of the cumulative boundaries keep every part within one unit of its ratio
    n = len(units)
    first = math.floor(ratios[0] * n + 1e-9)
    second = math.floor(math.fsum(ratios[:2]) * n + 1e-9)
    return list(units[:first]), list(units[first:second]), list(units[second:])


def _shuffled(units: Sequence[Any], rng: np.random.Generator) -> List[Any]:
    units = list(units)
    return [units[i] for i in rng.permutation(len(units))]


def _task_groups(sessions: Sequence[Any], protocol_name: str) -> Dict[str, List[str]]:
    missing = [s.session_id for s in sessions if s.task_id is None]
    if missing:
        raise SplitError(
            f"{protocol_name} needs a task_id on every session ({len(missing)} missing, e.g. "
            f"{missing[0]!r}); use label_stratified for corpora without task structure"
        )
    groups: Dict[str, List[str]] = {}
    for s in sessions:
        groups.setdefault(s.task_id, []).append(s.session_id)
    return groups


def _label_groups(sessions: Sequence[Any]) -> Dict[int, List[str]]:
    groups: Dict[int, List[str]] = {0: [], 1: []}
    for s in sessions:
        groups[_label(s)].append(s.session_id)
    if not groups[0] or not groups[1]:
        raise SplitError("label_stratified needs both labels present")
    return {k: sorted(v) for k, v in groups.items()}


def task_stratified_split(sessions: Sequence[Any], ratios: Sequence[float] = DEFAULT_RATIOS,
                          seed: int = 42) -> SplitSpec:
    ratios = _check_ratios(ratios)
    groups = _task_groups(sessions, Protocol.TASK_STRATIFIED.value)
    tasks = _shuffled(sorted(groups), numpy_rng(seed, "split", Protocol.TASK_STRATIFIED.value))
    train, val, test = _cut(tasks, ratios)
    spec = SplitSpec(
        protocol=Protocol.TASK_STRATIFIED,
        seed=seed,
        train=tuple(i for t in train for i in groups[t]),
        val=tuple(i for t in val for i in groups[t]),
        test=tuple(i for t in test for i in groups[t]),
        ratios=ratios,
    )
    spec.validate(sessions)
    return spec


def label_stratified_split(sessions: Sequence[Any], ratios: Sequence[float] = DEFAULT_RATIOS,
                           seed: int = 42) -> SplitSpec:
    ratios = _check_ratios(ratios)
    groups = _label_groups(sessions)
    parts: Tuple[List[str], List[str], List[str]] = ([], [], [])
    for label in (0, 1):
        ids = _shuffled(groups[label], numpy_rng(seed, "split", Protocol.LABEL_STRATIFIED.value, label))
        for part, chunk in zip(parts, _cut(ids, ratios)):
            part.extend(chunk)
    spec = SplitSpec(
        protocol=Protocol.LABEL_STRATIFIED,
        seed=seed,
        train=tuple(parts[0]),
        val=tuple(parts[1]),
        test=tuple(parts[2]),
        ratios=ratios,
    )
    spec.validate(sessions)
    return spec


def kfold_task_split(sessions: Sequence[Any], k: int = DEFAULT_FOLDS, seed: int = 42) -> SplitSpec:
    groups = _task_groups(sessions, Protocol.KFOLD_TASK.value)
    if not 2 <= k <= len(groups):
        raise SplitError(f"k must be in [2, {len(groups)}] for {len(groups)} tasks, got: {k}")
    tasks = _shuffled(sorted(groups), numpy_rng(seed, "split", Protocol.KFOLD_TASK.value))
    folds = [
        tuple(i for t in chunk for i in groups[t])
        for chunk in np.array_split(np.asarray(tasks, dtype=object), k)
    ]
    spec = SplitSpec(protocol=Protocol.KFOLD_TASK, seed=seed, folds=folds)
    spec.validate(sessions)
    return spec


def kfold_label_split(sessions: Sequence[Any], k: int = DEFAULT_FOLDS, seed: int = 42) -> SplitSpec:
    groups = _label_groups(sessions)
    if k < 2:
        raise SplitError(f"k must be >= 2, got: {k}")
    folds: List[List[str]] = [[] for _ in range(k)]
    for label in (0, 1):
        ids = _shuffled(groups[label], numpy_rng(seed, "split", Protocol.KFOLD_LABEL.value, label))
        for f, chunk in enumerate(np.array_split(np.asarray(ids, dtype=object), k)):
            folds[f].extend(chunk.tolist())
    spec = SplitSpec(protocol=Protocol.KFOLD_LABEL, seed=seed, folds=[tuple(f) for f in folds])
    spec.validate(sessions)
    return spec


def make_split(protocol: str, sessions: Sequence[Any], seed: int, k: int = DEFAULT_FOLDS,
               ratios: Sequence[float] = DEFAULT_RATIOS) -> SplitSpec:
    protocol = Protocol(protocol)
    if protocol == Protocol.TASK_STRATIFIED:
        return task_stratified_split(sessions, ratios, seed)
    if protocol == Protocol.LABEL_STRATIFIED:
        return label_stratified_split(sessions, ratios, seed)
    if protocol == Protocol.KFOLD_TASK:
        return kfold_task_split(sessions, k, seed)
    return kfold_label_split(sessions, k, seed)


def fold_partitions(spec: SplitSpec, sessions: Sequence[Any], fold: int) -> SplitSpec:
    """
    Train/val/test view of one k-fold test fold. Validation is 1/8 of the
    remaining units (tasks or per-label sessions), at least one unit.
    """
    if spec.folds is None:
        raise SplitError("fold_partitions needs a k-fold split")
    if not 0 <= fold < len(spec.folds):
        raise SplitError(f"fold must be in [0, {len(spec.folds)}), got: {fold}")
    test = set(spec.folds[fold])
    rest = [s for s in sessions if s.session_id not in test]
    rng = numpy_rng(spec.seed, "split", spec.protocol.value, "fold", fold)
    val: List[str] = []
    if spec.protocol == Protocol.KFOLD_TASK:
        groups = _task_groups(rest, spec.protocol.value)
        tasks = _shuffled(sorted(groups), rng)
        n_val = max(1, len(tasks) // VALIDATION_CARVE) if len(tasks) > 1 else 0
        val = [i for t in tasks[:n_val] for i in groups[t]]
    else:
        for label in (0, 1):
            ids = _shuffled(sorted(s.session_id for s in rest if _label(s) == label), rng)
            n_val = max(1, len(ids) // VALIDATION_CARVE) if len(ids) > 1 else 0
            val.extend(ids[:n_val])
    val_set = set(val)
    part = SplitSpec(
        protocol=spec.protocol,
        seed=spec.seed,
        train=tuple(s.session_id for s in rest if s.session_id not in val_set),
        val=tuple(val),
        test=tuple(test),
        fold=fold,
    )
    part.validate(sessions)
    return part


def partition(spec: SplitSpec, items: Sequence[Any]) -> Tuple[List[Any], List[Any], List[Any]]:
    """Items (sessions or graphs) of each part, in corpus order."""
    train, val, test = set(spec.train), set(spec.val), set(spec.test)
    return (
        [x for x in items if x.session_id in train],
        [x for x in items if x.session_id in val],
        [x for x in items if x.session_id in test],
    )


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def _as_arrays(scores, labels) -> Tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if scores.shape != labels.shape:
        raise EvalProtocolError(f"{scores.size} scores for {labels.size} labels")
    if not np.isfinite(scores).all():
        raise EvalProtocolError("scores must be finite")
    if not np.isin(labels, (0, 1)).all():
        raise EvalProtocolError("labels must be 0 (benign) or 1 (attack)")
    return scores, labels


def auroc(scores, labels) -> float:
    """P(random attack scores above random benign), ties counted 0.5."""
    scores, labels = _as_arrays(scores, labels)
    if labels.sum() == 0 or labels.sum() == labels.size:
        raise UndefinedMetricError("AUROC needs both classes present")
    return float(metrics.roc_auc_score(labels, scores))


def auprc(scores, labels) -> float:
    """Average precision: sum over descending thresholds of (R_k - R_{k-1}) * P_k."""
    scores, labels = _as_arrays(scores, labels)
    if labels.sum() == 0:
        raise UndefinedMetricError("AUPRC needs at least one attack")
    return float(metrics.average_precision_score(labels, scores))


@dataclass
class MetricsReport:
    auroc: Optional[float]
    auprc: Optional[float]
    macro_f1: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    fpr: Optional[float]
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float = THRESHOLD
    seed: Optional[int] = None
    protocol: Optional[str] = None
    per_mode: List[Dict] = field(default_factory=list)
    per_category: List[Dict] = field(default_factory=list)
    undefined: List[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> Dict:
        return {
            "auroc": self.auroc,
            "auprc": self.auprc,
            "macro_f1": self.macro_f1,
            "precision": self.precision,
            "recall": self.recall,
            "fpr": self.fpr,
            "confusion": {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn},
            "n": self.n,
            "threshold": self.threshold,
            "seed": self.seed,
            "protocol": self.protocol,
            "per_mode": list(self.per_mode),
            "per_category": list(self.per_category),
            "undefined": list(self.undefined),
        }


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den else None


def classification_metrics(scores, labels, threshold: float = THRESHOLD, seed: Optional[int] = None,
                           protocol: Optional[str] = None) -> MetricsReport:
    """
    Threshold metrics plus AUROC/AUPRC. A single-class input yields a partial
    report: undefined fields are None and listed in `undefined`.
    """
    scores, labels = _as_arrays(scores, labels)
    predicted = (scores >= threshold).astype(np.int64)
    tn, fp, fn, tp = (int(v) for v in metrics.confusion_matrix(labels, predicted, labels=[0, 1]).ravel())

    values: Dict[str, Optional[float]] = {}
    for name, fn_metric in (("auroc", auroc), ("auprc", auprc)):
        try:
            values[name] = fn_metric(scores, labels)
        except UndefinedMetricError:
            values[name] = None
    values["precision"] = _ratio(tp, tp + fp)
    values["recall"] = _ratio(tp, tp + fn)
    values["fpr"] = _ratio(fp, fp + tn)
    if tp + fn and fp + tn:
        values["macro_f1"] = float(metrics.f1_score(labels, predicted, labels=[0, 1], average="macro",
                                                    zero_division=0))
    else:
        values["macro_f1"] = None
    undefined = [k for k in ("auroc", "auprc", "macro_f1", "precision", "recall", "fpr") if values[k] is None]

    return MetricsReport(
        auroc=values["auroc"],
        auprc=values["auprc"],
        macro_f1=values["macro_f1"],
        precision=values["precision"],
        recall=values["recall"],
        fpr=values["fpr"],
        tp=tp, fp=fp, tn=tn, fn=fn,
        threshold=threshold,
        seed=seed,
        protocol=protocol,
        undefined=undefined,
    )


def _mode_key(mode: Any, by_category: bool) -> Optional[str]:
    if mode is None:
        return None
    if isinstance(mode, AttackMode):
        return mode.name if by_category else mode.kind.value
    return str(mode)


def _mode_order(keys: Sequence[str]) -> List[str]:
    known = [m for m in THREAT_MODES if m in keys]
    return known + sorted(k for k in keys if k not in THREAT_MODES)


def _breakdown(scores, labels, modes: Sequence[Any], threshold: float, by_category: bool) -> List[Dict]:
    scores, labels = _as_arrays(scores, labels)
    if len(modes) != labels.size:
        raise EvalProtocolError(f"{len(modes)} modes for {labels.size} sessions")
    keys = [_mode_key(m, by_category) for m in modes]
    benign = labels == 0
    rows = []
    for key in _mode_order({k for k, y in zip(keys, labels) if k is not None and y == 1}):
        selected = np.asarray([k == key and y == 1 for k, y in zip(keys, labels)])
        n = int(selected.sum())
        row: Dict[str, Any] = {
            "mode": key,
            "n": n,
            "recall": float((scores[selected] >= threshold).mean()),
            "auroc": None,
            "flags": [],
        }
        if benign.any():
            mask = selected | benign
            row["auroc"] = auroc(scores[mask], labels[mask])
        else:
            row["flags"].append("no_benign_in_fold")
        rows.append(row)
    return rows


def per_mode_breakdown(scores, labels, modes: Sequence[Any], threshold: float = THRESHOLD) -> List[Dict]:
    """
    One row per attack mode present among the attacks: N, recall at the
    threshold, AUROC of that mode against every benign session of the fold.
    AUROC is None (flagged) when the fold has no benign sessions.
    """
    return _breakdown(scores, labels, modes, threshold, by_category=False)


def per_category_breakdown(scores, labels, modes: Sequence[Any], threshold: float = THRESHOLD) -> List[Dict]:
    """per_mode_breakdown keyed by attack category (other() categories kept apart)."""
    return _breakdown(scores, labels, modes, threshold, by_category=True)


def curve_points(scores, labels) -> Dict[str, Dict[str, List[Optional[float]]]]:
    """ROC and PR curve points for plotting; infinite thresholds become None."""
    scores, labels = _as_arrays(scores, labels)
    if labels.sum() == 0 or labels.sum() == labels.size:
        raise UndefinedMetricError("curves need both classes present")
    fpr, tpr, roc_thresholds = metrics.roc_curve(labels, scores, pos_label=1)
    precision, recall, pr_thresholds = metrics.precision_recall_curve(labels, scores, pos_label=1)

    def finite(values) -> List[Optional[float]]:
        return [float(v) if np.isfinite(v) else None for v in values]

    return {
        "roc": {"fpr": finite(fpr), "tpr": finite(tpr), "thresholds": finite(roc_thresholds)},
        "pr": {"precision": finite(precision), "recall": finite(recall), "thresholds": finite(pr_thresholds)},
    }


__all__ = [
    "EvalProtocolError",
    "SplitError",
    "UndefinedMetricError",
    "Protocol",
    "VALID_PROTOCOLS",
    "DEFAULT_RATIOS",
    "DEFAULT_FOLDS",
    "VALIDATION_CARVE",
    "THRESHOLD",
    "SplitSpec",
    "task_stratified_split",
    "label_stratified_split",
    "kfold_task_split",
    "kfold_label_split",
    "make_split",
    "fold_partitions",
    "partition",
    "auroc",
    "auprc",
    "MetricsReport",
    "classification_metrics",
    "per_mode_breakdown",
    "per_category_breakdown",
    "curve_points",
]
