"""
PR 05 — Classical Baselines

Pooled-feature baselines trained with inverse-frequency class weights:
- logreg:        L-BFGS logistic regression, C=1.0; score = P(attack)
- linear_svm:    hinge loss by epoch SGD, alpha=1e-4; score = raw decision value
- random_forest: 200 Gini trees, sqrt(p) features per split; score = mean
                 over trees of the class-weighted leaf attack fraction

Reads: pooled feature rows (feature_extractor.pooled_matrix)
Creates: TrainedModel artifacts (see model_store)
"""

import logging
import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
from sklearn.ensemble import RandomForestClassifier
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression, SGDClassifier

from sessionguard.model_store import CLASSICAL_KINDS, FeatureDimensionError, TrainedModel


logger = logging.getLogger("sessionguard.classical_classifiers")


class ClassicalModelError(Exception):
    """Raised when a classical baseline cannot be trained or scored"""
    pass


class ClassicalTrainingError(ClassicalModelError):
    """Raised when the logistic-regression solver stops before converging"""

    def __init__(self, message: str, grad_norm: float):
        super().__init__(f"{message} (final gradient norm {grad_norm:.3e})")
        self.grad_norm = grad_norm


DEFAULT_C = 1.0
DEFAULT_ALPHA = 1e-4
DEFAULT_N_TREES = 200
LOGREG_MAX_ITER = 1000
LOGREG_TOL = 1e-4
SVM_MAX_EPOCHS = 1000
SVM_TOL = 1e-3

ClassicalModel = TrainedModel


@dataclass
class LabeledMatrix:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2:
            raise ClassicalModelError(f"X must be a 2-D matrix, got shape {self.X.shape}")
        if self.y.shape != (self.X.shape[0],):
            raise ClassicalModelError(
                f"y must have one label per row: {self.y.shape[0]} labels for {self.X.shape[0]} rows"
            )
        if not np.isin(self.y, (0, 1)).all():
            raise ClassicalModelError("labels must be 0 (benign) or 1 (attack)")
        if not np.isfinite(self.X).all():
            raise ClassicalModelError("X contains non-finite values")

    @property
    def m(self) -> int:
        return int(self.X.shape[0])

    @property
    def p(self) -> int:
        return int(self.X.shape[1])

    @property
    def weights(self) -> Dict[int, float]:
        return class_weights(self.y)

    def sample_weights(self) -> np.ndarray:
        w = self.weights
        return np.where(self.y == 1, w[1], w[0])


def class_weights(y) -> Dict[int, float]:
    """w_c = m / (2 * count_c)."""
    y = np.asarray(y, dtype=np.int64)
    counts = np.bincount(y, minlength=2)
    if y.size < 2 or (counts[:2] == 0).any():
        raise ClassicalModelError(
            f"class weights need both classes present, got counts benign={counts[0]} attack={counts[1]}"
        )
    m = y.size
    return {0: m / (2.0 * counts[0]), 1: m / (2.0 * counts[1])}


def _weights_or_none(data: LabeledMatrix, balanced: bool) -> Optional[Dict[int, float]]:
    weights = data.weights
    return weights if balanced else None


# ---------------------------------------------------------------------------
# Logistic regression
# ---------------------------------------------------------------------------

def logreg_loss(coef: np.ndarray, intercept: float, data: LabeledMatrix, c: float = DEFAULT_C,
                balanced: bool = True) -> float:
    """Class-weighted summed negative log-likelihood + ||w||^2 / (2C)."""
    z = data.X @ np.asarray(coef, dtype=np.float64).ravel() + intercept
    sign = np.where(data.y == 1, 1.0, -1.0)
    sw = data.sample_weights() if balanced else np.ones(data.m)
    nll = np.sum(sw * np.logaddexp(0.0, -sign * z))
    return float(nll + np.dot(coef.ravel(), coef.ravel()) / (2.0 * c))


def logreg_gradient_norm(coef: np.ndarray, intercept: float, data: LabeledMatrix,
                         c: float = DEFAULT_C, balanced: bool = True) -> float:
    coef = np.asarray(coef, dtype=np.float64).ravel()
    z = data.X @ coef + intercept
    sw = data.sample_weights() if balanced else np.ones(data.m)
    residual = sw * (np.exp(-np.logaddexp(0.0, -z)) - data.y)
    grad_w = data.X.T @ residual + coef / c
    grad_b = residual.sum()
    return float(np.sqrt(np.dot(grad_w, grad_w) + grad_b ** 2))


def _logreg_estimator(data: LabeledMatrix, c: float, max_iter: int, tol: float,
                      balanced: bool, warm_start: bool = False) -> LogisticRegression:
    return LogisticRegression(
        C=c,
        solver="lbfgs",
        max_iter=max_iter,
        tol=tol,
        class_weight=_weights_or_none(data, balanced),
        warm_start=warm_start,
    )


def train_logreg(
    data: LabeledMatrix,
    c: float = DEFAULT_C,
    max_iter: int = LOGREG_MAX_ITER,
    tol: float = LOGREG_TOL,
    balanced: bool = True,
) -> TrainedModel:
    if c <= 0:
        raise ClassicalModelError(f"c must be > 0, got: {c}")
    class_weights(data.y)
    estimator = _logreg_estimator(data, c, max_iter, tol, balanced)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        estimator.fit(data.X, data.y)
    if any(issubclass(w.category, ConvergenceWarning) for w in caught):
        grad_norm = logreg_gradient_norm(estimator.coef_, float(estimator.intercept_[0]), data, c, balanced)
        raise ClassicalTrainingError(f"logreg did not converge within {max_iter} iterations", grad_norm)

    logger.debug("logreg fitted on m=%d p=%d in %d iterations", data.m, data.p, int(estimator.n_iter_[0]))
    return TrainedModel(
        kind="logreg",
        estimator=estimator,
        n_features=data.p,
        hyperparameters={"c": c, "max_iter": max_iter, "tol": tol, "balanced": balanced, "solver": "lbfgs"},
    )


def logreg_loss_trace(data: LabeledMatrix, c: float = DEFAULT_C, steps: int = 20,
                      balanced: bool = True) -> List[float]:
    """Objective value after each single solver iteration (warm-started)."""
    estimator = _logreg_estimator(data, c, max_iter=1, tol=0.0, balanced=balanced, warm_start=True)
    trace = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        for _ in range(steps):
            estimator.fit(data.X, data.y)
            trace.append(logreg_loss(estimator.coef_, float(estimator.intercept_[0]), data, c, balanced))
    return trace


# ---------------------------------------------------------------------------
# Linear SVM
# ---------------------------------------------------------------------------

def hinge_term(scores, y) -> float:
    """Summed hinge loss max(0, 1 - y*s) with y mapped to {-1, +1}."""
    scores = np.asarray(scores, dtype=np.float64)
    sign = np.where(np.asarray(y) == 1, 1.0, -1.0)
    return float(np.maximum(0.0, 1.0 - sign * scores).sum())


def svm_objective(model: TrainedModel, data: LabeledMatrix) -> float:
    """Mean class-weighted hinge + (alpha/2)||w||^2, the objective SGD descends."""
    estimator = model.estimator
    alpha = model.hyperparameters["alpha"]
    scores = estimator.decision_function(data.X)
    sign = np.where(data.y == 1, 1.0, -1.0)
    sw = data.sample_weights() if model.hyperparameters.get("balanced", True) else np.ones(data.m)
    hinge = np.mean(sw * np.maximum(0.0, 1.0 - sign * scores))
    w = estimator.coef_.ravel()
    return float(hinge + 0.5 * alpha * np.dot(w, w))


def train_linear_svm(
    data: LabeledMatrix,
    alpha: float = DEFAULT_ALPHA,
    max_epochs: int = SVM_MAX_EPOCHS,
    tol: float = SVM_TOL,
    seed: int = 42,
    balanced: bool = True,
) -> TrainedModel:
    if alpha <= 0:
        raise ClassicalModelError(f"alpha must be > 0, got: {alpha}")
    class_weights(data.y)
    estimator = SGDClassifier(
        loss="hinge",
        penalty="l2",
        alpha=alpha,
        max_iter=max_epochs,
        tol=tol,
        learning_rate="optimal",
        class_weight=_weights_or_none(data, balanced),
        shuffle=True,
        random_state=seed,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        estimator.fit(data.X, data.y)
    return TrainedModel(
        kind="linear_svm",
        estimator=estimator,
        n_features=data.p,
        hyperparameters={
            "alpha": alpha, "max_epochs": max_epochs, "tol": tol,
            "seed": seed, "balanced": balanced, "learning_rate": "optimal",
        },
    )


# ---------------------------------------------------------------------------
# Random forest
# ---------------------------------------------------------------------------

def train_random_forest(
    data: LabeledMatrix,
    n_trees: int = DEFAULT_N_TREES,
    seed: int = 42,
    balanced: bool = True,
) -> TrainedModel:
    if n_trees < 1:
        raise ClassicalModelError(f"n_trees must be >= 1, got: {n_trees}")
    class_weights(data.y)
    estimator = RandomForestClassifier(
        n_estimators=n_trees,
        criterion="gini",
        max_features="sqrt",
        min_samples_leaf=1,
        bootstrap=True,
        class_weight=_weights_or_none(data, balanced),
        random_state=seed,
        n_jobs=1,
    )
    estimator.fit(data.X, data.y)
    return TrainedModel(
        kind="random_forest",
        estimator=estimator,
        n_features=data.p,
        hyperparameters={
            "n_trees": n_trees, "seed": seed, "balanced": balanced,
            "criterion": "gini", "max_features": "sqrt", "min_samples_leaf": 1,
        },
    )


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

def predict_score(model: TrainedModel, X) -> np.ndarray:
    """Higher = more attack-like."""
    if model.kind not in CLASSICAL_KINDS:
        raise ClassicalModelError(f"kind must be one of {CLASSICAL_KINDS}, got: {model.kind}")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2 and X.shape[0] == 0:
        return np.zeros(0, dtype=np.float64)
    if X.ndim != 2:
        raise FeatureDimensionError(f"X must be a 2-D matrix, got shape {X.shape}")
    model.check_dim(X.shape[1])

    estimator = model.estimator
    if model.kind == "logreg":
        scores = estimator.predict_proba(X)[:, 1]
    elif model.kind == "linear_svm":
        scores = estimator.decision_function(X)
    else:
        scores = estimator.predict_proba(X)[:, 1]
    return np.asarray(scores, dtype=np.float64)


def fit_classical(kind: str, data: LabeledMatrix, seed: int = 42, **hyperparameters) -> TrainedModel:
    if kind == "logreg":
        return train_logreg(data, **hyperparameters)
    if kind == "linear_svm":
        return train_linear_svm(data, seed=seed, **hyperparameters)
    if kind == "random_forest":
        return train_random_forest(data, seed=seed, **hyperparameters)
    raise ClassicalModelError(f"kind must be one of {CLASSICAL_KINDS}, got: {kind}")


__all__ = [
    "ClassicalModelError",
    "ClassicalTrainingError",
    "ClassicalModel",
    "LabeledMatrix",
    "DEFAULT_C",
    "DEFAULT_ALPHA",
    "DEFAULT_N_TREES",
    "class_weights",
    "logreg_loss",
    "logreg_gradient_norm",
    "logreg_loss_trace",
    "train_logreg",
    "hinge_term",
    "svm_objective",
    "train_linear_svm",
    "train_random_forest",
    "predict_score",
    "fit_classical",
]
