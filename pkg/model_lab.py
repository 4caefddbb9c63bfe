"""Group-aware splitting, classifiers, evaluation, SHAP-driven feature elimination and nested CV."""
from __future__ import annotations

import itertools
import logging
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field
from scipy.optimize import minimize
from scipy.special import expit

from errors import DataError, LeakageError
from feature_extraction import FeatureMatrix, normalize
from forest import FORMAT_VERSION, RandomForest, TreeParams, shap_matrix, train_random_forest
from metrics import record_model, record_stage

logger = logging.getLogger(__name__)

MODEL_FAMILIES = ("random_forest", "logistic")
# Families of the source study left out of this toolkit
OMITTED_FAMILIES = ("svm", "lightgbm", "xgboost")
DEFAULT_GRIDS: Dict[str, Dict[str, List[Any]]] = {
    "random_forest": {"n_trees": [50], "max_depth": [3, 6], "max_features": ["sqrt"]},
    "logistic": {"l2_lambda": [0.1, 1.0, 10.0]},
}
SCORE_TOL = 1e-12
# Relative loss change at which the logistic fit stops
LOGISTIC_FTOL = 1e-13

Model = Union[RandomForest, "LogisticModel"]


# --------------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitPlan:
    """
    Fold assignment of whole groups. For k-fold plans ``assignment`` maps a
    group to its fold in 0..k-1; for hold-out plans fold 0 is the test set
    and fold 1 the training set.
    """

    seed: int
    assignment: Dict[str, int]
    k: Optional[int] = None
    ratio: Optional[float] = None

    @property
    def n_folds(self) -> int:
        return self.k if self.k is not None else 2

    def fold_groups(self, fold: int) -> Tuple[str, ...]:
        return tuple(sorted(g for g, f in self.assignment.items() if f == fold))

    def splits(self, groups: Sequence[str]) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        """(train_idx, test_idx) row indices per split."""
        folds = np.array([self.assignment[g] for g in groups])
        test_folds = range(self.k) if self.k is not None else (0,)
        for fold in test_folds:
            yield np.flatnonzero(folds != fold), np.flatnonzero(folds == fold)


def group_labels(groups: Sequence[str], labels: Sequence[int]) -> Dict[str, int]:
    """One label per group; groups with mixed labels are an error."""
    found: Dict[str, set] = {}
    for g, y in zip(groups, labels):
        found.setdefault(g, set()).add(int(y))
    mixed = sorted(g for g, ys in found.items() if len(ys) > 1)
    if mixed:
        raise DataError(f"group(s) with heterogeneous labels: {', '.join(mixed)}")
    return {g: ys.pop() for g, ys in found.items()}


def grouped_stratified_split(
    groups: Sequence[str],
    labels: Sequence[int],
    k: Optional[int] = None,
    ratio: Optional[float] = None,
    seed: int = 0,
) -> SplitPlan:
    """
    Assign whole groups to folds, stratified by class at group level.

    Groups of each class (in sorted class order) are shuffled by ``seed`` and
    dealt round-robin into ``k`` folds, the deal continuing across classes.
    With ``ratio`` instead, round(ratio * n) groups of each class go to test.
    """
    if (k is None) == (ratio is None):
        raise ValueError("give exactly one of k or ratio")
    per_group = group_labels(groups, labels)
    rng = np.random.default_rng(seed)
    assignment: Dict[str, int] = {}
    if k is not None:
        if k < 2:
            raise DataError(f"k must be at least 2, got {k}")
        if len(per_group) < k:
            raise DataError(f"{len(per_group)} groups cannot fill {k} folds")
        position = 0
        for cls in sorted(set(per_group.values())):
            members = sorted(g for g, y in per_group.items() if y == cls)
            for g in rng.permutation(members):
                assignment[str(g)] = position % k
                position += 1
        return SplitPlan(seed=seed, assignment=assignment, k=k)

    if not 0 < ratio < 1:
        raise DataError(f"test ratio must be in (0, 1), got {ratio}")
    for cls in sorted(set(per_group.values())):
        members = [str(g) for g in rng.permutation(sorted(g for g, y in per_group.items() if y == cls))]
        n_test = int(np.floor(ratio * len(members) + 0.5))
        if len(members) > 1:
            n_test = min(max(n_test, 1), len(members) - 1)
        for i, g in enumerate(members):
            assignment[g] = 0 if i < n_test else 1
    if len(per_group) < 2:
        raise DataError("a hold-out split needs at least two groups")
    return SplitPlan(seed=seed, assignment=assignment, ratio=ratio)


def leakage_count(groups: Sequence[str], train_idx: np.ndarray, test_idx: np.ndarray) -> int:
    g = np.asarray(groups, dtype=object)
    return len(set(g[train_idx]) & set(g[test_idx]))


def audit_split(groups: Sequence[str], train_idx: np.ndarray, test_idx: np.ndarray) -> None:
    overlap = leakage_count(groups, train_idx, test_idx)
    if overlap:
        raise LeakageError(f"{overlap} group(s) appear in both train and test")


# -------------------------------------------------------------------- metrics


def roc_points(y_true: np.ndarray, scores: np.ndarray) -> Optional[List[Tuple[float, float]]]:
    """ROC curve with tied scores stepped together; None for a single-class set."""
    y = np.asarray(y_true, dtype=int)
    s = np.asarray(scores, dtype=float)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tps = np.cumsum(y)[last]
    fps = (last + 1) - tps
    points = [(0.0, 0.0)] + [(float(fp) / n_neg, float(tp) / n_pos) for fp, tp in zip(fps, tps)]
    return points


def auc(points: Sequence[Tuple[float, float]]) -> float:
    """Trapezoid area under ROC points."""
    x = np.array([p[0] for p in points])
    y = np.array([p[1] for p in points])
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def classification_metrics(y_true: np.ndarray, y_pred: np.ndarray, scores: Optional[np.ndarray] = None) -> Dict[str, Optional[float]]:
    y = np.asarray(y_true, dtype=int)
    p = np.asarray(y_pred, dtype=int)
    tp = int(np.sum((p == 1) & (y == 1)))
    fp = int(np.sum((p == 1) & (y == 0)))
    fn = int(np.sum((p == 0) & (y == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    roc_auc = None
    if scores is not None:
        points = roc_points(y, scores)
        roc_auc = auc(points) if points is not None else None
    return {
        "accuracy": float(np.mean(p == y)) if len(y) else 0.0,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "roc_auc": roc_auc,
    }


@dataclass(frozen=True)
class Evaluation:
    metrics: Dict[str, Optional[float]]
    roc: Optional[List[Tuple[float, float]]]


def evaluate(
    model: Model,
    X: np.ndarray,
    y: np.ndarray,
    plan: Optional[SplitPlan] = None,
    groups: Optional[Sequence[str]] = None,
    fold: int = 0,
) -> Evaluation:
    """
    Accuracy, precision, recall, F1 and ROC-AUC; AUC is absent for single-class sets.

    With a ``plan``, every scored row's group must sit in the plan's test
    ``fold``; anything else raises LeakageError.
    """
    if plan is not None:
        if groups is None or len(groups) != len(y):
            raise DataError("checking against a split plan needs one group per scored row")
        stray = sorted({str(g) for g in groups if plan.assignment.get(str(g)) != fold})
        if stray:
            raise LeakageError(f"scored rows from group(s) outside test fold {fold}: {', '.join(stray)}")
    scores = model.decision_function(X)
    metrics = classification_metrics(y, model.predict(X), scores)
    return Evaluation(metrics=metrics, roc=roc_points(y, scores))


# ------------------------------------------------------------------- logistic


@dataclass(eq=False)
class LogisticModel:
    weights: np.ndarray
    intercept: float
    l2_lambda: float
    converged: bool
    iterations: int

    @property
    def n_features(self) -> int:
        return int(len(self.weights))

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        """Log-odds of class 1."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DataError(f"model expects {self.n_features} features, got {X.shape[1]}")
        return X @ self.weights + self.intercept

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return expit(self.decision_function(X))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self.decision_function(X) > 0).astype(int)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "family": "logistic",
            "format_version": FORMAT_VERSION,
            "weights": self.weights.tolist(),
            "intercept": self.intercept,
            "l2_lambda": self.l2_lambda,
            "converged": self.converged,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LogisticModel":
        return cls(
            weights=np.asarray(data["weights"], dtype=float),
            intercept=float(data["intercept"]),
            l2_lambda=float(data["l2_lambda"]),
            converged=bool(data["converged"]),
            iterations=int(data["iterations"]),
        )


def logistic_objective(theta: np.ndarray, X: np.ndarray, y: np.ndarray, l2_lambda: float) -> Tuple[float, np.ndarray]:
    """
    Penalized negative log-likelihood and its gradient.

    ``theta`` is [intercept, weights...]; the intercept is not penalized.
    """
    z = theta[0] + X @ theta[1:]
    loss = float(np.sum(np.logaddexp(0.0, z) - y * z) + 0.5 * l2_lambda * np.dot(theta[1:], theta[1:]))
    r = expit(z) - y
    grad = np.concatenate(([np.sum(r)], X.T @ r + l2_lambda * theta[1:]))
    return loss, grad


def train_logistic(
    X: np.ndarray,
    y: np.ndarray,
    l2_lambda: float = 1.0,
    max_iters: int = 500,
    tol: float = 1e-8,
) -> LogisticModel:
    """
    L2-regularized logistic regression fitted with L-BFGS-B from zero weights.

    The fit stops once the largest gradient component is at most ``tol`` or
    the loss stops improving (relative change below ``LOGISTIC_FTOL``).
    Hitting ``max_iters`` first leaves ``converged`` False and logs a warning.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("cannot train a logistic model on an empty matrix")
    if l2_lambda < 0:
        raise DataError("l2_lambda must be >= 0")
    if max_iters < 1:
        raise DataError(f"max_iters must be >= 1, got {max_iters}")
    res = minimize(
        logistic_objective,
        np.zeros(X.shape[1] + 1),
        args=(X, y, l2_lambda),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iters, "gtol": tol, "ftol": LOGISTIC_FTOL},
    )
    if not res.success:
        logger.warning(
            "Logistic fit did not converge",
            extra={"iterations": int(res.nit), "score": float(np.max(np.abs(res.jac)))},
        )
    return LogisticModel(
        weights=np.asarray(res.x[1:], dtype=float).copy(),
        intercept=float(res.x[0]),
        l2_lambda=l2_lambda,
        converged=bool(res.success),
        iterations=int(res.nit),
    )


def linear_shap(model: LogisticModel, X: np.ndarray, background: np.ndarray) -> Tuple[np.ndarray, float]:
    """Exact SHAP values of the log-odds under feature independence."""
    mean = np.mean(np.atleast_2d(background), axis=0)
    phi = (np.atleast_2d(X) - mean) * model.weights
    return phi, float(model.intercept + mean @ model.weights)


# ------------------------------------------------------------ model families


def expand_grid(grid: Dict[str, List[Any]]) -> List[Dict[str, Any]]:
    """Cartesian product of the grid in sorted-key order."""
    keys = sorted(grid)
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


def fit_model(family: str, X: np.ndarray, y: np.ndarray, params: Dict[str, Any], seed: int, workers: int = 1) -> Model:
    if family == "random_forest":
        tree = TreeParams(
            max_depth=params.get("max_depth"),
            min_samples_split=int(params.get("min_samples_split", 2)),
            min_samples_leaf=int(params.get("min_samples_leaf", 1)),
            max_features=params.get("max_features", "sqrt"),
        )
        model = train_random_forest(X, y, n_trees=int(params.get("n_trees", 50)), seed=seed, params=tree, workers=workers)
    elif family == "logistic":
        model = train_logistic(
            X,
            y,
            l2_lambda=float(params.get("l2_lambda", 1.0)),
            max_iters=int(params.get("max_iters", 500)),
            tol=float(params.get("tol", 1e-8)),
        )
    else:
        raise DataError(f"unknown model family {family!r}; expected one of {list(MODEL_FAMILIES)}")
    record_model(family)
    return model


def explain(model: Model, X: np.ndarray, background: np.ndarray) -> Tuple[np.ndarray, float]:
    """SHAP matrix and base value: TreeSHAP for forests, linear SHAP for logistic models."""
    if isinstance(model, RandomForest):
        return shap_matrix(model, X)
    return linear_shap(model, X, background)


def model_to_dict(model: Model) -> Dict[str, Any]:
    return model.to_dict()


def model_from_dict(data: Dict[str, Any]) -> Model:
    if data.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported model format version {data.get('format_version')!r}")
    if data.get("family") == "random_forest":
        return RandomForest.from_dict(data)
    if data.get("family") == "logistic":
        return LogisticModel.from_dict(data)
    raise DataError(f"unknown model family {data.get('family')!r}")


def derive_seed(seed: int, *path: int) -> int:
    """Independent 32-bit seed for a position in the protocol (repeat, fold, ...)."""
    return int(np.random.SeedSequence([seed, *path]).generate_state(1)[0])


def _fold_fit(
    matrix: FeatureMatrix,
    train_idx: np.ndarray,
    test_idx: np.ndarray,
    family: str,
    params: Dict[str, Any],
    seed: int,
    normalization: Optional[str],
    workers: int,
) -> Tuple[Model, np.ndarray, np.ndarray]:
    data = normalize(matrix, normalization, fit_rows=train_idx) if normalization else matrix
    model = fit_model(family, data.X[train_idx], data.labels[train_idx], params, seed, workers)
    return model, data.X[train_idx], data.X[test_idx]


# ------------------------------------------------------------------------ RFE


@dataclass(frozen=True)
class RfeStep:
    n_features: int
    score: float
    features: Tuple[str, ...]
    dropped: Optional[str]
    importance: Dict[str, float]


@dataclass(frozen=True)
class RfeResult:
    steps: Tuple[RfeStep, ...]
    best_features: Tuple[str, ...]
    best_score: float

    @property
    def curve(self) -> List[Tuple[int, float]]:
        return [(s.n_features, s.score) for s in self.steps]


def shap_rfe(
    matrix: FeatureMatrix,
    family: str = "random_forest",
    params: Optional[Dict[str, Any]] = None,
    k: int = 5,
    seed: int = 0,
    normalization: Optional[str] = None,
    workers: int = 1,
) -> RfeResult:
    """
    Recursive feature elimination driven by mean |SHAP| on validation rows.

    Each step scores the active set by mean F1 over a grouped k-fold split,
    then drops the feature with the smallest mean |SHAP|; the loop runs down
    to a single feature. Ties for the best score go to the smaller set.
    """
    if matrix.n_features < 2:
        raise DataError("feature elimination needs at least two features")
    params = params if params is not None else expand_grid(DEFAULT_GRIDS[family])[0]
    n_groups = len(set(matrix.group_ids))
    plan = grouped_stratified_split(matrix.group_ids, matrix.labels, k=min(k, n_groups), seed=seed)
    folds = list(plan.splits(matrix.group_ids))
    active = list(range(matrix.n_features))
    steps: List[RfeStep] = []
    while True:
        sub = matrix.select_features(active)
        scores, magnitudes = [], []
        for fold, (train_idx, val_idx) in enumerate(folds):
            audit_split(matrix.group_ids, train_idx, val_idx)
            model, X_train, X_val = _fold_fit(
                sub, train_idx, val_idx, family, params, derive_seed(seed, fold), normalization, workers
            )
            scores.append(classification_metrics(sub.labels[val_idx], model.predict(X_val))["f1"])
            phi, _ = explain(model, X_val, X_train)
            magnitudes.append(np.abs(phi))
        importance = np.mean(np.vstack(magnitudes), axis=0)
        ids = tuple(sub.feature_ids)
        drop = int(np.argmin(importance)) if len(active) > 1 else None
        steps.append(
            RfeStep(
                n_features=len(active),
                score=float(np.mean(scores)),
                features=ids,
                dropped=ids[drop] if drop is not None else None,
                importance={f: float(v) for f, v in zip(ids, importance)},
            )
        )
        logger.info(
            "Feature elimination step",
            extra={"n_events": len(active), "score": steps[-1].score, "feature": steps[-1].dropped},
        )
        if drop is None:
            break
        del active[drop]

    best = steps[0]
    for step in steps[1:]:
        if step.score >= best.score - SCORE_TOL:
            best = step
    return RfeResult(steps=tuple(steps), best_features=best.features, best_score=best.score)


# ------------------------------------------------------------------ nested CV


@dataclass(frozen=True)
class RepeatResult:
    repeat: int
    seed: int
    params: Dict[str, Any]
    inner_scores: Dict[str, float]
    metrics: Dict[str, Optional[float]]
    roc: Optional[List[Tuple[float, float]]]
    test_groups: Tuple[str, ...]


@dataclass(frozen=True)
class NestedCvResult:
    repeats: Tuple[RepeatResult, ...]
    best_params: Dict[str, Any]
    failed: Tuple[Dict[str, Any], ...] = ()
    leakage_violations: int = 0
    audited_splits: int = 0

    def summary(self) -> Dict[str, Dict[str, Optional[float]]]:
        """Mean and SD (n-1) of each metric over repeats; AUC over repeats that have one."""
        out: Dict[str, Dict[str, Optional[float]]] = {}
        for name in ("accuracy", "precision", "recall", "f1", "roc_auc"):
            values = [r.metrics[name] for r in self.repeats if r.metrics.get(name) is not None]
            if not values:
                out[name] = {"mean": None, "sd": None, "n": 0}
                continue
            out[name] = {
                "mean": float(np.mean(values)),
                "sd": float(np.std(values, ddof=1)) if len(values) > 1 else 0.0,
                "n": len(values),
            }
        return out


def _params_key(params: Dict[str, Any]) -> str:
    return repr(sorted(params.items()))


def nested_cv(
    matrix: FeatureMatrix,
    family: str = "random_forest",
    grid: Optional[Dict[str, List[Any]]] = None,
    inner_k: int = 5,
    outer_repeats: int = 10,
    test_ratio: float = 0.2,
    seed: int = 0,
    normalization: Optional[str] = None,
    workers: int = 1,
) -> NestedCvResult:
    """
    Repeated grouped hold-out evaluation with inner grouped k-fold tuning.

    Every repeat draws an 80:20 (``test_ratio``) group split, picks the grid
    point with the best mean inner F1 on the training portion, refits on the
    whole training portion and scores the held-out groups. Normalization is
    always fit on the rows a model trains on. Every split is audited for
    shared groups.
    """
    points = expand_grid(grid or DEFAULT_GRIDS[family])
    if not points:
        raise DataError("hyperparameter grid is empty")
    started = time.perf_counter()
    groups = matrix.group_ids
    repeats: List[RepeatResult] = []
    failed: List[Dict[str, Any]] = []
    violations = 0
    audited = 0
    for r in range(outer_repeats):
        repeat_seed = derive_seed(seed, r)
        outer = grouped_stratified_split(groups, matrix.labels, ratio=test_ratio, seed=repeat_seed)
        train_idx, test_idx = next(outer.splits(groups))
        violations += leakage_count(groups, train_idx, test_idx)
        audited += 1

        inner_matrix = matrix.subset(train_idx)
        n_train_groups = len(set(inner_matrix.group_ids))
        k = min(inner_k, n_train_groups)
        if k < inner_k:
            logger.warning(
                "Fewer training groups than inner folds",
                extra={"repeat": r, "fold": k, "result": f"inner_k reduced from {inner_k}"},
            )
        inner = grouped_stratified_split(inner_matrix.group_ids, inner_matrix.labels, k=k, seed=derive_seed(seed, r, 1))
        inner_splits = list(inner.splits(inner_matrix.group_ids))
        for tr, va in inner_splits:
            violations += leakage_count(inner_matrix.group_ids, tr, va)
            audited += 1

        inner_scores: Dict[str, float] = {}
        best_params, best_score = None, -np.inf
        for params in points:
            try:
                scores = []
                for fold, (tr, va) in enumerate(inner_splits):
                    model, _, X_val = _fold_fit(
                        inner_matrix, tr, va, family, params, derive_seed(seed, r, 2, fold), normalization, workers
                    )
                    scores.append(classification_metrics(inner_matrix.labels[va], model.predict(X_val))["f1"])
            except (DataError, ValueError, np.linalg.LinAlgError) as e:
                failed.append({"repeat": r, "params": params, "error": str(e)})
                logger.warning("Grid point failed", extra={"repeat": r, "params": params, "result": str(e)})
                continue
            score = float(np.mean(scores))
            inner_scores[_params_key(params)] = score
            if score > best_score + SCORE_TOL:
                best_params, best_score = params, score
        if best_params is None:
            raise DataError(f"repeat {r}: every grid point failed to train")

        model, _, X_test = _fold_fit(matrix, train_idx, test_idx, family, best_params, repeat_seed, normalization, workers)
        result = evaluate(model, X_test, matrix.labels[test_idx], plan=outer, groups=[groups[i] for i in test_idx])
        repeats.append(
            RepeatResult(
                repeat=r,
                seed=repeat_seed,
                params=best_params,
                inner_scores=inner_scores,
                metrics=result.metrics,
                roc=result.roc,
                test_groups=tuple(sorted(set(groups[i] for i in test_idx))),
            )
        )
        logger.info(
            "Outer repeat finished",
            extra={"repeat": r, "params": best_params, "score": result.metrics["f1"]},
        )
    if violations:
        raise LeakageError(f"{violations} group overlap(s) across {audited} audited splits")
    record_stage("nested_cv", time.perf_counter() - started)

    counts = Counter(_params_key(r.params) for r in repeats)
    top = max(counts.values())
    chosen = next(r.params for r in repeats if counts[_params_key(r.params)] == top)
    return NestedCvResult(
        repeats=tuple(repeats),
        best_params=chosen,
        failed=tuple(failed),
        leakage_violations=violations,
        audited_splits=audited,
    )


@dataclass(frozen=True)
class WindowSweepResult:
    scores: Dict[float, float]
    best_window_s: float
    results: Dict[float, NestedCvResult] = field(default_factory=dict)


def window_sweep(
    build: Callable[[float], FeatureMatrix],
    windows: Sequence[float],
    normalization: Optional[str] = None,
    **cv_kwargs: Any,
) -> WindowSweepResult:
    """
    Treat the window size as a hyperparameter: nested CV per size, best by
    mean outer F1 (ties go to the smaller window).
    """
    scores: Dict[float, float] = {}
    results: Dict[float, NestedCvResult] = {}
    for window_s in sorted(windows):
        matrix = build(window_s)
        if matrix.n_rows == 0:
            logger.warning("No windows at this size", extra={"window_s": window_s})
            continue
        result = nested_cv(matrix, normalization=normalization, **cv_kwargs)
        results[window_s] = result
        scores[window_s] = float(result.summary()["f1"]["mean"] or 0.0)
    if not scores:
        raise DataError("no window size produced any feature rows")
    best = min(scores, key=lambda w: (-scores[w], w))
    return WindowSweepResult(scores=scores, best_window_s=best, results=results)


# --------------------------------------------------------------------- report


class ModelReport(BaseModel):
    """Serialized outcome of a train run."""

    family: str
    catalog: str
    classes: List[str]
    feature_ids: List[str]
    window_s: Optional[float] = None
    hyperparameters: Dict[str, Any]
    metrics: Dict[str, Dict[str, Optional[float]]]
    repeats: List[Dict[str, Any]]
    roc: List[List[float]] = Field(default_factory=list)
    mean_abs_shap: Dict[str, float] = Field(default_factory=dict)
    base_value: Optional[float] = None
    window_scores: Dict[str, float] = Field(default_factory=dict)
    overrides: Dict[str, Any] = Field(default_factory=dict)
    seeds: Dict[str, Any] = Field(default_factory=dict)
    failed_grid_points: List[Dict[str, Any]] = Field(default_factory=list)
    leakage_violations: int = 0
    omitted_families: List[str] = Field(default_factory=lambda: list(OMITTED_FAMILIES))


def repeat_record(r: RepeatResult) -> Dict[str, Any]:
    return {
        "repeat": r.repeat,
        "seed": r.seed,
        "params": r.params,
        "inner_scores": r.inner_scores,
        "metrics": r.metrics,
        "test_groups": list(r.test_groups),
    }
