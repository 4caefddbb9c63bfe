"""Tests for grouped splits, evaluation metrics, logistic models, SHAP elimination and nested CV."""
import logging

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from errors import DataError, LeakageError
from feature_extraction import FeatureMatrix
from model_lab import (
    NestedCvResult,
    RepeatResult,
    audit_split,
    auc,
    classification_metrics,
    derive_seed,
    evaluate,
    expand_grid,
    explain,
    fit_model,
    grouped_stratified_split,
    leakage_count,
    linear_shap,
    logistic_objective,
    model_from_dict,
    model_to_dict,
    nested_cv,
    roc_points,
    shap_rfe,
    train_logistic,
    window_sweep,
)


def grouped_matrix(groups_per_class=6, rows=3, n_noise=3, sep=3.0, seed=0):
    """Feature 0 separates the classes; the rest is noise."""
    rng = np.random.default_rng(seed)
    X, group_ids, labels = [], [], []
    for cls in (0, 1):
        for g in range(groups_per_class):
            for _ in range(rows):
                X.append([cls * sep + rng.normal(0.0, 0.5)] + list(rng.normal(0.0, 1.0, n_noise)))
                group_ids.append(f"g{cls}{g}")
                labels.append(cls)
    n = len(labels)
    return FeatureMatrix(
        catalog="test",
        feature_ids=("signal",) + tuple(f"noise{j}" for j in range(n_noise)),
        X=np.asarray(X),
        group_ids=tuple(group_ids),
        trial_ids=("0",) * n,
        window_idx=np.zeros(n, dtype=int),
        labels=np.asarray(labels),
    )


def test_kfold_keeps_groups_whole_and_balanced():
    """Test every group sits in one fold and each fold gets both classes."""
    m = grouped_matrix()
    plan = grouped_stratified_split(m.group_ids, m.labels, k=3, seed=7)
    assert plan.n_folds == 3
    for fold in range(3):
        members = plan.fold_groups(fold)
        assert sum(g.startswith("g0") for g in members) == 2
        assert sum(g.startswith("g1") for g in members) == 2
    for train_idx, test_idx in plan.splits(m.group_ids):
        assert leakage_count(m.group_ids, train_idx, test_idx) == 0
        assert len(train_idx) + len(test_idx) == m.n_rows
    again = grouped_stratified_split(m.group_ids, m.labels, k=3, seed=7)
    assert again.assignment == plan.assignment


def test_holdout_ratio_per_class():
    """Test hold-out splits draw round(ratio * n) groups per class, at least one."""
    m = grouped_matrix()
    plan = grouped_stratified_split(m.group_ids, m.labels, ratio=0.2, seed=1)
    test = plan.fold_groups(0)
    assert len(test) == 2
    assert {g[:2] for g in test} == {"g0", "g1"}
    small = grouped_matrix(groups_per_class=2)
    plan = grouped_stratified_split(small.group_ids, small.labels, ratio=0.2, seed=1)
    assert len(plan.fold_groups(0)) == 2
    assert len(plan.fold_groups(1)) == 2


def test_split_errors():
    """Test mixed-label groups, too few groups and ambiguous arguments."""
    with pytest.raises(DataError, match="heterogeneous"):
        grouped_stratified_split(["a", "a", "b"], [0, 1, 1], k=2)
    with pytest.raises(DataError, match="cannot fill"):
        grouped_stratified_split(["a", "b"], [0, 1], k=3)
    with pytest.raises(ValueError):
        grouped_stratified_split(["a", "b"], [0, 1], k=2, ratio=0.5)


def test_audit_split_detects_leakage():
    """Test a group on both sides raises."""
    groups = ["a", "a", "b", "c"]
    with pytest.raises(LeakageError):
        audit_split(groups, np.array([0, 2]), np.array([1, 3]))
    audit_split(groups, np.array([0, 1]), np.array([2, 3]))


def test_roc_known_example():
    """Test the textbook four-point ROC."""
    points = roc_points(np.array([0, 0, 1, 1]), np.array([0.1, 0.4, 0.35, 0.8]))
    assert points == [(0.0, 0.0), (0.0, 0.5), (0.5, 0.5), (0.5, 1.0), (1.0, 1.0)]
    assert auc(points) == pytest.approx(0.75)
    assert roc_points(np.array([1, 1]), np.array([0.2, 0.3])) is None


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 5)), min_size=2, max_size=30))
def test_auc_equals_mann_whitney_u(pairs):
    """Test AUC equals U / (n1 * n2) with ties counted as one half."""
    y = np.array([p[0] for p in pairs])
    s = np.array([p[1] for p in pairs], dtype=float)
    assume(0 < y.sum() < len(y))
    pos, neg = s[y == 1], s[y == 0]
    u = sum((a > b) + 0.5 * (a == b) for a in pos for b in neg)
    assert auc(roc_points(y, s)) == pytest.approx(u / (len(pos) * len(neg)))


def test_classification_metrics():
    """Test accuracy, precision, recall and F1 on a small confusion matrix."""
    y = np.array([1, 1, 1, 0, 0])
    p = np.array([1, 1, 0, 1, 0])
    m = classification_metrics(y, p)
    assert m["accuracy"] == pytest.approx(0.6)
    assert m["precision"] == pytest.approx(2 / 3)
    assert m["recall"] == pytest.approx(2 / 3)
    assert m["f1"] == pytest.approx(2 / 3)
    assert m["roc_auc"] is None
    assert classification_metrics(np.array([1, 1]), np.array([0, 0]), np.array([0.1, 0.2]))["roc_auc"] is None


def test_logistic_matches_generic_optimizer():
    """Test the L-BFGS-B fit reaches the optimum found by a tightly converged BFGS run."""
    m = grouped_matrix(sep=1.0)
    model = train_logistic(m.X, m.labels, l2_lambda=1.0)
    assert model.converged
    reference = minimize(
        lambda th: logistic_objective(th, m.X, m.labels.astype(float), 1.0),
        np.zeros(m.n_features + 1),
        jac=True,
        method="BFGS",
        options={"gtol": 1e-10},
    )
    ours = logistic_objective(np.r_[model.intercept, model.weights], m.X, m.labels.astype(float), 1.0)[0]
    assert ours <= reference.fun + 1e-8
    np.testing.assert_allclose(np.r_[model.intercept, model.weights], reference.x, atol=1e-4)


def test_evaluate_checks_rows_against_split_plan():
    """Test scoring rows from a training group raises a leakage error."""
    m = grouped_matrix()
    plan = grouped_stratified_split(m.group_ids, m.labels, ratio=0.2, seed=5)
    train_idx, test_idx = next(plan.splits(m.group_ids))
    model = train_logistic(m.X[train_idx], m.labels[train_idx])
    groups = [m.group_ids[i] for i in test_idx]
    result = evaluate(model, m.X[test_idx], m.labels[test_idx], plan=plan, groups=groups)
    assert result.metrics["accuracy"] >= 0.8

    mixed = np.r_[test_idx, train_idx[:1]]
    with pytest.raises(LeakageError, match=m.group_ids[train_idx[0]]):
        evaluate(model, m.X[mixed], m.labels[mixed], plan=plan, groups=[m.group_ids[i] for i in mixed])
    with pytest.raises(DataError, match="one group per scored row"):
        evaluate(model, m.X[test_idx], m.labels[test_idx], plan=plan)


def test_logistic_predictions_and_linear_shap():
    """Test thresholds at zero log-odds and exact linear SHAP local accuracy."""
    m = grouped_matrix()
    model = train_logistic(m.X, m.labels, l2_lambda=1.0)
    assert np.array_equal(model.predict(m.X), (model.predict_proba(m.X) > 0.5).astype(int))
    assert np.mean(model.predict(m.X) == m.labels) > 0.95
    phi, base = linear_shap(model, m.X[:5], m.X)
    np.testing.assert_allclose(phi.sum(axis=1) + base, model.decision_function(m.X[:5]))
    with pytest.raises(DataError):
        model.decision_function(m.X[:, :2])


def test_model_dict_round_trip():
    """Test both families serialize and restore with identical scores."""
    m = grouped_matrix()
    for family, params in (("logistic", {"l2_lambda": 0.5}), ("random_forest", {"n_trees": 5, "max_depth": 3})):
        model = fit_model(family, m.X, m.labels, params, seed=3)
        back = model_from_dict(model_to_dict(model))
        np.testing.assert_array_equal(back.decision_function(m.X), model.decision_function(m.X))
    data = model_to_dict(fit_model("logistic", m.X, m.labels, {}, seed=0))
    data["format_version"] = 99
    with pytest.raises(DataError, match="format version"):
        model_from_dict(data)
    with pytest.raises(DataError, match="unknown model family"):
        fit_model("svm", m.X, m.labels, {}, seed=0)


def test_explain_dispatches_by_family():
    """Test forests and logistic models both satisfy local accuracy."""
    m = grouped_matrix()
    for family in ("logistic", "random_forest"):
        model = fit_model(family, m.X, m.labels, {"n_trees": 4}, seed=1)
        phi, base = explain(model, m.X[:4], m.X)
        np.testing.assert_allclose(phi.sum(axis=1) + base, model.decision_function(m.X[:4]), atol=1e-9)


def test_expand_grid_sorted_keys():
    """Test the grid expands in sorted-key order."""
    points = expand_grid({"max_depth": [3, 6], "n_trees": [10]})
    assert points == [{"max_depth": 3, "n_trees": 10}, {"max_depth": 6, "n_trees": 10}]


def test_derive_seed_is_stable():
    """Test derived seeds are deterministic and path dependent."""
    assert derive_seed(42, 1) == derive_seed(42, 1)
    assert derive_seed(42, 1) != derive_seed(42, 2)
    assert derive_seed(42, 1, 2) != derive_seed(42, 1)


def test_shap_rfe_keeps_signal_feature():
    """Test elimination runs down to one feature and never drops the informative one."""
    m = grouped_matrix()
    result = shap_rfe(m, family="logistic", params={"l2_lambda": 1.0}, k=3, seed=5)
    assert [s.n_features for s in result.steps] == [4, 3, 2, 1]
    assert result.steps[-1].dropped is None
    assert result.steps[-1].features == ("signal",)
    assert "signal" in result.best_features
    assert result.best_score == pytest.approx(max(s.score for s in result.steps))
    assert result.curve[0][0] == 4


def test_shap_rfe_needs_two_features():
    """Test elimination on a single feature is refused."""
    m = grouped_matrix(n_noise=0)
    with pytest.raises(DataError):
        shap_rfe(m, family="logistic")


def test_nested_cv_audits_every_split(caplog):
    """Test nested CV reports zero leakage over all audited splits and is reproducible."""
    m = grouped_matrix()
    kwargs = dict(family="logistic", grid={"l2_lambda": [0.1, 1.0]}, inner_k=3, outer_repeats=3, seed=11)
    result = nested_cv(m, **kwargs)
    assert result.leakage_violations == 0
    assert result.audited_splits == 3 * (1 + 3)
    assert result.summary()["f1"]["mean"] > 0.9
    for r in result.repeats:
        assert {g[:2] for g in r.test_groups} == {"g0", "g1"}
    again = nested_cv(m, **kwargs)
    assert [r.metrics for r in again.repeats] == [r.metrics for r in result.repeats]
    assert again.best_params == result.best_params

    with caplog.at_level(logging.WARNING):
        reduced = nested_cv(m, family="logistic", inner_k=20, outer_repeats=1, seed=11)
    assert reduced.audited_splits == 1 + 10
    assert any("Fewer training groups" in r.message for r in caplog.records)


def test_nested_cv_records_failed_grid_points():
    """Test a grid point that cannot train is reported and skipped."""
    m = grouped_matrix()
    result = nested_cv(
        m,
        family="random_forest",
        grid={"n_trees": [5], "max_depth": [2], "max_features": ["sqrt", "bogus"]},
        inner_k=3,
        outer_repeats=2,
        seed=3,
    )
    assert len(result.failed) == 2
    assert all(f["params"]["max_features"] == "bogus" for f in result.failed)
    assert result.best_params["max_features"] == "sqrt"


def test_nested_cv_normalizes_on_training_rows():
    """Test nested CV with normalization still scores the held-out groups."""
    m = grouped_matrix()
    result = nested_cv(m, family="logistic", inner_k=3, outer_repeats=2, seed=2, normalization="min_max")
    assert len(result.repeats) == 2
    assert all(r.metrics["roc_auc"] is not None for r in result.repeats)


def test_summary_skips_missing_auc():
    """Test AUC statistics use only repeats that have one."""
    base = dict(seed=0, params={}, inner_scores={}, roc=None, test_groups=())
    repeats = (
        RepeatResult(repeat=0, metrics={"accuracy": 1.0, "precision": 1.0, "recall": 1.0, "f1": 1.0, "roc_auc": None}, **base),
        RepeatResult(repeat=1, metrics={"accuracy": 0.5, "precision": 0.5, "recall": 0.5, "f1": 0.5, "roc_auc": 0.7}, **base),
    )
    summary = NestedCvResult(repeats=repeats, best_params={}).summary()
    assert summary["f1"]["mean"] == pytest.approx(0.75)
    assert summary["f1"]["sd"] == pytest.approx(np.std([1.0, 0.5], ddof=1))
    assert summary["roc_auc"] == {"mean": 0.7, "sd": 0.0, "n": 1}


def test_window_sweep_ties_go_to_smaller_window():
    """Test equal scores pick the smaller window."""
    m = grouped_matrix()
    result = window_sweep(lambda w: m, [20.0, 10.0], family="logistic", inner_k=3, outer_repeats=2, seed=4)
    assert result.scores[10.0] == result.scores[20.0]
    assert result.best_window_s == 10.0
    with pytest.raises(DataError):
        window_sweep(lambda w: m.subset(np.array([], dtype=int)), [10.0], family="logistic")
