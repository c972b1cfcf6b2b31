"""scikit-learn style estimators for exclusive-lasso regression and classification."""

from __future__ import annotations

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.multiclass import check_classification_targets, type_of_target
from sklearn.utils.validation import check_is_fitted, validate_data

from .baselines import BaselineParams, admm_solve, apg_solve, ilsa_solve
from .model import GroupPartition, LossKind, ProblemInstance
from .ppdna import PpaParams, solve

SOLVERS = ("ppdna", "admm", "apg", "ilsa")


def _partition(groups, n_features: int) -> GroupPartition:
    if groups is None:
        return GroupPartition([np.arange(n_features)], n_features)
    if isinstance(groups, GroupPartition):
        part = groups
    else:
        arr = np.asarray(groups, dtype=object)
        flat = arr.ndim == 1 and len(arr) == n_features and all(np.ndim(g) == 0 for g in arr)
        part = GroupPartition.from_labels(groups) if flat else GroupPartition(groups, n_features)
    if part.n_features != n_features:
        raise ValueError("groups cover %d features, X has %d" % (part.n_features, n_features))
    return part


class _ExclusiveLassoBase(BaseEstimator):
    _loss = LossKind.LEAST_SQUARES

    def __init__(self, alpha=1.0, groups=None, weights=None, solver="ppdna", tol=1e-6,
                 max_iter=None, fit_intercept=False):
        self.alpha = alpha
        self.groups = groups
        self.weights = weights
        self.solver = solver
        self.tol = tol
        self.max_iter = max_iter
        self.fit_intercept = fit_intercept

    def _solve(self, X, b):
        if self.solver not in SOLVERS:
            raise ValueError("solver must be one of %s, got %r" % (SOLVERS, self.solver))
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        part = _partition(self.groups, X.shape[1])
        inst = ProblemInstance(X, b, float(self.alpha), part, self._loss, weights=self.weights)
        if self.solver == "ppdna":
            params = PpaParams(tol=self.tol)
            if self.max_iter is not None:
                params.max_outer = int(self.max_iter)
            rep = solve(inst, params)
        else:
            bp = BaselineParams(tol=self.tol)
            if self.max_iter is not None:
                bp.max_iter = int(self.max_iter)
            rep = {"admm": admm_solve, "apg": apg_solve, "ilsa": ilsa_solve}[self.solver](inst, bp)
        self.report_ = rep
        self.n_iter_ = rep.outer_iters
        self.partition_ = part
        return rep.x


class ExclusiveLassoRegressor(RegressorMixin, _ExclusiveLassoBase):
    """Least squares with a weighted exclusive-lasso penalty.

    Minimizes ``1/2 ||X beta - y||^2 + alpha * sum_g ||w_g o beta_g||_1^2``.

    Parameters
    ----------
    alpha : float
        Penalty weight.
    groups : array_like or sequence of sequences, optional
        Either one label per feature or a partition given as lists of column
        indices (0-based). ``None`` puts all features in a single group.
    weights : array_like, optional
        Positive per-feature weights, all ones by default.
    solver : {"ppdna", "admm", "apg", "ilsa"}
    tol : float
        Target relative KKT residual.
    max_iter : int, optional
        Outer iteration cap of the chosen solver.
    fit_intercept : bool
        Center ``X`` and ``y`` before solving and recover an unpenalized intercept.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
    intercept_ : float
    report_ : SolveReport
    """

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64, y_numeric=True)
        if self.fit_intercept:
            x_mean, y_mean = X.mean(axis=0), y.mean()
            coef = self._solve(X - x_mean, y - y_mean)
            self.intercept_ = float(y_mean - x_mean @ coef)
        else:
            coef = self._solve(X, y)
            self.intercept_ = 0.0
        self.coef_ = coef
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return X @ self.coef_ + self.intercept_


class ExclusiveLassoClassifier(ClassifierMixin, _ExclusiveLassoBase):
    """Binary logistic regression with a weighted exclusive-lasso penalty.

    No intercept is fitted; append a constant column in its own group if one
    is needed. Parameters are as for :class:`ExclusiveLassoRegressor`.
    """

    _loss = LossKind.LOGISTIC

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.classifier_tags.multi_class = False
        return tags

    def fit(self, X, y):
        if self.fit_intercept:
            raise ValueError("fit_intercept is not supported for the logistic loss")
        X, y = validate_data(self, X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_ = np.unique(y)
        y_type = type_of_target(y, input_name="y", raise_unknown=True)
        if y_type != "binary":
            raise ValueError("Only binary classification is supported. The type of the target "
                             f"is {y_type}.")
        if len(self.classes_) < 2:
            raise ValueError("y contains only one class: %r" % (self.classes_[0],))
        b = np.where(y == self.classes_[1], 1.0, -1.0)
        self.coef_ = self._solve(X, b)
        self.intercept_ = 0.0
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return X @ self.coef_

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[(scores > 0).astype(int)]
