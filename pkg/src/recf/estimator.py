"""Estimator front-end with the familiar ``fit`` / ``predict`` / ``get_params`` surface."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import check_labels, check_ratings
from .embeddings import DescriptionMatrix
from .factor_model import FitConfig, fit, predict, predict_pairs


def check_pairs(X, shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Validate an ``(n, 2)`` array of ``(user, item)`` indices against ``shape``."""
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != 2:
        raise ValueError(f"expected (n, 2) user/item pairs, got shape {X.shape}")
    if X.size and not np.issubdtype(X.dtype, np.integer):
        if not np.all(X == np.round(X)):
            raise ValueError("user/item indices must be integers")
    users, items = X[:, 0].astype(np.intp), X[:, 1].astype(np.intp)
    if users.size and (users.min() < 0 or users.max() >= shape[0] or items.min() < 0 or items.max() >= shape[1]):
        raise IndexError(f"pair outside the {shape[0]}x{shape[1]} grid")
    return users, items


class HybridRecommender(BaseEstimator):
    """Rating predictor fusing ratings, like/dislike labels and description vectors.

    Parameters mirror :class:`~recf.factor_model.FitConfig`; ``lambda_C`` is
    the initial description weight. ``fit`` takes the ratings as a
    :class:`~recf.data.SparseRatings`, a scipy sparse matrix or a dense array
    with NaN for unknown cells. ``predict`` takes ``(user, item)`` index pairs
    and returns scores clipped to ``rating_scale``.

    Examples
    --------
    >>> import numpy as np
    >>> R = np.array([[5, np.nan, 1], [4, 2, np.nan], [np.nan, 1, 5]])
    >>> est = HybridRecommender(d=2, lambda_L=0.0, max_iter=5).fit(R)
    >>> est.predict([[0, 1]]).shape
    (1,)
    """

    def __init__(self, d=10, lambda_L=0.2, lambda_C=2.5, schedule="mutation", k=0.5, beta=0.01, delta=0.01,
                 gamma_U=0.001, gamma_V=0.001, backtracking=True, max_iter=200, tol=1e-4, seed=0,
                 retract=False, rating_scale=(1.0, 5.0)):
        self.d = d
        self.lambda_L = lambda_L
        self.lambda_C = lambda_C
        self.schedule = schedule
        self.k = k
        self.beta = beta
        self.delta = delta
        self.gamma_U = gamma_U
        self.gamma_V = gamma_V
        self.backtracking = backtracking
        self.max_iter = max_iter
        self.tol = tol
        self.seed = seed
        self.retract = retract
        self.rating_scale = rating_scale

    def _fit_config(self) -> FitConfig:
        params = self.get_params()
        params.pop("rating_scale")
        return FitConfig(**params)

    def fit(self, X, y=None, labels=None, descriptions: DescriptionMatrix | None = None):
        ratings = check_ratings(X, scale=self.rating_scale)
        labels = check_labels(labels, ratings.shape)
        if descriptions is not None and descriptions.n_items != ratings.n_items:
            raise ValueError(f"{descriptions.n_items} description rows for {ratings.n_items} items")
        self.model_, self.trace_ = fit(ratings, labels, descriptions, self._fit_config())
        self.n_iter_ = self.trace_.n_iter
        self.scale_ = ratings.scale
        return self

    def predict(self, X, clamp: bool = True) -> np.ndarray:
        check_is_fitted(self, "model_")
        users, items = check_pairs(X, self.model_.shape)
        return predict_pairs(self.model_, users, items, self.scale_ if clamp else None)

    def predict_matrix(self, clamp: bool = True) -> np.ndarray:
        """Dense ``N x M`` score matrix."""
        check_is_fitted(self, "model_")
        return predict(self.model_, self.scale_ if clamp else None)
