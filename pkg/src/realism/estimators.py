"""Scikit-learn style wrappers so the pipeline composes with the ecosystem.

`NearestNeighborFeaturizer` turns activation bundles into the distance
feature matrix (fit builds the reference pools, transform scores), and
`RealismScorer` is the thresholded logistic model. Chained in a
sklearn Pipeline they go straight from bundles to realism labels.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import features as feat
from . import regression as reg
from .atn import ActivationBundle
from .errors import DataError
from .pools import PoolConfig, build_pool


class NearestNeighborFeaturizer(TransformerMixin, BaseEstimator):
    """Aggregated NN-distance features against fitted reference pools.

    fit(X) builds one reference pool per layer from the given bundles;
    when ``y`` is provided only the bundles labeled real (y == 1) feed
    the pools, so the transformer slots directly into a Pipeline over a
    mixed real/generated training set. transform(X) scores bundles
    against the fitted pools.

    Parameters
    ----------
    layers : sequence of str or None
        Layer names to score, in order. None takes the layer order of
        the first bundle seen in fit.
    pool_cap : int
        Maximum reference vectors kept per layer.
    seed : int
        Seed for the subsampling generator.
    location_matched : bool
        Restrict each query location's neighbor search to reference
        vectors from the same spatial location.
    aggregate : {"sum", "mean"}
        How per-location distances combine into the layer feature.
    """

    def __init__(
        self,
        layers=None,
        pool_cap=10_000,
        seed=0,
        location_matched=False,
        aggregate="sum",
    ):
        self.layers = layers
        self.pool_cap = pool_cap
        self.seed = seed
        self.location_matched = location_matched
        self.aggregate = aggregate

    def fit(self, X, y=None):
        """Build one reference pool per layer from training bundles."""
        bundles = list(X)
        if not bundles:
            raise DataError("no training bundles")
        if y is not None:
            labels = np.asarray(y).reshape(-1)
            if labels.shape[0] != len(bundles):
                raise DataError(
                    f"{len(bundles)} bundles but {labels.shape[0]} labels"
                )
            reference = [b for b, label in zip(bundles, labels) if label == 1]
            if not reference:
                raise DataError("no bundles labeled real to build pools from")
        else:
            reference = bundles
        layers = tuple(self.layers) if self.layers else bundles[0].layer_names
        config = PoolConfig(
            pool_cap=self.pool_cap,
            seed=self.seed,
            layers=layers,
            location_matched=self.location_matched,
        )
        self.layer_names_ = layers
        self.pools_ = [build_pool(reference, layer, config) for layer in layers]
        return self

    def transform(self, X) -> np.ndarray:
        """Score bundles; returns an (n_images, n_layers) float64 array."""
        check_is_fitted(self, "pools_")
        rows = []
        for bundle in X:
            selected = ActivationBundle(
                bundle.image_id,
                tuple(bundle.tensor(layer) for layer in self.layer_names_),
            )
            rows.append(
                feat.featurize(selected, self.pools_, aggregate=self.aggregate).values
            )
        if not rows:
            return np.empty((0, len(self.layer_names_)))
        return np.vstack(rows)


class RealismScorer(ClassifierMixin, BaseEstimator):
    """Logistic realism model over distance features.

    predict_proba()[:, 1] is the probability a human rater would call
    the image real; predict() thresholds it at 0.5, ties classified
    real.

    Parameters
    ----------
    l2 : float
        Ridge penalty on the weights (intercept unpenalized).
    tol : float
        Gradient infinity-norm at which Newton iteration stops.
    max_iter : int
        Newton step budget.
    """

    def __init__(self, l2=1e-4, tol=1e-8, max_iter=500):
        self.l2 = l2
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        names = tuple(f"f{j}" for j in range(X.shape[1]))
        train = reg.TrainSet(X, y, names, dataset_id="sklearn")
        self.model_ = reg.fit(
            train, l2=self.l2, tol=self.tol, max_iter=self.max_iter
        )
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return reg.decision_logit(self.model_, X)

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        p = reg.predict_proba(self.model_, X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return reg.predict_label(self.model_, X)
