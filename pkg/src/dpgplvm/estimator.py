"""scikit-learn style estimator wrapping training and inference."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import inference
from .exceptions import ConfigError, InputError, NumericError
from .model import DataMatrix, Mode, ModelConfig
from .training import train


class DPGPLVM(TransformerMixin, BaseEstimator):
    """GP latent variable model that learns a grouping of the observed columns.

    Every column is explained by one of ``n_clusters`` GP kernels (ARD
    squared exponential) over a shared ``n_components``-dimensional latent
    space; the assignment of columns to kernels carries a truncated
    Dirichlet-process prior and is inferred together with everything else
    by maximizing a variational lower bound.

    Parameters
    ----------
    n_components : int, default=3
        Latent dimensionality ``Q``.
    n_clusters : int, default=5
        Truncation level ``T``. Unused components are switched off by the
        prior, so this is an upper bound.
    n_inducing : int, optional
        Number of inducing points; ``min(n_samples, 10 * n_components)`` when
        omitted.
    mode : {"dpgplvm", "bgplvm", "mrd"}, default="dpgplvm"
        ``bgplvm`` shares one kernel between all columns (``n_clusters`` is
        then forced to 1); ``mrd`` uses the fixed assignment in ``groups``.
    groups : array-like of int, optional
        Component of every column, required for ``mode="mrd"``.
    s1, s2 : float, default=1.0
        Shape and rate of the Gamma prior on the concentration.
    jitter : float, default=1e-6
        Relative diagonal jitter of the inducing covariances.
    learning_rate, momentum : float
        Settings of the momentum gradient ascent.
    max_iter : int, default=2000
    tol : float, default=1e-4
        Relative change of the bound over 25 iterations that stops training.
    random_state : int, default=0
    verbose : bool, default=False
        Log one JSON record per iteration.

    Attributes
    ----------
    state_ : ModelState
    trace_ : TrainTrace
    embedding_ : ndarray of shape (n_samples, n_components)
        Posterior latent means of the training rows.
    ard_weights_ : ndarray of shape (n_clusters, n_components)
    responsibilities_ : ndarray of shape (n_features, n_clusters)
    labels_ : ndarray of shape (n_features,)
        Most probable component of every column.
    elbo_ : float
    """

    def __init__(
        self,
        n_components=3,
        n_clusters=5,
        n_inducing=None,
        mode="dpgplvm",
        groups=None,
        s1=1.0,
        s2=1.0,
        jitter=1e-6,
        learning_rate=1e-2,
        momentum=0.9,
        max_iter=2000,
        tol=1e-4,
        random_state=0,
        verbose=False,
    ):
        self.n_components = n_components
        self.n_clusters = n_clusters
        self.n_inducing = n_inducing
        self.mode = mode
        self.groups = groups
        self.s1 = s1
        self.s2 = s2
        self.jitter = jitter
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state
        self.verbose = verbose

    def _validate(self, X, reset):
        # NaN marks a missing entry; infinities are rejected by check_array
        X = check_array(X, dtype=np.float64, ensure_all_finite="allow-nan", ensure_min_samples=2)
        if reset:
            self.n_features_in_ = X.shape[1]
        elif X.shape[1] != self.n_features_in_:
            raise InputError(f"X has {X.shape[1]} features, the model was fitted with {self.n_features_in_}")
        return X

    def _build(self, n, d):
        if self.mode == "bgplvm":
            mode, t = Mode.bgplvm(), 1
        elif self.mode == "mrd":
            if self.groups is None:
                raise ConfigError("mode='mrd' requires groups")
            _, labels = np.unique(np.asarray(self.groups), return_inverse=True)
            mode, t = Mode.mrd(labels), int(labels.max()) + 1
        elif self.mode == "dpgplvm":
            mode, t = Mode.dpgplvm(), self.n_clusters
        else:
            raise ConfigError(f"unknown mode {self.mode!r}")
        config = ModelConfig(
            q=self.n_components, t=t, n=n, d=d, m=self.n_inducing, s1=self.s1, s2=self.s2,
            jitter=self.jitter, learning_rate=self.learning_rate, momentum=self.momentum,
            max_iters=self.max_iter, elbo_tol=self.tol, seed=self.random_state,
        )
        mode.check(config)
        return config, mode

    def fit(self, X, y=None):
        """Fit the model to ``X`` (``NaN`` marks missing entries)."""
        X = self._validate(X, reset=True)
        config, mode = self._build(*X.shape)
        data = DataMatrix.from_array(X)
        trace = train(data, config, mode, verbose=self.verbose)
        if trace.error is not None:
            raise NumericError(trace.error)
        self.data_ = data
        self.trace_ = trace
        self.state_ = trace.final_state
        self.elbo_ = float(trace.elbo_history[-1].total)
        self.embedding_ = np.asarray(self.state_.latent.mu)
        self.ard_weights_ = np.asarray(self.state_.components.ard)
        self.responsibilities_ = np.asarray(self.state_.dp.phi)
        self.labels_ = np.argmax(self.responsibilities_, axis=1)
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).embedding_

    def transform(self, X):
        """Posterior latent means of new rows, with the fitted model held fixed."""
        check_is_fitted(self, "state_")
        X = self._validate(X, reset=False)
        return inference.infer_latent_new(self.state_, self.data_, X).latent.mu

    def score(self, X, y=None):
        """Log ratio of the bound with ``X`` appended to the bound without it."""
        check_is_fitted(self, "state_")
        X = self._validate(X, reset=False)
        return inference.infer_latent_new(self.state_, self.data_, X).bound_ratio

    def inverse_transform(self, Z, return_var=False):
        """Predicted observations at latent points ``Z``."""
        check_is_fitted(self, "state_")
        Z = check_array(Z, dtype=np.float64)
        pred = inference.predict(self.state_, self.data_, Z)
        return (pred.mean, pred.var) if return_var else pred.mean

    def impute(self, X=None):
        """Return the training matrix with its missing entries predicted.

        Only the training data can be imputed, since the latent positions of
        its rows are known.
        """
        check_is_fitted(self, "state_")
        if X is not None:
            X = self._validate(X, reset=False)
            same = X.shape == self.data_.values.shape and np.array_equal(np.isnan(X), ~self.data_.mask)
            if not same:
                raise InputError("impute expects the matrix the model was fitted on")
        result = inference.impute(self.state_, self.data_)
        out = np.where(self.data_.mask, self.data_.values, np.nan)
        out[result.rows, result.cols] = result.prediction.mean
        return out
