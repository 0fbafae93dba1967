"""scikit-learn style wrapper around :func:`hdlnm.fit.fit`."""

from __future__ import annotations

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .fit import fit, predict_terms
from .lagdata import TimeSeriesDataset
from .terms import ModelSpec

__all__ = ["DLNMRegressor", "to_dataset"]


def to_dataset(X, y=None) -> TimeSeriesDataset:
    """Coerce a DataFrame with a ``date`` column (or a dataset) to a dataset.

    ``y`` overrides any ``count`` column of ``X``.
    """
    if isinstance(X, TimeSeriesDataset):
        data = X
        if y is not None:
            data = TimeSeriesDataset(time=data.time, y=_counts(y, len(data)),
                                     covariates=data.covariates, offset=data.offset,
                                     group=data.group)
        return data
    if not isinstance(X, pd.DataFrame):
        raise TypeError("X must be a pandas DataFrame with a 'date' column or a TimeSeriesDataset")
    if "date" not in X.columns:
        raise ValueError("X needs a 'date' column")
    df = X.copy()
    if y is not None:
        df["count"] = _counts(y, len(df))
    return TimeSeriesDataset.from_frame(df)


def _counts(y, n):
    y = np.asarray(y, dtype=float).ravel()
    if y.shape != (n,):
        raise ValueError(f"y has {y.size} entries, expected {n}")
    finite = y[np.isfinite(y)]
    if np.any(finite < 0) or np.any(finite != np.round(finite)):
        raise ValueError("y must hold non-negative integer counts")
    return y


class DLNMRegressor(RegressorMixin, BaseEstimator):
    """Penalized distributed-lag count regression.

    Parameters
    ----------
    terms : list of dict
        Term list as accepted by :class:`hdlnm.terms.ModelSpec`.
    family : str or dict
        ``"poisson"`` or ``{"kind": "negbin"}`` (theta estimated) or
        ``{"kind": "negbin", "theta": 2.0}`` (theta fixed).
    offset : str, optional
        Column holding the exposure; its log enters the linear predictor.
    n_starts : int
        Number of smoothing-parameter starts for the outer optimizer.
    random_state : int
        Seed for the perturbed starts.

    Attributes
    ----------
    model_ : FittedModel
    n_features_in_ : int
        Number of covariate columns seen during ``fit``.
    """

    def __init__(self, terms=None, family="poisson", offset=None, n_starts=3, random_state=0):
        self.terms = terms
        self.family = family
        self.offset = offset
        self.n_starts = n_starts
        self.random_state = random_state

    def _spec(self) -> ModelSpec:
        if not self.terms:
            raise ValueError("terms must be a non-empty list of term dicts")
        return ModelSpec(terms=self.terms, family=self.family, offset=self.offset)

    def fit(self, X, y=None):
        data = to_dataset(X, y)
        if not np.any(np.isfinite(data.y)):
            raise ValueError("no observed counts")
        self.model_ = fit(self._spec(), data, seed=int(self.random_state),
                          n_starts=int(self.n_starts))
        self.n_features_in_ = len(data.covariates)
        self.feature_names_in_ = np.array(list(data.covariates), dtype=object)
        return self

    def _predict_rows(self, X):
        check_is_fitted(self, "model_")
        data = to_dataset(X)
        pred = predict_terms(self.model_, data)
        return data, pred

    def predict(self, X):
        """Expected counts; rows without enough lag history are NaN."""
        data, pred = self._predict_rows(X)
        out = np.full(len(data), np.nan)
        out[pred.index] = pred.mu
        return out

    def predict_log(self, X):
        data, pred = self._predict_rows(X)
        out = np.full(len(data), np.nan)
        out[pred.index] = pred.eta
        return out

    def score(self, X, y=None, sample_weight=None):
        """Fraction of the null deviance explained on the usable rows."""
        data = to_dataset(X, y)
        pred = predict_terms(self.model_, data)
        yy = data.y[pred.index]
        ok = np.isfinite(yy)
        fam = self.model_.family
        dev = fam.deviance(yy[ok], pred.mu[ok])
        null = fam.deviance(yy[ok], np.full(ok.sum(), yy[ok].mean()))
        return 1.0 - dev / null if null > 0 else 0.0
