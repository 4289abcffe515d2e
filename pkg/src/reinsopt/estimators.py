"""scikit-learn style wrappers around the functional API.

``SeverityMLE`` fits a claim model to observed severities; ``LayerOptimizer``
fits the optimal one-layer contract to a sample of total losses and then maps
losses to ceded amounts through ``predict``.
"""

from __future__ import annotations

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .contract import ceded
from .criterion import CriterionConfig, NonPositiveSurplus, criterion_ratio
from .losses import ClaimHistory, LossSample, fit_mle, sample_severity
from .optimize import optimize_contract
from .premium import Expected, MixedEsscher


def _column(X, name="X"):
    arr = check_array(X, ensure_2d=False, dtype=float, input_name=name)
    if arr.ndim == 2:
        if arr.shape[1] != 1:
            raise ValueError(f"{name} must be 1-D or a single column, got shape {arr.shape}")
        arr = arr[:, 0]
    return arr


class SeverityMLE(BaseEstimator):
    """Maximum-likelihood claim model.

    Args:
        family: ``"gamma"``, ``"lognormal"`` or ``"pareto"``.
        exposure: Policy-years behind the observed claims; when given the
            intensity ``n / exposure`` is estimated as well.
    """

    def __init__(self, family="gamma", exposure=None):
        self.family = family
        self.exposure = exposure

    def fit(self, X, y=None):
        sev = _column(X)
        exposure = self.exposure if self.exposure is not None else 1.0
        intensity, model = fit_mle(self.family, ClaimHistory(sev, exposure))
        self.model_ = model
        self.params_ = np.array(model.params)
        self.intensity_ = intensity if self.exposure is not None else None
        self.n_claims_ = sev.size
        return self

    def _dist(self):
        m = self.model_
        if self.family == "gamma":
            return stats.gamma(m.shape, scale=m.scale)
        if self.family == "lognormal":
            return stats.lognorm(m.log_sd, scale=np.exp(m.log_mean))
        return stats.lomax(m.shape, scale=m.scale)

    def score_samples(self, X):
        check_is_fitted(self, "model_")
        return self._dist().logpdf(_column(X))

    def score(self, X, y=None):
        """Mean log-likelihood per claim."""
        return float(np.mean(self.score_samples(X)))

    def sample(self, n_samples=1, random_state=None):
        check_is_fitted(self, "model_")
        return sample_severity(self.model_, n_samples, random_state)


class LayerOptimizer(BaseEstimator):
    """Optimal one-layer reinsurance contract for a sample of total losses.

    Args:
        loading: Insurer loading.
        reinsurer_loading: Reinsurer loading.
        tilt: Esscher tilt; 0 selects the expected-value principle.
        capital_cost: Cost-of-capital rate on retained risk.
        eps: Risk level.
        risk_measure: ``"VaR"`` or ``"CVaR"``.
    """

    def __init__(self, loading=0.1, reinsurer_loading=0.2, tilt=0.0, capital_cost=0.0,
                 eps=0.01, risk_measure="VaR"):
        self.loading = loading
        self.reinsurer_loading = reinsurer_loading
        self.tilt = tilt
        self.capital_cost = capital_cost
        self.eps = eps
        self.risk_measure = risk_measure

    def _config(self):
        principle = (MixedEsscher(self.reinsurer_loading, self.tilt) if self.tilt
                     else Expected(self.reinsurer_loading))
        return CriterionConfig(self.loading, self.capital_cost, self.eps, self.risk_measure, principle)

    def fit(self, X, y=None):
        sample = X if isinstance(X, LossSample) else LossSample(_column(X))
        self.config_ = self._config()
        self.result_ = optimize_contract(sample, self.config_)
        self.contract_ = self.result_.contract
        self.criterion_ = self.result_.value
        return self

    def predict(self, X):
        """Ceded amount for each loss."""
        check_is_fitted(self, "contract_")
        return ceded(self.contract_, _column(X))

    def score(self, X, y=None):
        """Negative criterion of the fitted contract on ``X`` (higher is better)."""
        check_is_fitted(self, "contract_")
        sample = X if isinstance(X, LossSample) else LossSample(_column(X))
        try:
            return -criterion_ratio(sample, self.contract_, self.config_)
        except NonPositiveSurplus:
            return -np.inf
