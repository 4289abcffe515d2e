"""Retained risk, expected surplus and the risk-over-surplus criterion.

The insurer keeps ``R_I(X) = X - I(X)`` and pays the reinsurance premium.  Its
criterion is ``C(a) = rho(R_I) / G_I`` with

    G_I = gamma E X - (pi_I - E I(X)) - beta rho(R_I),

so that a smaller value means less retained risk per unit of expected profit.
Every quantity is estimated on one cached loss sample, which makes ``C`` a
deterministic function of the contract.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from ._validation import check_nonnegative, check_positive, check_probability, tail_count
from .contract import LayerContract, ceded
from .losses import LossSample, quantile
from .premium import Expected, MixedEsscher, PremiumPrinciple, k_function, layer_expectations

__all__ = [
    "CriterionConfig",
    "CriterionValue",
    "NonPositiveSurplus",
    "ceded",
    "risk_retained",
    "expected_surplus",
    "evaluate",
    "criterion_ratio",
    "psi_functions",
    "derive_layers",
]

RISK_MEASURES = ("VaR", "CVaR")


class NonPositiveSurplus(ValueError):
    """The contract leaves the insurer with expected surplus ``G_I <= 0``."""


@dataclass(frozen=True)
class CriterionConfig:
    """Settings of the risk-over-surplus criterion.

    Attributes:
        loading: Insurer loading gamma.
        capital_cost: Cost-of-capital rate beta on retained risk.
        eps: Risk level; VaR/CVaR are taken at ``1 - eps``.
        risk_measure: ``"VaR"`` or ``"CVaR"``.
        principle: Reinsurance premium principle.
        price_of_risk: lambda, only needed by the psi-function helpers.
    """

    loading: float = 0.1
    capital_cost: float = 0.0
    eps: float = 0.01
    risk_measure: str = "VaR"
    principle: PremiumPrinciple = field(default_factory=Expected)
    price_of_risk: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "loading", check_positive(self.loading, "loading"))
        object.__setattr__(self, "capital_cost", check_nonnegative(self.capital_cost, "capital_cost"))
        object.__setattr__(self, "eps", check_probability(self.eps, "eps"))
        measure = {"var": "VaR", "cvar": "CVaR"}.get(str(self.risk_measure).lower())
        if measure is None:
            raise ValueError(f"risk_measure must be one of {RISK_MEASURES}, got {self.risk_measure!r}")
        object.__setattr__(self, "risk_measure", measure)
        if not isinstance(self.principle, (Expected, MixedEsscher)):
            raise TypeError(f"principle must be Expected or MixedEsscher, got {self.principle!r}")
        if self.price_of_risk is not None:
            object.__setattr__(self, "price_of_risk", check_nonnegative(self.price_of_risk, "price_of_risk"))
        if self.principle.loading <= self.loading:
            warnings.warn(
                f"reinsurer loading {self.principle.loading} <= insurer loading {self.loading}; "
                "reinsurance is then unrealistically cheap", UserWarning, stacklevel=3)

    def replace(self, **changes) -> "CriterionConfig":
        from dataclasses import replace
        return replace(self, **changes)


@dataclass(frozen=True)
class CriterionValue:
    """All pieces of one criterion evaluation."""

    risk: float
    surplus: float
    premium: float
    mean_ceded: float

    @property
    def ratio(self) -> float:
        return self.risk / self.surplus


def risk_retained(sample: LossSample, contract: LayerContract, config: CriterionConfig) -> float:
    """VaR or CVaR of the retained loss ``X - I(X)``.

    VaR uses that ``R_I`` is nondecreasing, so ``VaR(R_I) = R_I(x_eps)``.  CVaR is
    the mean retained loss over the largest ``ceil(eps m)`` simulations.
    """
    if config.risk_measure == "VaR":
        x_eps = quantile(sample, config.eps)
        return x_eps - ceded(contract, x_eps)
    m = sample.m
    t = tail_count(config.eps, m)
    top = sample.range_sum(m - t, m)
    return (top - sample.layer_sum(contract.lower, contract.upper, lo=m - t)) / t


def evaluate(sample: LossSample, contract: LayerContract, config: CriterionConfig) -> CriterionValue:
    mean_i, pi_i, _ = layer_expectations(config.principle, sample, contract)
    rho = risk_retained(sample, contract, config)
    g = config.loading * sample.mean - (pi_i - mean_i) - config.capital_cost * rho
    return CriterionValue(rho, g, pi_i, mean_i)


def expected_surplus(sample: LossSample, contract: LayerContract, config: CriterionConfig) -> float:
    """Insurer's expected surplus ``G_I`` net of reinsurance cost and capital charge."""
    return evaluate(sample, contract, config).surplus


def criterion_ratio(sample: LossSample, contract: LayerContract, config: CriterionConfig) -> float:
    """Risk over expected surplus, ``rho(R_I) / G_I``.

    Raises:
        NonPositiveSurplus: if ``G_I <= 0``.
    """
    v = evaluate(sample, contract, config)
    if not v.surplus > 0:
        raise NonPositiveSurplus(f"expected surplus {v.surplus:.6g} <= 0 for {contract}")
    return v.ratio


# ---------------------------------------------------------------------------
# psi-function analytics


def _k_principle_contract(config, contract):
    if isinstance(config.principle, MixedEsscher) and config.principle.tilt > 0:
        if contract is None:
            raise ValueError("the mixed Esscher W-function depends on the layer; pass contract=")
        return contract
    return contract or LayerContract.none()


def _ecdf(sample, x):
    return np.searchsorted(sample.values, x, side="right") / sample.m


def psi_functions(sample: LossSample, config: CriterionConfig, x, *,
                  contract: Optional[LayerContract] = None):
    """Evaluate ``(psi_v(x), psi_c(x))``.

    ``psi_v = -K(F(x)) + (lambda + beta) 1(x <= x_eps)`` and ``psi_c`` adds
    ``(lambda + beta) 1(x > x_eps) (1 - F(x)) / eps``.  ``F`` is the empirical cdf
    of the sample.  Under the mixed Esscher principle ``K`` depends on the layer,
    which must then be supplied as ``contract``.
    """
    if config.price_of_risk is None:
        raise ValueError("psi functions need config.price_of_risk (lambda)")
    contract = _k_principle_contract(config, contract)
    x_arr = np.asarray(x, dtype=float)
    f = _ecdf(sample, x_arr)
    x_eps = quantile(sample, config.eps)
    lam = config.price_of_risk + config.capital_cost
    psi_v = -k_function(config.principle, contract, sample, f) + lam * (x_arr <= x_eps)
    psi_c = psi_v + lam * (x_arr > x_eps) * (1.0 - f) / config.eps
    if np.ndim(x) == 0:
        return float(psi_v), float(psi_c)
    return psi_v, psi_c


def derive_layers(sample: LossSample, config: CriterionConfig, *,
                  contract: Optional[LayerContract] = None) -> List[LayerContract]:
    """Layers where ``psi > 0`` (``psi_v`` for VaR, ``psi_c`` for CVaR).

    ``psi`` is constant between consecutive sample values, so it is evaluated at
    the midpoint of every gap of the grid ``{0} U sample`` and adjacent positive
    gaps are merged into maximal layers.
    """
    grid = np.unique(np.concatenate(([0.0], sample.values)))
    if grid.size < 2:
        return []
    mid = 0.5 * (grid[:-1] + grid[1:])
    psi_v, psi_c = psi_functions(sample, config, mid, contract=contract)
    psi = psi_v if config.risk_measure == "VaR" else psi_c
    pos = np.concatenate(([False], psi > 0, [False])).astype(np.int8)
    edges = np.diff(pos)
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    return [LayerContract(float(grid[s]), float(grid[e])) for s, e in zip(starts, stops)]
