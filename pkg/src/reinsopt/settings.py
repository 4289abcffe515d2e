"""Reference parameter settings used by the experiment runner and the tests."""

from __future__ import annotations

import math

from .bayes import GammaHyper, GammaSeverityPrior, InformativePrior, NormalInverseGammaPrior, ParetoSeverityPrior
from .criterion import CriterionConfig
from .losses import Gamma, GaussianApprox, Lognormal, Pareto, PortfolioParams
from .premium import Expected, MixedEsscher

PORTFOLIO = PortfolioParams(n_policies=1000, intensity=0.05, horizon=1.0)

# Three severities sharing mean ~10 and sd ~15.
SEVERITIES = {
    "gamma": Gamma(0.44, 22.5),
    "lognormal": Lognormal(1.71, 1.09),
    "pareto": Pareto(3.6, 26.0),
}
# Normal surrogate built from the nominal claim mean 10 and sd 15.
NOMINAL_CLAIM_MEAN = 10.0
NOMINAL_CLAIM_SD = 15.0
GAUSSIAN = GaussianApprox(
    PORTFOLIO.expected_claims * NOMINAL_CLAIM_MEAN,
    math.sqrt(PORTFOLIO.expected_claims * (NOMINAL_CLAIM_MEAN ** 2 + NOMINAL_CLAIM_SD ** 2)),
)
MODELS = {"gaussian": GAUSSIAN, **SEVERITIES}

INSURER_LOADING = 0.1
REINSURER_LOADING = 0.2
TILT = 0.001
EPS = 0.01

EXPECTED = Expected(REINSURER_LOADING)
ESSCHER = MixedEsscher(REINSURER_LOADING, TILT)
PRINCIPLES = {"expected": EXPECTED, "esscher": ESSCHER}

CONFIG = CriterionConfig(loading=INSURER_LOADING, capital_cost=0.0, eps=EPS,
                         risk_measure="VaR", principle=EXPECTED)

FREQUENCY_PRIOR = GammaHyper(0.25, 0.2)
INFORMATIVE_PRIORS = {
    "gamma": InformativePrior(FREQUENCY_PRIOR, GammaSeverityPrior(GammaHyper(10, 0.1), GammaHyper(1, 0.1))),
    "lognormal": InformativePrior(FREQUENCY_PRIOR, NormalInverseGammaPrior(2.0, 100.0, 8.0, 0.1)),
    "pareto": InformativePrior(FREQUENCY_PRIOR, ParetoSeverityPrior(GammaHyper(40, 0.1), GammaHyper(3000, 0.01))),
}
