"""Optimal single-layer reinsurance under a risk-over-expected-surplus criterion.

The package simulates compound Poisson aggregate losses, prices a layer
``min((X - a1)+, a2 - a1)`` under expected-value or mixed Esscher premiums,
optimizes the layer against a VaR or CVaR based criterion, and measures how
much the optimum degrades when the loss model is estimated from a finite
claim history.
"""

__version__ = "0.1.0"

from .contract import LayerContract, ceded
from .criterion import (
    CriterionConfig,
    CriterionValue,
    NonPositiveSurplus,
    criterion_ratio,
    derive_layers,
    evaluate,
    expected_surplus,
    psi_functions,
    risk_retained,
)
from .degradation import (
    AsymptoticInputs,
    BudgetExhausted,
    DegradationStats,
    IndefiniteHessian,
    VarDegradationLaw,
    asymptotic_smooth,
    asymptotic_var,
    bootstrap_degradation,
    criterion_hessian_blocks,
    fisher_sigma,
    rate_fit,
    sample_size_for_rmse,
    smooth_inputs,
)
from .losses import (
    ClaimHistory,
    ConvergenceError,
    DegenerateDataError,
    Gamma,
    GaussianApprox,
    InfiniteMomentError,
    Lognormal,
    LossSample,
    Pareto,
    PortfolioParams,
    fit_mle,
    make_severity,
    quantile,
    simulate_history,
    simulate_total_losses,
)
from .optimize import AllInfeasible, OptimResult, nelder_mead, optimize_contract
from .premium import Expected, MixedEsscher, TiltOverflowError, k_function, premium, w_function
from .bayes import (
    GammaHyper,
    GammaSeverityPrior,
    InformativePrior,
    JeffreysPrior,
    NormalInverseGammaPrior,
    ParetoSeverityPrior,
    PointMassPrior,
    PosteriorDraws,
    bayes_degradation,
    posterior_predictive_losses,
    sample_posterior,
)

__all__ = [name for name in dir() if not name.startswith("_")]
