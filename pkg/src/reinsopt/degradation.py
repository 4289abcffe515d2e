"""Degradation of the optimum caused by parameter estimation error.

With ``theta`` estimated by ``theta_hat`` the insurer buys the contract
``a_hat = argmin C(., theta_hat)`` instead of ``a = argmin C(., theta)``, losing

    D(theta) = C(a_hat, theta) - C(a, theta) >= 0.

This module estimates the distribution of ``D`` by nested parametric bootstrap
and by two large-sample approximations: a quadratic form for criteria that are
smooth at the optimum (CVaR) and a half-normal type law for the VaR criterion,
whose optimum sits on the kink ``a2 = x_eps``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy import special

from ._validation import as_generator, as_seed_sequence, check_count, check_positive
from .contract import LayerContract
from .criterion import CriterionConfig, NonPositiveSurplus, criterion_ratio
from .losses import (
    ConvergenceError,
    DegenerateDataError,
    Gamma,
    GaussianApprox,
    Lognormal,
    LossSample,
    Pareto,
    PortfolioParams,
    SeverityModel,
    fit_mle,
    make_severity,
    quantile,
    sample_severity,
    simulate_history,
    simulate_total_losses,
)
from .optimize import AllInfeasible, OptimResult, optimize_contract
from .premium import k_function

__all__ = [
    "DegradationStats",
    "AsymptoticInputs",
    "IndefiniteHessian",
    "BudgetExhausted",
    "theta_vector",
    "theta_from_vector",
    "bootstrap_degradation",
    "fisher_sigma",
    "finite_difference_blocks",
    "criterion_hessian_blocks",
    "q_matrix",
    "quadratic_form_moments",
    "asymptotic_smooth",
    "smooth_inputs",
    "quantile_gradient",
    "var_coefficients",
    "VarDegradationLaw",
    "asymptotic_var",
    "rate_fit",
    "sample_size_for_rmse",
]

log = logging.getLogger(__name__)

D_FLOOR = -1e-3
DEFAULT_CAP_FACTOR = 1.5


class IndefiniteHessian(ValueError):
    """``C_aa`` is not positive definite, so the smooth expansion does not apply."""


class BudgetExhausted(RuntimeError):
    """A search ran out of steps before meeting its target."""


@dataclass
class DegradationStats:
    """Summary of a degradation experiment.

    Attributes:
        replicates: Individual D values (empty for closed-form results).
        mean: Mean of D.
        sd: Standard deviation of D.
        n: Historical sample size (expected number of claims).
        method: One of ``bootstrap``, ``asymptotic-smooth``, ``asymptotic-VaR``, ``bayes``.
        failures: Replicates dropped because fitting or optimisation failed.
        meta: Free-form run details (baseline contract and value, seeds, ...).
    """

    replicates: np.ndarray
    mean: float
    sd: float
    n: float
    method: str
    failures: int = 0
    meta: Dict = field(default_factory=dict)

    @classmethod
    def from_replicates(cls, values, n, method, failures=0, meta=None) -> "DegradationStats":
        values = np.asarray(values, dtype=float)
        if values.size == 0:
            raise RuntimeError(f"all replicates failed ({failures} failures)")
        sd = float(values.std(ddof=1)) if values.size > 1 else 0.0
        return cls(values, float(values.mean()), sd, n, method, failures, dict(meta or {}))

    @property
    def reps(self) -> int:
        return int(self.replicates.size)

    @property
    def rmse(self) -> float:
        """Root mean square of D around zero, ``sqrt(E D^2)``."""
        if self.replicates.size:
            return float(np.sqrt(np.mean(self.replicates ** 2)))
        return math.sqrt(self.mean ** 2 + self.sd ** 2)


# ---------------------------------------------------------------------------
# Parameter vectors


def theta_vector(portfolio: PortfolioParams, model: SeverityModel) -> np.ndarray:
    """``(mu, severity params...)``; for the Gaussian surrogate just ``(mean, sd)``."""
    if isinstance(model, GaussianApprox):
        return np.array(model.params, dtype=float)
    return np.array((portfolio.intensity,) + tuple(model.params), dtype=float)


def theta_from_vector(family: str, theta, portfolio: PortfolioParams
                      ) -> Tuple[PortfolioParams, SeverityModel]:
    theta = [float(t) for t in theta]
    if family == "gaussian":
        return portfolio, GaussianApprox(*theta)
    return portfolio.with_intensity(theta[0]), make_severity(family, *theta[1:])


# ---------------------------------------------------------------------------
# Nested bootstrap


def _history_seed(ss: np.random.SeedSequence, r: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (1, r))


def _sample_seed(ss: np.random.SeedSequence) -> np.random.SeedSequence:
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (0,))


def _replicate(r, family, portfolio, model, config, n_policies_hist, m, sample_ss, cap, base,
               base_value, hist_ss, optim_kw):
    rng = np.random.Generator(np.random.PCG64(hist_ss))
    try:
        history = simulate_history(portfolio.intensity, model, n_policies_hist, portfolio.horizon, rng)
        mu_star, sev_star = fit_mle(family, history)
        if mu_star <= 0:
            raise DegenerateDataError("no claims in the simulated history")
        star = simulate_total_losses(portfolio.with_intensity(mu_star), sev_star, m,
                                     seed=sample_ss, intensity_cap=cap)
        res = optimize_contract(star, config, **optim_kw)
        d = criterion_ratio(base, res.contract, config) - base_value
    except (ConvergenceError, DegenerateDataError, AllInfeasible, NonPositiveSurplus) as exc:
        log.debug("replicate %d dropped: %s", r, exc)
        return None
    return d, res.contract.lower, res.contract.upper, res.value


def bootstrap_degradation(portfolio: PortfolioParams, model: SeverityModel, config: CriterionConfig,
                          n: float, reps: int = 100, *, m: int = 100_000, seed=None, n_jobs: int = 1,
                          cap_factor: float = DEFAULT_CAP_FACTOR, base: Optional[LossSample] = None,
                          optim_kw: Optional[dict] = None) -> DegradationStats:
    """Nested parametric bootstrap of ``D(theta_hat)``.

    For every replicate a claim history with ``n`` expected claims is simulated
    from ``theta_hat``, parameters are refitted by MLE, a loss sample is built
    under the refitted parameters and the criterion re-optimised.  The resulting
    contract is scored on the ``theta_hat`` sample that also produced the
    baseline optimum.  All loss samples share one seed and intensity cap, so they
    differ only through the parameters.

    Args:
        portfolio: Exposure and the fitted intensity.
        model: Fitted severity model (not the Gaussian surrogate).
        config: Criterion settings.
        n: Expected number of claims in each synthetic history.
        reps: Number of bootstrap replicates.
        m: Size of every simulated loss sample.
        seed: Master seed; replicate ``r`` uses a fixed substream, so results do
            not depend on ``n_jobs``.
        n_jobs: joblib worker count.
        cap_factor: Intensity cap for the common-random-number coupling, as a
            multiple of the fitted expected claim count.
        base: Precomputed ``theta_hat`` sample (must have been simulated with the
            same seed and cap for the coupling to hold).
    """
    if isinstance(model, GaussianApprox):
        raise TypeError("the Gaussian surrogate has no claim-level likelihood to refit")
    reps = check_count(reps, "reps", minimum=2)
    n = check_positive(n, "n")
    ss = as_seed_sequence(seed)
    sample_ss = _sample_seed(ss)
    cap = cap_factor * portfolio.expected_claims
    if base is None:
        base = simulate_total_losses(portfolio, model, m, seed=sample_ss, intensity_cap=cap)
    optim_kw = dict(optim_kw or {})
    best = optimize_contract(base, config, **optim_kw)
    n_policies_hist = max(int(round(n / (portfolio.intensity * portfolio.horizon))), 1)

    tasks = (delayed(_replicate)(r, model.family, portfolio, model, config, n_policies_hist, m,
                                 sample_ss, cap, base, best.value, _history_seed(ss, r), optim_kw)
             for r in range(reps))
    out = Parallel(n_jobs=n_jobs)(tasks) if n_jobs != 1 else [t[0](*t[1], **t[2]) for t in tasks]
    ok = [o for o in out if o is not None]
    d = np.array([o[0] for o in ok])
    meta = {
        "baseline_lower": best.contract.lower,
        "baseline_upper": best.contract.upper,
        "baseline_value": best.value,
        "mean_lower_star": float(np.mean([o[1] for o in ok])) if ok else float("nan"),
        "mean_upper_star": float(np.mean([o[2] for o in ok])) if ok else float("nan"),
        "mean_value_star": float(np.mean([o[3] for o in ok])) if ok else float("nan"),
        "history_policies": n_policies_hist,
        "m": m,
    }
    return DegradationStats.from_replicates(d, n, "bootstrap", reps - len(ok), meta)


# ---------------------------------------------------------------------------
# Estimator covariance


def _severity_information(model: SeverityModel) -> np.ndarray:
    if isinstance(model, Gamma):
        a, b = model.shape, model.scale
        return np.array([[special.polygamma(1, a), 1.0 / b], [1.0 / b, a / b ** 2]])
    if isinstance(model, Lognormal):
        s = model.log_sd
        return np.diag([1.0 / s ** 2, 2.0 / s ** 2])
    if isinstance(model, Pareto):
        a, b = model.shape, model.scale
        off = -1.0 / (b * (a + 1.0))
        return np.array([[1.0 / a ** 2, off], [off, a / (b ** 2 * (a + 2.0))]])
    raise TypeError(f"no claim-level information for {model!r}")


def _severity_scores(model: SeverityModel, y: np.ndarray) -> np.ndarray:
    if isinstance(model, Gamma):
        a, b = model.shape, model.scale
        return np.column_stack((np.log(y) - special.digamma(a) - math.log(b), y / b ** 2 - a / b))
    if isinstance(model, Lognormal):
        z = (np.log(y) - model.log_mean) / model.log_sd
        return np.column_stack((z / model.log_sd, (z ** 2 - 1.0) / model.log_sd))
    if isinstance(model, Pareto):
        a, b = model.shape, model.scale
        return np.column_stack((1.0 / a - np.log1p(y / b), -1.0 / b + (a + 1.0) * y / (b * (b + y))))
    raise TypeError(f"no claim-level likelihood for {model!r}")


def fisher_sigma(model: SeverityModel, portfolio: Optional[PortfolioParams] = None, *,
                 unit: str = "claim", method: str = "analytic", draws: int = 1_000_000,
                 rng=None) -> np.ndarray:
    """Asymptotic covariance of ``sqrt(n) (theta_hat - theta)`` for ``theta = (mu, severity)``.

    Frequency and severity estimators are independent, so the matrix is block
    diagonal.  With ``unit="claim"`` the scale ``n`` is the number of observed
    claims and ``Var(mu_hat) ~ mu^2 / n``; with ``unit="exposure"`` it is the
    number of policy-years and the frequency entry is ``mu``.

    Args:
        model: Severity model.
        portfolio: Supplies ``mu``; omit to get the severity block only.
        unit: ``"claim"`` or ``"exposure"``.
        method: ``"analytic"`` (closed-form information) or ``"score"`` (average
            outer product of simulated score vectors).
        draws: Monte Carlo size for ``method="score"``.
    """
    if method == "analytic":
        info = _severity_information(model)
    elif method == "score":
        y = sample_severity(model, draws, as_generator(rng))
        s = _severity_scores(model, y)
        info = s.T @ s / draws
    else:
        raise ValueError(f"method must be 'analytic' or 'score', got {method!r}")
    try:
        sev = np.linalg.inv(info)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"singular Fisher information for {model!r}") from exc
    sev = 0.5 * (sev + sev.T)
    if portfolio is None:
        return sev
    mu = portfolio.intensity
    if unit == "claim":
        freq = mu ** 2
    elif unit == "exposure":
        freq, sev = mu, sev / mu
    else:
        raise ValueError(f"unit must be 'claim' or 'exposure', got {unit!r}")
    out = np.zeros((3, 3))
    out[0, 0] = freq
    out[1:, 1:] = sev
    return out


# ---------------------------------------------------------------------------
# Smooth case


def finite_difference_blocks(fun: Callable[[np.ndarray, int], float], a, h_a, n_theta: int,
                             h_theta) -> Tuple[np.ndarray, np.ndarray]:
    """Central-difference ``C_aa`` and ``C_a theta`` of ``fun(a, j)``.

    ``fun(a, j)`` evaluates ``C`` at contract coordinates ``a`` and at ``theta``
    shifted by ``+h_theta[k]`` (``j = 2k + 1``), ``-h_theta[k]`` (``j = 2k + 2``)
    or unshifted (``j = 0``).  That indexing lets callers cache one loss sample
    per shifted parameter.
    """
    a = np.asarray(a, dtype=float)
    h_a = np.broadcast_to(np.asarray(h_a, dtype=float), a.shape)
    h_theta = np.broadcast_to(np.asarray(h_theta, dtype=float), (n_theta,))
    na = a.size
    e = np.eye(na)
    c0 = fun(a, 0)
    caa = np.zeros((na, na))
    for i in range(na):
        di = h_a[i] * e[i]
        caa[i, i] = (fun(a + di, 0) - 2.0 * c0 + fun(a - di, 0)) / h_a[i] ** 2
        for k in range(i + 1, na):
            dk = h_a[k] * e[k]
            v = (fun(a + di + dk, 0) - fun(a + di - dk, 0) - fun(a - di + dk, 0)
                 + fun(a - di - dk, 0)) / (4.0 * h_a[i] * h_a[k])
            caa[i, k] = caa[k, i] = v
    cat = np.zeros((na, n_theta))
    for i in range(na):
        di = h_a[i] * e[i]
        for k in range(n_theta):
            plus, minus = 2 * k + 1, 2 * k + 2
            cat[i, k] = (fun(a + di, plus) - fun(a + di, minus) - fun(a - di, plus)
                         + fun(a - di, minus)) / (4.0 * h_a[i] * h_theta[k])
    return 0.5 * (caa + caa.T), cat


def _free_coordinates(contract: LayerContract, sample: LossSample):
    """Contract coordinates that matter: drop ``a2`` once it is above every simulated loss."""
    if contract.upper >= sample.values[-1]:
        return np.array([contract.lower]), lambda a: LayerContract(a[0], math.inf)
    return (np.array([contract.lower, contract.upper]),
            lambda a: LayerContract(a[0], max(a[1], a[0])))


def criterion_hessian_blocks(portfolio: PortfolioParams, model: SeverityModel,
                             contract: LayerContract, config: CriterionConfig, *,
                             m: int = 200_000, seed=None, rel_step: float = 1e-2,
                             cap_factor: float = DEFAULT_CAP_FACTOR, base: Optional[LossSample] = None,
                             info: Optional[dict] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Second-derivative blocks ``(C_aa, C_a theta)`` of the criterion at ``contract``.

    Central differences with relative step ``rel_step`` on both the contract and
    ``theta``, refined by one Richardson step (``h`` and ``h/2``).  All loss
    samples share ``seed`` and an intensity cap.  When the optimal upper limit
    lies beyond the simulated range the layer is an unlimited stop-loss and only
    ``a1`` is differentiated.

    Args:
        info: If given, receives ``rel_change`` (relative difference between the
            step-``h`` and step-``h/2`` estimates) and the free coordinates.
    """
    family = model.family
    theta = theta_vector(portfolio, model)
    ss = as_seed_sequence(seed)
    cap = cap_factor * portfolio.expected_claims if family != "gaussian" else None
    if base is None:
        base = simulate_total_losses(portfolio, model, m, seed=ss, intensity_cap=cap)
    a0, build = _free_coordinates(contract, base)

    def blocks(rel):
        h_theta = rel * np.abs(theta)
        samples = {0: base}

        def sample_for(j):
            if j not in samples:
                k, sign = (j - 1) // 2, (1.0 if j % 2 else -1.0)
                th = theta.copy()
                th[k] += sign * h_theta[k]
                pf, mdl = theta_from_vector(family, th, portfolio)
                samples[j] = simulate_total_losses(pf, mdl, m, seed=ss, intensity_cap=cap)
            return samples[j]

        def fun(a, j):
            return criterion_ratio(sample_for(j), build(a), config)

        return finite_difference_blocks(fun, a0, rel * np.abs(a0), theta.size, h_theta)

    caa_h, cat_h = blocks(rel_step)
    caa_h2, cat_h2 = blocks(rel_step / 2)
    caa = (4.0 * caa_h2 - caa_h) / 3.0
    cat = (4.0 * cat_h2 - cat_h) / 3.0
    if info is not None:
        denom = max(np.abs(np.concatenate([caa_h2.ravel(), cat_h2.ravel()])).max(), 1e-300)
        info["rel_change"] = float(np.abs(np.concatenate(
            [(caa_h - caa_h2).ravel(), (cat_h - cat_h2).ravel()])).max() / denom)
        info["coordinates"] = a0.tolist()
        info["step_estimates"] = {"h": (caa_h, cat_h), "h/2": (caa_h2, cat_h2)}
    return 0.5 * (caa + caa.T), cat


def q_matrix(c_aa, c_atheta) -> np.ndarray:
    """``Q = 1/2 C_a theta^T C_aa^-1 C_a theta``.

    Raises:
        IndefiniteHessian: if ``C_aa`` has a nonpositive eigenvalue.
    """
    c_aa = np.atleast_2d(np.asarray(c_aa, dtype=float))
    c_atheta = np.atleast_2d(np.asarray(c_atheta, dtype=float))
    eig = np.linalg.eigvalsh(0.5 * (c_aa + c_aa.T))
    if eig.min() <= 0:
        raise IndefiniteHessian(f"C_aa is not positive definite (eigenvalues {eig})")
    q = 0.5 * c_atheta.T @ np.linalg.solve(c_aa, c_atheta)
    return 0.5 * (q + q.T)


def quadratic_form_moments(q, sigma, n) -> Tuple[float, float]:
    """Mean and sd of ``N^T Q N / n`` for ``N ~ Normal(0, Sigma)``."""
    qs = np.atleast_2d(q) @ np.atleast_2d(sigma)
    return float(np.trace(qs)) / n, math.sqrt(2.0 * float(np.trace(qs @ qs))) / n


@dataclass
class AsymptoticInputs:
    """Ingredients of the two large-sample approximations.

    Only the fields needed by the approximation in use have to be set: ``sigma``,
    ``c_aa`` and ``c_atheta`` for the smooth case; ``sigma``, ``g``, ``h1`` and
    ``h2`` for the VaR case.
    """

    sigma: np.ndarray
    c_aa: Optional[np.ndarray] = None
    c_atheta: Optional[np.ndarray] = None
    g: Optional[np.ndarray] = None
    h1: Optional[float] = None
    h2: Optional[float] = None
    k_eps: Optional[float] = None

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if s.shape[0] != s.shape[1] or not np.allclose(s, s.T, rtol=1e-10, atol=1e-14):
            raise ValueError("sigma must be a symmetric square matrix")
        if np.linalg.eigvalsh(s).min() < -1e-12 * max(np.abs(s).max(), 1.0):
            raise ValueError("sigma must be positive semidefinite")
        self.sigma = s

    @property
    def q(self) -> np.ndarray:
        return q_matrix(self.c_aa, self.c_atheta)

    @property
    def g_sigma_g(self) -> float:
        g = np.atleast_1d(np.asarray(self.g, dtype=float))
        return float(g @ self.sigma @ g)


def asymptotic_smooth(inputs: AsymptoticInputs, n: float) -> Tuple[float, float]:
    """Large-sample mean and sd of D when the criterion is smooth at the optimum."""
    return quadratic_form_moments(inputs.q, inputs.sigma, check_positive(n, "n"))


def smooth_inputs(portfolio: PortfolioParams, model: SeverityModel, config: CriterionConfig, *,
                  m: int = 200_000, seed=None, rel_step: float = 1e-2,
                  info: Optional[dict] = None) -> AsymptoticInputs:
    """Optimise on a simulated sample and assemble ``Sigma``, ``C_aa`` and ``C_a theta``."""
    ss = as_seed_sequence(seed)
    cap = DEFAULT_CAP_FACTOR * portfolio.expected_claims
    base = simulate_total_losses(portfolio, model, m, seed=ss, intensity_cap=cap)
    res = optimize_contract(base, config)
    c_aa, c_at = criterion_hessian_blocks(portfolio, model, res.contract, config, m=m, seed=ss,
                                          rel_step=rel_step, base=base, info=info)
    if info is not None:
        info["optimum"] = res
    return AsymptoticInputs(fisher_sigma(model, portfolio), c_aa, c_at)


# ---------------------------------------------------------------------------
# VaR case


def quantile_gradient(portfolio: PortfolioParams, model: SeverityModel, eps: float, *,
                      m: int = 200_000, seed=None, rel_step: float = 1e-2,
                      cap_factor: float = DEFAULT_CAP_FACTOR) -> np.ndarray:
    """Gradient of the simulated ``1 - eps`` quantile with respect to ``theta``.

    Central differences; both shifted samples use the same random numbers.
    """
    family = model.family
    theta = theta_vector(portfolio, model)
    ss = as_seed_sequence(seed)
    cap = None if family == "gaussian" else cap_factor * portfolio.expected_claims * (1 + rel_step)
    g = np.zeros(theta.size)
    for k in range(theta.size):
        h = rel_step * abs(theta[k]) or rel_step
        q = []
        for sign in (1.0, -1.0):
            th = theta.copy()
            th[k] += sign * h
            pf, mdl = theta_from_vector(family, th, portfolio)
            q.append(quantile(simulate_total_losses(pf, mdl, m, seed=ss, intensity_cap=cap), eps))
        g[k] = (q[0] - q[1]) / (2.0 * h)
    return g


def var_coefficients(ratio: float, lower: float, k_eps: float, capital_cost: float = 0.0
                     ) -> Tuple[float, float]:
    """``h1 = (1 + beta C) C / a1`` and ``h2 = C^2 K(1 - eps) / a1``."""
    if lower <= 0:
        raise ValueError("the VaR expansion needs a positive retention a1")
    return (1.0 + capital_cost * ratio) * ratio / lower, ratio ** 2 * k_eps / lower


@dataclass(frozen=True)
class VarDegradationLaw:
    """Limit law ``sqrt(n) D -> (h1 (-V)_+ + h2 V) sqrt(g' Sigma g)`` with ``V ~ N(0, 1)``."""

    h1: float
    h2: float
    g_sigma_g: float

    def mean(self, n: float) -> float:
        return self.h1 * math.sqrt(self.g_sigma_g) / math.sqrt(2.0 * math.pi * n)

    def variance(self, n: float) -> float:
        # E[(-V)_+ V] = -1/2, so the cross term enters with a minus sign
        h1, h2 = self.h1, self.h2
        return ((1.0 - 1.0 / math.pi) * h1 ** 2 - 2.0 * h1 * h2 + 2.0 * h2 ** 2) \
            * self.g_sigma_g / (2.0 * n)

    def sd(self, n: float) -> float:
        return math.sqrt(self.variance(n))

    def sample(self, n: float, size: int, rng=None) -> np.ndarray:
        v = as_generator(rng).standard_normal(size)
        return (self.h1 * np.maximum(-v, 0.0) + self.h2 * v) * math.sqrt(self.g_sigma_g / n)


def asymptotic_var(portfolio: PortfolioParams, model: SeverityModel, config: CriterionConfig,
                   n: float, *, m: int = 200_000, seed=None, sigma=None, g=None,
                   optimum: Optional[OptimResult] = None, base: Optional[LossSample] = None
                   ) -> Tuple[float, float, VarDegradationLaw]:
    """Large-sample mean, variance and limit law of D for the VaR criterion.

    Missing ingredients are computed: the optimum on a simulated sample,
    ``K(1 - eps)`` for that layer, ``Sigma`` from the Fisher information and the
    quantile gradient ``g`` by common-random-number differences.
    """
    n = check_positive(n, "n")
    ss = as_seed_sequence(seed)
    if base is None:
        cap = None if model.family == "gaussian" else DEFAULT_CAP_FACTOR * portfolio.expected_claims
        base = simulate_total_losses(portfolio, model, m, seed=ss, intensity_cap=cap)
    if optimum is None:
        optimum = optimize_contract(base, config.replace(risk_measure="VaR"))
    k_eps = k_function(config.principle, optimum.contract, base, 1.0 - config.eps)
    h1, h2 = var_coefficients(optimum.value, optimum.contract.lower, k_eps, config.capital_cost)
    if sigma is None:
        if isinstance(model, GaussianApprox):
            raise ValueError("pass sigma explicitly for the Gaussian surrogate")
        sigma = fisher_sigma(model, portfolio)
    if g is None:
        g = quantile_gradient(portfolio, model, config.eps, m=m, seed=ss)
    inputs = AsymptoticInputs(sigma, g=g, h1=h1, h2=h2, k_eps=k_eps)
    law = VarDegradationLaw(h1, h2, inputs.g_sigma_g)
    return law.mean(n), law.variance(n), law


# ---------------------------------------------------------------------------
# Rates and sample sizes


def rate_fit(ns, means=None) -> float:
    """Least-squares slope of ``log E[D]`` against ``log n``.

    Accepts either two sequences or a sequence of :class:`DegradationStats`.
    """
    if means is None:
        stats = list(ns)
        ns = [s.n for s in stats]
        means = [s.mean for s in stats]
    ns = np.asarray(ns, dtype=float)
    means = np.asarray(means, dtype=float)
    if ns.size != means.size or np.unique(ns).size < 2:
        raise ValueError("need at least two distinct sample sizes")
    if np.any(means <= 0) or np.any(ns <= 0):
        raise ValueError("rate fit needs positive sample sizes and means")
    slope, _ = np.polyfit(np.log(ns), np.log(means), 1)
    return float(slope)


def sample_size_for_rmse(portfolio: PortfolioParams, model: SeverityModel, config: CriterionConfig,
                         target: float, *, reps: int = 40, m: int = 100_000, seed=None,
                         n_bounds: Tuple[float, float] = (500.0, 500_000.0), rel_tol: float = 0.1,
                         max_steps: int = 20, n_jobs: int = 1, history: Optional[list] = None) -> int:
    """Smallest history size ``n`` with bootstrap ``sqrt(E D^2) <= target``.

    ``target`` is the absolute RMSE of D (a "25% RMSE" target is 0.25).
    Bisection runs on ``log n`` until the bracket is narrower than ``rel_tol``;
    every probe uses the same seed so RMSE is compared on common random numbers.

    Raises:
        BudgetExhausted: if even the largest ``n`` misses the target or the
            bisection does not close within ``max_steps``.
    """
    target = check_positive(target, "target")
    if not target < 1:
        raise ValueError("target must lie in (0, 1)")
    lo, hi = (float(b) for b in n_bounds)
    history = history if history is not None else []

    def rmse(n):
        stats = bootstrap_degradation(portfolio, model, config, n, reps, m=m, seed=seed, n_jobs=n_jobs)
        history.append((n, stats.rmse, stats.mean, stats.sd))
        log.info("n=%d rmse=%.4f", n, stats.rmse)
        return stats.rmse

    if rmse(hi) > target:
        raise BudgetExhausted(f"RMSE target {target} not met even at n={hi:g}")
    if rmse(lo) <= target:
        return int(round(lo))
    for _ in range(max_steps):
        if hi / lo <= 1.0 + rel_tol:
            return int(round(hi))
        mid = math.sqrt(lo * hi)
        if rmse(mid) <= target:
            hi = mid
        else:
            lo = mid
    raise BudgetExhausted(f"bisection did not close within {max_steps} steps")
