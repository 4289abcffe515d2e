"""Bayesian treatment of parameter uncertainty.

Posterior draws of ``(mu, zeta)`` are pushed through the compound-Poisson model
one draw per simulated year, which yields the posterior predictive loss
distribution.  Optimising the criterion on that sample gives the Bayesian
contract, whose degradation is measured on a sample from the true parameters.

Samplers:

* Poisson intensity: exact Gamma draws (conjugate or Jeffreys).
* Lognormal: exact Normal-inverse-Gamma draws.
* Gamma and Pareto: Metropolis-Hastings on the log of one parameter with the
  other drawn from its conditional Gamma distribution inside the same proposal.
  Under conjugate priors the second parameter integrates out exactly, so the
  chain is a one-dimensional random walk on the marginal posterior; under
  Jeffreys priors the Gamma draw acts as a proposal and enters the acceptance
  ratio.  Many chains run side by side as numpy vectors.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
from joblib import Parallel, delayed
from scipy import special
from scipy.interpolate import CubicSpline

from ._validation import as_generator, as_seed_sequence, check_count, check_positive, check_scalar
from .criterion import CriterionConfig, NonPositiveSurplus, criterion_ratio
from .degradation import DegradationStats, DEFAULT_CAP_FACTOR
from .losses import (
    ClaimHistory,
    ConvergenceError,
    DegenerateDataError,
    LossSample,
    PortfolioParams,
    SeverityModel,
    _compound_totals,
    fit_mle,
    simulate_history,
    simulate_total_losses,
)
from .optimize import AllInfeasible, optimize_contract

__all__ = [
    "GammaHyper",
    "JeffreysPrior",
    "GammaSeverityPrior",
    "NormalInverseGammaPrior",
    "ParetoSeverityPrior",
    "InformativePrior",
    "PointMassPrior",
    "PriorSpec",
    "PosteriorDraws",
    "jeffreys_logdensity",
    "poisson_posterior",
    "sample_posterior_poisson",
    "sample_posterior_severity",
    "sample_posterior",
    "geweke_z",
    "posterior_predictive_losses",
    "bayes_degradation",
]

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Priors


@dataclass(frozen=True)
class GammaHyper:
    """Gamma(shape, scale) prior; mean ``shape * scale``."""

    shape: float
    scale: float

    def __post_init__(self):
        object.__setattr__(self, "shape", check_positive(self.shape, "shape"))
        object.__setattr__(self, "scale", check_positive(self.scale, "scale"))

    def logpdf(self, x):
        return (self.shape - 1.0) * np.log(x) - x / self.scale

    @property
    def mean(self) -> float:
        return self.shape * self.scale


@dataclass(frozen=True)
class JeffreysPrior:
    """Non-informative prior; for the Lognormal the ``1/sigma^2`` kernel is used."""


@dataclass(frozen=True)
class GammaSeverityPrior:
    """Gamma priors on the Gamma shape and on the rate ``1/scale``."""

    shape: GammaHyper
    rate: GammaHyper
    family = "gamma"


@dataclass(frozen=True)
class NormalInverseGammaPrior:
    """``1/sigma^2 ~ Gamma(alpha0, scale beta0)`` and ``xi | sigma^2 ~ N(xi0, sigma^2/kappa0)``."""

    xi0: float
    kappa0: float
    alpha0: float
    beta0: float
    family = "lognormal"

    def __post_init__(self):
        object.__setattr__(self, "xi0", check_scalar(self.xi0, "xi0"))
        for name in ("kappa0", "alpha0", "beta0"):
            object.__setattr__(self, name, check_positive(getattr(self, name), name))


@dataclass(frozen=True)
class ParetoSeverityPrior:
    """Gamma priors on the Pareto shape and scale."""

    shape: GammaHyper
    scale: GammaHyper
    family = "pareto"


SeverityPrior = Union[GammaSeverityPrior, NormalInverseGammaPrior, ParetoSeverityPrior]


@dataclass(frozen=True)
class InformativePrior:
    frequency: GammaHyper
    severity: SeverityPrior


@dataclass(frozen=True)
class PointMassPrior:
    """Degenerate prior at known parameters; the posterior ignores the data."""

    intensity: float
    model: SeverityModel


PriorSpec = Union[JeffreysPrior, InformativePrior, PointMassPrior]


def jeffreys_logdensity(family: str, params) -> float:
    """Unnormalised log Jeffreys prior.

    Families and parameters: ``poisson (mu,)``, ``gamma (shape, scale)``,
    ``lognormal (xi, sigma)`` (the ``sigma^-2`` kernel), ``pareto (shape, scale)``.
    """
    p = [float(v) for v in np.atleast_1d(params)]
    if family == "poisson":
        (mu,) = p
        if mu <= 0:
            raise ValueError("mu must be > 0")
        return -0.5 * math.log(mu)
    if family == "lognormal":
        _, sigma = p
        if sigma <= 0:
            raise ValueError("sigma must be > 0")
        return -2.0 * math.log(sigma)
    a, b = p
    if a <= 0 or b <= 0:
        raise ValueError(f"{family} parameters must be > 0")
    if family == "gamma":
        return 0.5 * math.log(a * float(special.polygamma(1, a)) - 1.0) - math.log(b)
    if family == "pareto":
        return -math.log(b) - math.log(a + 1.0) - 0.5 * math.log(a * (a + 2.0))
    raise ValueError(f"unknown family {family!r}")


# ---------------------------------------------------------------------------
# Posterior draws


@dataclass
class PosteriorDraws:
    """Paired posterior draws of the intensity and the severity parameters.

    Attributes:
        family: Severity family tag.
        mu: Intensity draws, shape ``(m,)``.
        severity: Severity parameter draws, shape ``(m, 2)`` in the model's
            parameter order.
        acceptance: Post-burn-in MH acceptance rate (None for exact samplers).
        diagnostics: Geweke z score, step size and chain layout.
    """

    family: str
    mu: np.ndarray
    severity: np.ndarray
    acceptance: Optional[float] = None
    diagnostics: Dict = field(default_factory=dict)

    def __len__(self):
        return int(self.mu.size)

    def to_csv(self, path) -> Path:
        path = Path(path)
        names = {"gamma": ("shape", "scale"), "lognormal": ("log_mean", "log_sd"),
                 "pareto": ("shape", "scale")}[self.family]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("mu",) + names)
            for row in zip(self.mu, self.severity[:, 0], self.severity[:, 1]):
                w.writerow([repr(float(v)) for v in row])
        return path


def poisson_posterior(prior, n: int, exposure: float) -> GammaHyper:
    """Posterior Gamma(shape, scale) of the intensity."""
    if isinstance(prior, InformativePrior):
        prior = prior.frequency
    if isinstance(prior, JeffreysPrior):
        return GammaHyper(n + 0.5, 1.0 / exposure)
    if isinstance(prior, GammaHyper):
        return GammaHyper(prior.shape + n, prior.scale / (prior.scale * exposure + 1.0))
    raise TypeError(f"unsupported frequency prior {prior!r}")


def sample_posterior_poisson(prior, history: ClaimHistory, m: int, rng=None) -> np.ndarray:
    """``m`` exact draws of ``mu`` given ``n`` claims over ``exposure`` policy-years."""
    m = check_count(m, "m", minimum=1)
    rng = as_generator(rng)
    if isinstance(prior, PointMassPrior):
        return np.full(m, float(prior.intensity))
    post = poisson_posterior(prior, history.n, history.exposure)
    return rng.gamma(post.shape, post.scale, size=m)


def _lognormal_posterior(prior, y, m, rng):
    ly = np.log(y)
    n = ly.size
    mean = float(ly.mean())
    ss = float(((ly - mean) ** 2).sum())
    if isinstance(prior, JeffreysPrior):
        if n < 2 or ss <= 0:
            raise DegenerateDataError("need two distinct claims for the flat log-sigma prior")
        tau = rng.gamma((n - 1) / 2.0, 2.0 / ss, size=m)
        sigma2 = 1.0 / tau
        xi = rng.normal(mean, np.sqrt(sigma2 / n))
    else:
        k0 = prior.kappa0
        shape = prior.alpha0 + n / 2.0
        rate = 1.0 / prior.beta0 + 0.5 * ss + k0 * n / (2.0 * (k0 + n)) * (mean - prior.xi0) ** 2
        tau = rng.gamma(shape, 1.0 / rate, size=m)
        sigma2 = 1.0 / tau
        xi = rng.normal((n * mean + k0 * prior.xi0) / (k0 + n), np.sqrt(sigma2 / (k0 + n)))
    return np.column_stack((xi, np.sqrt(sigma2)))


class _PartialSums:
    """``S(beta) = sum log(1 + y/beta)``, splined on a log-beta grid with exact fallback."""

    def __init__(self, y, centre, half_width, nodes=4001):
        self.y = y
        self.lo, self.hi = centre - half_width, centre + half_width
        grid = np.linspace(self.lo, self.hi, nodes)
        vals = np.array([np.log1p(y / math.exp(g)).sum() for g in grid])
        self.spline = CubicSpline(grid, vals)

    def __call__(self, log_beta):
        log_beta = np.asarray(log_beta, dtype=float)
        out = self.spline(log_beta)
        outside = np.flatnonzero((log_beta < self.lo) | (log_beta > self.hi))
        for i in outside:
            out[i] = np.log1p(self.y / math.exp(log_beta[i])).sum()
        return out


def _init_candidates(family, y, prior):
    """Starting points for the chains: the MLE (if it exists) and the prior mean."""
    out = []
    try:
        _, mle = fit_mle(family, ClaimHistory(y, 1.0))
        out.append(mle.params)
    except (ConvergenceError, DegenerateDataError):
        pass
    if isinstance(prior, GammaSeverityPrior):
        out.append((prior.shape.mean, 1.0 / prior.rate.mean))
    elif isinstance(prior, ParetoSeverityPrior):
        out.append((prior.shape.mean, prior.scale.mean))
    if not out:
        mean = float(y.mean())
        out.append((1.0, mean) if family == "gamma" else (3.0, 2.0 * mean))
    return out


def _gamma_kernel(y, prior):
    """Joint log target and conditional proposal for (shape, rate); random walk on shape."""
    n = y.size
    sum_y = float(y.sum())
    sum_log = float(np.log(y).sum())
    jeffreys = isinstance(prior, JeffreysPrior)
    a_r = 0.0 if jeffreys else prior.rate.shape
    b_r = 0.0 if jeffreys else 1.0 / prior.rate.scale

    def conditional(alpha):
        return a_r + alpha * n, sum_y + b_r  # Gamma(shape, rate) of the rate parameter

    def log_w(alpha, rate):
        if jeffreys:
            lp = 0.5 * np.log(alpha * special.polygamma(1, alpha) - 1.0) - np.log(rate)
        else:
            lp = prior.shape.logpdf(alpha) + prior.rate.logpdf(rate)
        lpi = lp + n * alpha * np.log(rate) - n * special.gammaln(alpha) \
            + (alpha - 1.0) * sum_log - rate * sum_y
        a, b = conditional(alpha)
        lq = (a - 1.0) * np.log(rate) - rate * b + a * np.log(b) - special.gammaln(a)
        return lpi - lq

    return conditional, log_w


def _pareto_kernel(y, prior, s_func):
    """Joint log target and conditional proposal for (shape, scale); random walk on scale."""
    n = y.size
    jeffreys = isinstance(prior, JeffreysPrior)
    a_a = 0.0 if jeffreys else prior.shape.shape
    b_a = 0.0 if jeffreys else 1.0 / prior.shape.scale

    def conditional(beta, s):
        return a_a + n, s + b_a

    def log_w(beta, alpha, s):
        if jeffreys:
            lp = -np.log(beta) - np.log1p(alpha) - 0.5 * np.log(alpha * (alpha + 2.0))
        else:
            lp = prior.shape.logpdf(alpha) + prior.scale.logpdf(beta)
        lpi = lp + n * np.log(alpha) - n * np.log(beta) - (alpha + 1.0) * s
        a, b = conditional(beta, s)
        lq = (a - 1.0) * np.log(alpha) - alpha * b + a * np.log(b) - special.gammaln(a)
        return lpi - lq

    return conditional, log_w


def _run_mh(family, y, prior, m, rng, burn_in, thin, chains):
    n = y.size
    keep = -(-m // chains)
    total = burn_in + keep * thin
    candidates = _init_candidates(family, y, prior)

    if family == "gamma":
        conditional, log_w_raw = _gamma_kernel(y, prior)

        def companion(x, s=None):
            a, b = conditional(x)
            return rng.gamma(a, 1.0 / b)

        def weight(x, c, s=None):
            return log_w_raw(x, c)

        def score(point):
            x = np.array([point[0]])
            a, b = conditional(x)
            return weight(x, a / b)[0]

        u0 = math.log(max(candidates, key=score)[0])        # log shape
        s_func = None
    else:
        def exact_s(log_beta):
            return np.array([np.log1p(y / math.exp(v)).sum() for v in np.atleast_1d(log_beta)])

        conditional, log_w_raw = _pareto_kernel(y, prior, exact_s)

        def score(point):
            lb = np.array([math.log(point[1])])
            sv = exact_s(lb)
            a, b = conditional(np.exp(lb), sv)
            return log_w_raw(np.exp(lb), a / b, sv)[0]

        u0 = math.log(max(candidates, key=score)[1])        # log scale
        s_func = _PartialSums(y, u0, max(72.0 / math.sqrt(n), 2.0))

        def companion(x, s):
            a, b = conditional(x, s)
            return rng.gamma(a, 1.0 / b)

        def weight(x, c, s):
            return log_w_raw(x, c, s)

    u = np.full(chains, u0)
    x = np.exp(u)
    s_cur = s_func(u) if s_func else None
    c = companion(x, s_cur)
    lw = weight(x, c, s_cur)

    step = 2.0 / math.sqrt(n + 1.0)
    window_acc = 0.0
    window = 0
    kept_x = np.empty((keep, chains))
    kept_c = np.empty((keep, chains))
    accepted_after = 0
    k = 0
    for it in range(total):
        u_new = u + step * rng.standard_normal(chains)
        x_new = np.exp(u_new)
        s_new = s_func(u_new) if s_func else None
        c_new = companion(x_new, s_new)
        lw_new = weight(x_new, c_new, s_new)
        log_ratio = lw_new - lw + (u_new - u)
        acc = np.log(rng.random(chains)) < np.where(np.isfinite(log_ratio), log_ratio, -np.inf)
        u = np.where(acc, u_new, u)
        c = np.where(acc, c_new, c)
        lw = np.where(acc, lw_new, lw)
        if s_func:
            s_cur = np.where(acc, s_new, s_cur)
        if it < burn_in:
            window_acc += acc.mean()
            window += 1
            if window == 50:
                rate = window_acc / window
                if rate < 0.2:
                    step *= 0.7
                elif rate > 0.5:
                    step *= 1.4
                window_acc, window = 0.0, 0
            continue
        accepted_after += int(acc.sum())
        if (it - burn_in) % thin == thin - 1:
            kept_x[k] = np.exp(u)
            kept_c[k] = c
            k += 1

    acceptance = accepted_after / (chains * (total - burn_in))
    if family == "gamma":
        shape, scale = kept_x, 1.0 / kept_c
        rw = kept_x
    else:
        shape, scale = kept_c, kept_x
        rw = kept_x
    z = geweke_z(np.log(rw).mean(axis=1)) if keep >= 100 else float("nan")
    draws = np.column_stack((shape.ravel()[:m], scale.ravel()[:m]))
    diag = {"geweke_z": z, "step": step, "chains": chains, "per_chain": keep, "thin": thin,
            "burn_in": burn_in}
    return draws, acceptance, diag


def sample_posterior_severity(family: str, prior, y, m: int, rng=None, *, burn_in: int = 1000,
                              thin: int = 2, chains: int = 64) -> PosteriorDraws:
    """``m`` posterior draws of the severity parameters.

    Lognormal draws are exact.  Gamma and Pareto use the MH scheme described in
    the module docstring; the step size is tuned during ``burn_in`` towards a
    20-50% acceptance rate.  A warning is issued if the final acceptance lies
    outside [0.05, 0.95].

    Returns:
        PosteriorDraws with ``mu`` left empty (see :func:`sample_posterior`).
    """
    m = check_count(m, "m", minimum=1)
    rng = as_generator(rng)
    if isinstance(prior, InformativePrior):
        prior = prior.severity
    if isinstance(prior, PointMassPrior):
        sev = np.tile(np.asarray(prior.model.params, dtype=float), (m, 1))
        return PosteriorDraws(family, np.empty(0), sev)
    y = np.asarray(y, dtype=float).ravel()
    if y.size < 2:
        raise DegenerateDataError(f"need at least 2 claims for the {family} posterior")
    if not isinstance(prior, JeffreysPrior) and getattr(prior, "family", family) != family:
        raise TypeError(f"prior {prior!r} does not match family {family!r}")
    if family == "lognormal":
        return PosteriorDraws(family, np.empty(0), _lognormal_posterior(prior, y, m, rng))
    if family not in ("gamma", "pareto"):
        raise ValueError(f"unknown severity family {family!r}")
    chains = max(1, min(chains, m))
    draws, acc, diag = _run_mh(family, y, prior, m, rng, burn_in, max(int(thin), 1), chains)
    if not 0.05 <= acc <= 0.95:
        warnings.warn(f"MH acceptance rate {acc:.3f} outside [0.05, 0.95]", RuntimeWarning, stacklevel=2)
    return PosteriorDraws(family, np.empty(0), draws, acc, diag)


def sample_posterior(family: str, prior: PriorSpec, history: ClaimHistory, m: int, rng=None,
                     **mcmc) -> PosteriorDraws:
    """Joint posterior draws; frequency and severity are a posteriori independent."""
    rng = as_generator(rng)
    mu = sample_posterior_poisson(prior, history, m, rng)
    sev = sample_posterior_severity(family, prior, history.y, m, rng, **mcmc)
    sev.mu = mu
    return sev


def geweke_z(chain, first: float = 0.1, last: float = 0.5, batches: int = 20) -> float:
    """Geweke convergence score comparing the early and late parts of a chain.

    Segment variances of the mean are estimated by batch means, which accounts
    for autocorrelation.  ``|z| < 2..3`` is consistent with stationarity.
    """
    x = np.asarray(chain, dtype=float).ravel()
    na, nb = int(first * x.size), int(last * x.size)
    if na < 10:
        raise ValueError("chain too short for the requested segments")
    a, b = x[:na], x[-nb:]
    batches = max(2, min(batches, na // 5))

    def var_of_mean(seg):
        size = seg.size // batches
        means = seg[: size * batches].reshape(batches, size).mean(axis=1)
        return means.var(ddof=1) / batches

    denom = math.sqrt(var_of_mean(a) + var_of_mean(b))
    if denom == 0:
        return 0.0
    return float((a.mean() - b.mean()) / denom)


# ---------------------------------------------------------------------------
# Predictive distribution and degradation


def posterior_predictive_losses(draws: PosteriorDraws, portfolio: PortfolioParams, m: Optional[int] = None,
                                seed=None, *, intensity_cap: Optional[float] = None) -> LossSample:
    """One compound-Poisson total per posterior draw, sorted.

    The first ``m`` draws are used (all of them by default).  With a shared
    ``seed`` and ``intensity_cap`` the sample is coupled to
    :func:`~reinsopt.losses.simulate_total_losses`; a point-mass posterior then
    reproduces that sample exactly.
    """
    m = len(draws) if m is None else check_count(m, "m", minimum=1)
    if m > len(draws):
        raise ValueError(f"asked for {m} totals but only {len(draws)} posterior draws exist")
    ss = as_seed_sequence(seed)
    lam = portfolio.n_policies * portfolio.horizon * draws.mu[:m]
    params = (draws.severity[:m, 0], draws.severity[:m, 1])
    values, cap = _compound_totals(draws.family, lam, params, m, ss, intensity_cap)
    return LossSample(values, seed={"entropy": ss.entropy, "spawn_key": list(ss.spawn_key),
                                    "intensity_cap": cap},
                      meta={"family": draws.family, "predictive": True})


def _bayes_replicate(r, family, portfolio, model, prior, n_policies_hist, config, m, sample_ss, cap,
                     base, base_value, hist_ss, post_ss, mcmc):
    rng = np.random.Generator(np.random.PCG64(hist_ss))
    try:
        history = simulate_history(portfolio.intensity, model, n_policies_hist, portfolio.horizon, rng)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            draws = sample_posterior(family, prior, history, m,
                                     np.random.Generator(np.random.PCG64(post_ss)), **mcmc)
        pred = posterior_predictive_losses(draws, portfolio, m, seed=sample_ss, intensity_cap=cap)
        res = optimize_contract(pred, config)
        d = criterion_ratio(base, res.contract, config) - base_value
    except (ConvergenceError, DegenerateDataError, AllInfeasible, NonPositiveSurplus) as exc:
        log.debug("bayes replicate %d dropped: %s", r, exc)
        return None
    return d, res.contract.lower, res.contract.upper, d + base_value, draws.acceptance


def bayes_degradation(portfolio: PortfolioParams, model: SeverityModel, prior: PriorSpec,
                      n_policies_hist: int, config: CriterionConfig, *, m: int = 100_000,
                      reps: int = 50, seed=None, n_jobs: int = 1,
                      cap_factor: float = DEFAULT_CAP_FACTOR, base: Optional[LossSample] = None,
                      mcmc: Optional[dict] = None) -> DegradationStats:
    """Degradation of the Bayesian contract at fixed true parameters.

    Each replicate simulates a claim history of ``n_policies_hist`` policy-years
    under the truth, builds the posterior predictive sample, optimises on it and
    scores the result on the true-parameter sample that defines the baseline
    optimum.  Histories depend only on ``seed`` and the replicate index, so
    different priors see identical data.
    """
    reps = check_count(reps, "reps", minimum=2)
    n_policies_hist = check_count(n_policies_hist, "n_policies_hist", minimum=1)
    ss = as_seed_sequence(seed)
    sample_ss = np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (0,))
    cap = cap_factor * portfolio.expected_claims
    if base is None:
        base = simulate_total_losses(portfolio, model, m, seed=sample_ss, intensity_cap=cap)
    best = optimize_contract(base, config)
    mcmc = dict(mcmc or {})

    def keys(r):
        return (np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (1, r)),
                np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (2, r)))

    jobs = [(r, model.family, portfolio, model, prior, n_policies_hist, config, m, sample_ss, cap,
             base, best.value) + keys(r) + (mcmc,) for r in range(reps)]
    if n_jobs == 1:
        out = [_bayes_replicate(*j) for j in jobs]
    else:
        out = Parallel(n_jobs=n_jobs)(delayed(_bayes_replicate)(*j) for j in jobs)
    ok = [o for o in out if o is not None]
    d = np.array([o[0] for o in ok])
    acc = [o[4] for o in ok if o[4] is not None]
    meta = {
        "baseline_lower": best.contract.lower,
        "baseline_upper": best.contract.upper,
        "baseline_value": best.value,
        "mean_lower_star": float(np.mean([o[1] for o in ok])) if ok else float("nan"),
        "mean_upper_star": float(np.mean([o[2] for o in ok])) if ok else float("nan"),
        "mean_value_star": float(np.mean([o[3] for o in ok])) if ok else float("nan"),
        "mean_acceptance": float(np.mean(acc)) if acc else None,
        "history_policies": n_policies_hist,
        "m": m,
    }
    expected_n = n_policies_hist * portfolio.intensity * portfolio.horizon
    return DegradationStats.from_replicates(d, expected_n, "bayes", reps - len(ok), meta)
