"""Claim frequency/severity models, compound-Poisson simulation and MLE fitting.

Total losses follow the collective risk model ``X = Y_1 + ... + Y_N`` with
``N ~ Poisson(J * mu * T)``.  Simulation is organised so that two calls with the
same seed but slightly different parameters reuse the same underlying uniforms
(common random numbers): claim counts are drawn by Poisson inversion of a
per-simulation uniform, and each simulation owns a fixed block of severity
uniforms whose length depends only on an *intensity cap*.  That coupling is what
keeps finite differences and nested-bootstrap comparisons free of Monte Carlo
noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import ClassVar, Optional, Tuple, Union

import numpy as np
from scipy import optimize, special

from ._validation import (
    as_generator,
    as_seed_sequence,
    check_count,
    check_nonnegative,
    check_positive,
    check_probability,
    check_scalar,
    tail_count,
    upper_index,
)

__all__ = [
    "Gamma",
    "Lognormal",
    "Pareto",
    "GaussianApprox",
    "SeverityModel",
    "PortfolioParams",
    "ClaimHistory",
    "LossSample",
    "InfiniteMomentError",
    "ConvergenceError",
    "DegenerateDataError",
    "make_severity",
    "sample_severity",
    "moments",
    "gaussian_approx",
    "simulate_total_losses",
    "quantile",
    "quantile_standard_error",
    "fit_mle",
    "simulate_history",
]


class InfiniteMomentError(ValueError):
    """A requested moment of the severity distribution does not exist."""


class ConvergenceError(RuntimeError):
    """An iterative estimator did not converge."""


class DegenerateDataError(ValueError):
    """The data carry no information about a parameter (e.g. all values equal)."""


# ---------------------------------------------------------------------------
# Severity models


@dataclass(frozen=True)
class Gamma:
    """Gamma severity with density ``y**(shape-1) exp(-y/scale) / (scale**shape Gamma(shape))``."""

    shape: float
    scale: float
    family: ClassVar[str] = "gamma"

    def __post_init__(self):
        object.__setattr__(self, "shape", check_positive(self.shape, "shape"))
        object.__setattr__(self, "scale", check_positive(self.scale, "scale"))

    @property
    def params(self):
        return (self.shape, self.scale)


@dataclass(frozen=True)
class Lognormal:
    log_mean: float
    log_sd: float
    family: ClassVar[str] = "lognormal"

    def __post_init__(self):
        object.__setattr__(self, "log_mean", check_scalar(self.log_mean, "log_mean"))
        object.__setattr__(self, "log_sd", check_positive(self.log_sd, "log_sd"))

    @property
    def params(self):
        return (self.log_mean, self.log_sd)


@dataclass(frozen=True)
class Pareto:
    """Pareto type II (Lomax): density ``(shape/scale) (1 + y/scale)**-(shape+1)``."""

    shape: float
    scale: float
    family: ClassVar[str] = "pareto"

    def __post_init__(self):
        object.__setattr__(self, "shape", check_positive(self.shape, "shape"))
        object.__setattr__(self, "scale", check_positive(self.scale, "scale"))

    @property
    def params(self):
        return (self.shape, self.scale)


@dataclass(frozen=True)
class GaussianApprox:
    """Normal surrogate for the *total* loss, not for individual claims."""

    mean: float
    sd: float
    family: ClassVar[str] = "gaussian"

    def __post_init__(self):
        object.__setattr__(self, "mean", check_scalar(self.mean, "mean"))
        object.__setattr__(self, "sd", check_positive(self.sd, "sd"))

    @property
    def params(self):
        return (self.mean, self.sd)


SeverityModel = Union[Gamma, Lognormal, Pareto, GaussianApprox]

FAMILIES = {cls.family: cls for cls in (Gamma, Lognormal, Pareto, GaussianApprox)}
CLAIM_FAMILIES = ("gamma", "lognormal", "pareto")


def make_severity(family: str, *params) -> SeverityModel:
    """Build a model from its family tag and positional parameters."""
    try:
        cls = FAMILIES[family.lower()]
    except KeyError:
        raise ValueError(f"unknown severity family {family!r}; "
                         f"expected one of {sorted(FAMILIES)}") from None
    return cls(*params)


@dataclass(frozen=True)
class PortfolioParams:
    """Portfolio of ``n_policies`` policies with claim intensity ``intensity`` per policy-year."""

    n_policies: int
    intensity: float
    horizon: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "n_policies", check_count(self.n_policies, "n_policies", minimum=1))
        object.__setattr__(self, "intensity", check_positive(self.intensity, "intensity"))
        object.__setattr__(self, "horizon", check_positive(self.horizon, "horizon"))

    @property
    def expected_claims(self) -> float:
        return self.n_policies * self.intensity * self.horizon

    def with_intensity(self, intensity) -> "PortfolioParams":
        return PortfolioParams(self.n_policies, intensity, self.horizon)


@dataclass(frozen=True)
class ClaimHistory:
    """Observed claims: severities ``y`` collected over ``exposure`` policy-years."""

    y: np.ndarray
    exposure: float

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        if y.size and (not np.all(np.isfinite(y)) or np.any(y <= 0)):
            raise ValueError("claim severities must be finite and > 0")
        y.flags.writeable = False
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "exposure", check_positive(self.exposure, "exposure"))

    @property
    def n(self) -> int:
        return int(self.y.size)


# ---------------------------------------------------------------------------
# Moments and direct sampling


def moments(model: SeverityModel) -> Tuple[float, float]:
    """Exact (mean, sd) of the model.

    Raises:
        InfiniteMomentError: Pareto with shape <= 2 (sd) or <= 1 (mean).
    """
    if isinstance(model, Gamma):
        return model.shape * model.scale, model.scale * math.sqrt(model.shape)
    if isinstance(model, Lognormal):
        s2 = model.log_sd ** 2
        mean = math.exp(model.log_mean + s2 / 2)
        return mean, mean * math.sqrt(math.expm1(s2))
    if isinstance(model, Pareto):
        a, b = model.shape, model.scale
        if a <= 1:
            raise InfiniteMomentError(f"Pareto mean is infinite for shape={a} <= 1")
        if a <= 2:
            raise InfiniteMomentError(f"Pareto variance is infinite for shape={a} <= 2")
        return b / (a - 1), b * math.sqrt(a / ((a - 1) ** 2 * (a - 2)))
    if isinstance(model, GaussianApprox):
        return model.mean, model.sd
    raise TypeError(f"not a severity model: {model!r}")


def sample_severity(model: SeverityModel, count: int, rng=None) -> np.ndarray:
    """Draw ``count`` i.i.d. claim severities."""
    count = check_count(count, "count")
    rng = as_generator(rng)
    if isinstance(model, Gamma):
        return rng.gamma(model.shape, model.scale, size=count)
    if isinstance(model, Lognormal):
        return rng.lognormal(model.log_mean, model.log_sd, size=count)
    if isinstance(model, Pareto):
        # numpy's pareto() is already the Lomax form
        return model.scale * rng.pareto(model.shape, size=count)
    if isinstance(model, GaussianApprox):
        raise TypeError("GaussianApprox models total losses and cannot generate claim severities")
    raise TypeError(f"not a severity model: {model!r}")


def gaussian_approx(portfolio: PortfolioParams, model: SeverityModel) -> GaussianApprox:
    """Normal surrogate for the compound-Poisson total (Var N = E N)."""
    if isinstance(model, GaussianApprox):
        raise TypeError("model is already a total-loss approximation")
    mean_y, sd_y = moments(model)
    lam = portfolio.expected_claims
    return GaussianApprox(lam * mean_y, math.sqrt(lam * (mean_y ** 2 + sd_y ** 2)))


# ---------------------------------------------------------------------------
# Compound simulation engine

_CHUNK = 1 << 17


def _poisson_cdf_table(lam: float) -> np.ndarray:
    kmax = int(lam + 40.0 * math.sqrt(lam) + 60)
    return special.pdtr(np.arange(kmax + 1), lam)


def _poisson_inverse(v: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Smallest k with P(N <= k) >= v, elementwise with per-element intensities.

    Uses the same ``pdtr`` evaluations as the tabulated scalar path so both give
    identical counts for identical intensities.
    """
    n = np.zeros(v.shape, dtype=np.int64)
    active = np.flatnonzero(v > special.pdtr(0, lam))
    k = 0
    while active.size:
        k += 1
        n[active] = k
        active = active[v[active] > special.pdtr(k, lam[active])]
    return n


def _chunk_rng(entropy, spawn_key, c):
    ss = np.random.SeedSequence(entropy, spawn_key=tuple(spawn_key) + (c,))
    return np.random.Generator(np.random.PCG64(ss))


def _take(p, sl, idx=None):
    if np.ndim(p) == 0:
        return p
    p = p[sl]
    return p if idx is None else p[idx]


def _compound_totals(family, lam, params, m, ss, cap):
    """Unsorted totals for ``m`` simulations; ``lam`` and ``params`` may be per-simulation arrays."""
    lam_arr = np.asarray(lam, dtype=float)
    scalar_lam = lam_arr.ndim == 0
    params = tuple(np.asarray(p, dtype=float) for p in params)
    lam_max = float(lam_arr.max()) if lam_arr.size else 0.0
    cap = lam_max if cap is None else max(float(cap), lam_max)

    lam_table = _poisson_cdf_table(float(lam_arr)) if scalar_lam else None
    cap_table = _poisson_cdf_table(cap) if family in ("lognormal", "pareto") else None

    out = np.empty(m)
    n_chunks = -(-m // _CHUNK)
    for c in range(n_chunks):
        sl = slice(c * _CHUNK, min(m, (c + 1) * _CHUNK))
        k = sl.stop - sl.start
        rng = _chunk_rng(ss.entropy, ss.spawn_key, c)
        v = rng.random(k)

        if family == "gaussian":
            mean, sd = params
            out[sl] = np.maximum(_take(mean, sl) + _take(sd, sl) * special.ndtri(v), 0.0)
            continue

        if scalar_lam:
            n = np.searchsorted(lam_table, v, side="left")
        else:
            n = _poisson_inverse(v, lam_arr[sl])

        if family == "gamma":
            shape, scale = params
            w = rng.random(k)
            tot = np.zeros(k)
            pos = np.flatnonzero(n > 0)
            tot[pos] = _take(scale, sl, pos) * special.gammaincinv(
                n[pos] * _take(shape, sl, pos), w[pos])
            out[sl] = tot
            continue

        n_max = np.searchsorted(cap_table, v, side="left")
        if not scalar_lam:
            over = lam_arr[sl] > cap
            n_max[over] = n[over]
        n_max = np.maximum(n_max, n)
        if family == "lognormal":
            base = rng.standard_normal(int(n_max.sum()))
        else:
            base = rng.random(int(n_max.sum()))

        n_used = int(n.sum())
        sim = np.repeat(np.arange(k), n)
        block_start = np.cumsum(n_max) - n_max
        used_start = np.cumsum(n) - n
        pos = block_start[sim] + (np.arange(n_used) - used_start[sim])
        b = base[pos]
        p1 = _take(params[0], sl, sim)
        p2 = _take(params[1], sl, sim)
        if family == "lognormal":
            sev = np.exp(p1 + p2 * b)
        else:
            sev = p2 * np.expm1(-np.log1p(-b) / p1)
        out[sl] = np.bincount(sim, weights=sev, minlength=k)
    return out, cap


def simulate_total_losses(portfolio: PortfolioParams, model: SeverityModel, m: int,
                          seed=None, *, intensity_cap: Optional[float] = None) -> "LossSample":
    """Simulate ``m`` compound-Poisson annual totals and return them sorted.

    ``GaussianApprox`` models produce ``m`` normal draws (truncated at zero) and
    ignore the portfolio.  ``intensity_cap`` fixes the size of each simulation's
    severity block; two calls sharing ``seed`` and ``intensity_cap`` are coupled
    through common random numbers as long as both intensities stay below the cap.
    """
    m = check_count(m, "m", minimum=1)
    ss = as_seed_sequence(seed)
    lam = portfolio.expected_claims
    if intensity_cap is not None:
        intensity_cap = check_positive(intensity_cap, "intensity_cap")
    values, cap = _compound_totals(model.family, lam, model.params, m, ss, intensity_cap)
    return LossSample(
        values,
        seed={"entropy": ss.entropy, "spawn_key": list(ss.spawn_key), "intensity_cap": cap},
        meta={"family": model.family, "params": list(model.params),
              "n_policies": portfolio.n_policies, "intensity": portfolio.intensity,
              "horizon": portfolio.horizon},
    )


# ---------------------------------------------------------------------------
# Loss sample


class LossSample:
    """Immutable, ascending-sorted vector of simulated total losses.

    Besides the values it caches prefix sums so that layer expectations over any
    index range cost two binary searches instead of a pass over the sample.
    """

    def __init__(self, values, *, seed=None, meta=None, presorted=False):
        arr = np.array(values, dtype=float).ravel()
        if arr.size == 0:
            raise ValueError("a loss sample needs at least one value")
        if not presorted:
            arr.sort()
        if not np.all(np.isfinite(arr)) or arr[0] < 0:
            raise ValueError("loss values must be finite and >= 0")
        arr.flags.writeable = False
        self._values = arr
        self.seed = seed
        self.meta = dict(meta or {})
        self._csum = None
        self._tilt = {}

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def m(self) -> int:
        return self._values.size

    def __len__(self):
        return self.m

    def __repr__(self):
        return f"LossSample(m={self.m}, mean={self.mean:.4g}, max={self.values[-1]:.4g})"

    @property
    def cumsum(self) -> np.ndarray:
        if self._csum is None:
            self._csum = np.concatenate(([0.0], np.cumsum(self._values)))
        return self._csum

    @property
    def mean(self) -> float:
        return float(self.cumsum[-1] / self.m)

    def quantile(self, eps: float) -> float:
        return quantile(self, eps)

    def range_sum(self, lo: int, hi: int) -> float:
        """Sum of sorted values with 0-based index in [lo, hi)."""
        c = self.cumsum
        return float(c[hi] - c[lo])

    def _split(self, a1, a2):
        x = self._values
        p1 = int(np.searchsorted(x, a1, side="right"))
        p2 = max(int(np.searchsorted(x, a2, side="left")), p1)
        return p1, p2

    def layer_sum(self, a1: float, a2: float, lo: int = 0, hi: Optional[int] = None) -> float:
        """Sum over index range [lo, hi) of ``min(max(x - a1, 0), a2 - a1)``."""
        hi = self.m if hi is None else hi
        p1, p2 = self._split(a1, a2)
        mlo, mhi = max(lo, p1), min(hi, p2)
        total = 0.0
        if mhi > mlo:
            total += self.range_sum(mlo, mhi) - a1 * (mhi - mlo)
        top = hi - max(lo, p2)
        if top > 0:
            total += (a2 - a1) * top
        return total

    def tilted_layer_sums(self, a1: float, a2: float, omega: float) -> Tuple[float, float]:
        """Return ``(sum exp(omega I), sum I exp(omega I))`` over the whole sample."""
        x = self._values
        m = self.m
        p1, p2 = self._split(a1, a2)
        width = a2 - a1
        top = m - p2
        s_e = float(p1)
        s_ie = 0.0
        if top:
            e_top = math.exp(omega * width)
            s_e += top * e_top
            s_ie += top * width * e_top
        if p2 > p1:
            ref = float(x[m // 2])
            if omega * (x[-1] - x[0]) <= 600.0 and omega * abs(ref - a1) <= 600.0:
                e_cum, xe_cum = self._tilt_prefix(omega, ref)
                scale = math.exp(omega * (ref - a1))
                se = e_cum[p2] - e_cum[p1]
                s_e += scale * se
                s_ie += scale * ((xe_cum[p2] - xe_cum[p1]) - a1 * se)
            else:
                seg = x[p1:p2] - a1
                e = np.exp(omega * seg)
                s_e += float(e.sum())
                s_ie += float((seg * e).sum())
        return s_e, s_ie

    def _tilt_prefix(self, omega, ref):
        key = (omega, ref)
        if key not in self._tilt:
            e = np.exp(omega * (self._values - ref))
            self._tilt[key] = (np.concatenate(([0.0], np.cumsum(e))),
                               np.concatenate(([0.0], np.cumsum(self._values * e))))
        return self._tilt[key]

    # -- persistence -------------------------------------------------------

    def save(self, path) -> Path:
        """Write values (CSV one-per-line if the suffix is .csv, raw float64 otherwise)
        plus a JSON sidecar ``<path>.json`` holding seed and parameters."""
        path = Path(path)
        if path.suffix.lower() == ".csv":
            np.savetxt(path, self._values, fmt="%.17g")
            fmt = "csv"
        else:
            self._values.astype("<f8").tofile(path)
            fmt = "f8le"
        header = {"m": self.m, "format": fmt, "seed": self.seed, "meta": self.meta}
        Path(str(path) + ".json").write_text(json.dumps(header, indent=2, default=_jsonable))
        return path

    @classmethod
    def load(cls, path) -> "LossSample":
        path = Path(path)
        sidecar = Path(str(path) + ".json")
        header = json.loads(sidecar.read_text()) if sidecar.exists() else {}
        fmt = header.get("format", "csv" if path.suffix.lower() == ".csv" else "f8le")
        if fmt == "csv":
            values = np.loadtxt(path, dtype=float, ndmin=1)
        else:
            values = np.fromfile(path, dtype="<f8")
        if "m" in header and header["m"] != values.size:
            raise ValueError(f"sidecar says m={header['m']} but file holds {values.size} values")
        return cls(values, seed=header.get("seed"), meta=header.get("meta"))


def _jsonable(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def quantile(sample: LossSample, eps: float) -> float:
    """Order-statistic estimate of the ``1 - eps`` percentile: ``X_(ceil((1-eps) m))``."""
    eps = check_probability(eps)
    return float(sample.values[upper_index(eps, sample.m) - 1])


def quantile_standard_error(sample: LossSample, eps: float, spread: Optional[int] = None) -> float:
    """Asymptotic Monte Carlo standard error of :func:`quantile`.

    ``sqrt(eps (1-eps) / m) / f(x_eps)`` with the density estimated from the
    spacing of neighbouring order statistics.
    """
    eps = check_probability(eps)
    m = sample.m
    k = upper_index(eps, m) - 1
    h = spread or max(int(math.sqrt(m) / 2), 1)
    lo, hi = max(k - h, 0), min(k + h, m - 1)
    gap = sample.values[hi] - sample.values[lo]
    if gap <= 0:
        return 0.0
    density = (hi - lo) / m / gap
    return math.sqrt(eps * (1 - eps) / m) / density


def tail_mean(sample: LossSample, eps: float) -> float:
    """Mean of the largest ``ceil(eps m)`` values."""
    t = tail_count(eps, sample.m)
    return sample.range_sum(sample.m - t, sample.m) / t


# ---------------------------------------------------------------------------
# Estimation


def _gamma_mle(y, tol=1e-8, max_iter=200):
    logs = np.log(y)
    mean = float(y.mean())
    s = math.log(mean) - float(logs.mean())
    if s <= 1e-14:
        raise DegenerateDataError("all claim sizes are equal; the Gamma shape is unidentified")
    # Minka-style starting value from the moment approximation of the digamma equation
    a = (3.0 - s + math.sqrt((s - 3.0) ** 2 + 24.0 * s)) / (12.0 * s)
    for _ in range(max_iter):
        score = math.log(a) - float(special.digamma(a)) - s
        if abs(score) < tol:
            return Gamma(a, mean / a)
        slope = 1.0 / a - float(special.polygamma(1, a))
        step = score / slope
        a_new = a - step
        if a_new <= 0:
            a_new = a / 2
        a = a_new
    raise ConvergenceError(f"Gamma MLE did not converge in {max_iter} iterations")


def _pareto_profile_score(log_b, y):
    b = math.exp(log_b)
    t = np.log1p(y / b).sum()
    alpha = y.size / t
    return -y.size + (alpha + 1.0) * float((y / (b + y)).sum())


def _pareto_mle(y, tol=1e-8, max_iter=200):
    n = y.size
    if np.ptp(y) == 0:
        raise DegenerateDataError("all claim sizes are equal; the Pareto parameters are unidentified")
    mean = float(y.mean())
    var = float(y.var())
    ratio = var / mean ** 2
    a0 = 2 * ratio / (ratio - 1) if ratio > 1.05 else 3.0
    b0 = max(mean * (a0 - 1), 1e-8 * mean)

    lo = hi = math.log(b0)
    f_lo = f_hi = _pareto_profile_score(lo, y)
    it = 0
    # score > 0 means the profile likelihood still increases with the scale
    while f_hi > 0 and it < max_iter:
        hi += 1.0
        f_hi = _pareto_profile_score(hi, y)
        it += 1
    while f_lo < 0 and it < max_iter:
        lo -= 1.0
        f_lo = _pareto_profile_score(lo, y)
        it += 1
    if f_hi > 0 or f_lo < 0:
        raise ConvergenceError(
            "Pareto MLE did not bracket a root within "
            f"{max_iter} iterations (data may be lighter-tailed than any Pareto)")
    if f_lo == 0:
        root = lo
    elif f_hi == 0:
        root = hi
    else:
        root, info = optimize.brentq(_pareto_profile_score, lo, hi, args=(y,), xtol=1e-13,
                                     maxiter=max_iter, full_output=True, disp=False)
        if not info.converged:
            raise ConvergenceError("Pareto MLE root search failed")
    b = math.exp(root)
    if abs(_pareto_profile_score(root, y)) > tol * n:
        raise ConvergenceError("Pareto MLE score did not reach tolerance")
    alpha = n / float(np.log1p(y / b).sum())
    return Pareto(alpha, b)


def fit_mle(family: str, data: ClaimHistory) -> Tuple[float, SeverityModel]:
    """Maximum-likelihood estimates ``(intensity, severity model)`` from a claim history.

    The intensity estimate is ``n / exposure``.  Lognormal is closed form (1/n
    variance); Gamma solves the digamma equation by Newton's method; Pareto
    profiles out the shape and root-finds the scale.
    """
    family = family.lower()
    if family not in CLAIM_FAMILIES:
        raise ValueError(f"cannot fit family {family!r} to claim data")
    y = data.y
    if y.size < 2:
        raise DegenerateDataError(f"need at least 2 claims to fit {family}, got {y.size}")
    mu = data.n / data.exposure
    if family == "lognormal":
        logs = np.log(y)
        sd = float(logs.std())
        if sd == 0:
            raise DegenerateDataError("all claim sizes are equal; log-sd is zero")
        return mu, Lognormal(float(logs.mean()), sd)
    if family == "gamma":
        return mu, _gamma_mle(y)
    return mu, _pareto_mle(y)


def simulate_history(intensity: float, model: SeverityModel, n_policies: int,
                     horizon: float = 1.0, rng=None) -> ClaimHistory:
    """Synthetic claim record: ``n ~ Poisson(n_policies * intensity * horizon)`` claims."""
    intensity = check_nonnegative(intensity, "intensity")
    n_policies = check_count(n_policies, "n_policies", minimum=1)
    horizon = check_positive(horizon, "horizon")
    rng = as_generator(rng)
    n = int(rng.poisson(n_policies * intensity * horizon))
    return ClaimHistory(sample_severity(model, n, rng), n_policies * horizon)
