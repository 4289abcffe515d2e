"""Configuration-driven experiment runner producing CSV tables and JSON manifests.

Every run is fully determined by an :class:`ExperimentConfig`.  CSV files hold
only results and seeds, so repeated runs are byte-identical; timing and library
versions go to a ``<name>.manifest.json`` file written next to each CSV.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .bayes import JeffreysPrior, bayes_degradation
from .contract import LayerContract
from .criterion import CriterionConfig, NonPositiveSurplus, criterion_ratio
from .degradation import (
    asymptotic_smooth,
    asymptotic_var,
    bootstrap_degradation,
    rate_fit,
    sample_size_for_rmse,
    smooth_inputs,
)
from .losses import (
    GaussianApprox,
    PortfolioParams,
    fit_mle,
    make_severity,
    quantile,
    quantile_standard_error,
    simulate_history,
    simulate_total_losses,
)
from .optimize import optimize_contract
from .premium import Expected, MixedEsscher, TiltOverflowError
from . import settings

__all__ = ["ExperimentConfig", "TABLES", "run_table", "run_figure_sweep", "run_asymptotics",
           "run_simulate", "run_optimize", "run_bootstrap", "run_bayes"]

MODEL_ORDER = ("gaussian", "gamma", "lognormal", "pareto")


def _default(value):
    return field(default_factory=lambda: list(value))


@dataclass
class ExperimentConfig:
    """Flat, JSON-compatible description of an experiment.

    ``family`` selects the model for single-model commands; ``models`` lists the
    models covered by multi-model tables.  ``severity_params`` overrides the
    default parameters of ``family``.
    """

    family: str = "gamma"
    severity_params: Optional[List[float]] = None
    models: List[str] = _default(MODEL_ORDER)
    n_policies: int = 1000
    intensity: float = 0.05
    horizon: float = 1.0
    loading: float = 0.1
    reinsurer_loading: float = 0.2
    capital_cost: float = 0.0
    eps: float = 0.01
    principle: str = "expected"
    tilt: float = 0.001
    risk_measure: str = "VaR"
    m: int = 100_000
    reps: int = 20
    n_grid: List[float] = _default((5000, 500, 50))
    fit_observed: bool = True
    history_policies: List[int] = _default((100_000, 10_000, 1_000))
    prior: str = "informative"
    bayes_m: int = 100_000
    bayes_reps: int = 50
    loadings_grid: List[float] = _default((0.2, 0.3, 0.4, 0.5, 0.6, 0.7))
    omega_grid: List[float] = _default((0.001, 0.002, 0.003, 0.004, 0.005, 0.006))
    a1_min: float = 300.0
    a1_max: float = 800.0
    a1_points: int = 51
    rmse_targets: List[float] = _default((0.25, 0.15, 0.05))
    samplesize_models: List[List[float]] = field(default_factory=lambda: [[4.0, 2.5], [0.44, 22.5]])
    samplesize_bounds: List[float] = _default((500.0, 500_000.0))
    seed: int = 20240601
    n_jobs: int = 1
    out: str = "results"

    def __post_init__(self):
        self.validate()

    # -- construction ----------------------------------------------------------

    @classmethod
    def from_dict(cls, data: Dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown configuration keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> Dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def replace(self, **changes) -> "ExperimentConfig":
        data = self.to_dict()
        unknown = sorted(set(changes) - set(data))
        if unknown:
            raise ValueError(f"unknown configuration keys: {', '.join(unknown)}")
        data.update(changes)
        return ExperimentConfig(**data)

    def validate(self):
        """Build every derived object once so invalid values fail before any work starts."""
        for name in ("models",):
            bad = [mdl for mdl in getattr(self, name) if mdl not in MODEL_ORDER]
            if bad:
                raise ValueError(f"unknown model(s) {bad}; expected some of {MODEL_ORDER}")
        if self.family not in MODEL_ORDER:
            raise ValueError(f"unknown family {self.family!r}")
        if self.principle not in ("expected", "esscher"):
            raise ValueError("principle must be 'expected' or 'esscher'")
        if self.prior not in ("informative", "jeffreys"):
            raise ValueError("prior must be 'informative' or 'jeffreys'")
        for name in ("m", "reps", "bayes_m", "bayes_reps", "a1_points", "n_jobs"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or (v < 1 and name != "n_jobs") or v == 0:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")
        if not self.a1_min < self.a1_max:
            raise ValueError("a1_min must be < a1_max")
        if any(n <= 0 for n in self.n_grid) or any(j < 1 for j in self.history_policies):
            raise ValueError("history sizes must be positive")
        if any(not 0 < t < 1 for t in self.rmse_targets):
            raise ValueError("rmse targets must lie in (0, 1)")
        self.portfolio()
        self.model()
        self.criterion()

    # -- derived objects -------------------------------------------------------

    def portfolio(self) -> PortfolioParams:
        return PortfolioParams(self.n_policies, self.intensity, self.horizon)

    def model(self, family: Optional[str] = None):
        family = family or self.family
        if family == self.family and self.severity_params is not None:
            return make_severity(family, *self.severity_params)
        if family == "gaussian":
            pf = self.portfolio()
            lam = pf.expected_claims
            mean, sd = settings.NOMINAL_CLAIM_MEAN, settings.NOMINAL_CLAIM_SD
            return GaussianApprox(lam * mean, math.sqrt(lam * (mean ** 2 + sd ** 2)))
        return settings.SEVERITIES[family]

    def principle_obj(self, principle: Optional[str] = None, loading=None, tilt=None):
        principle = principle or self.principle
        loading = self.reinsurer_loading if loading is None else loading
        if principle == "expected":
            return Expected(loading)
        return MixedEsscher(loading, self.tilt if tilt is None else tilt)

    def criterion(self, **kw) -> CriterionConfig:
        measure = kw.pop("risk_measure", self.risk_measure)
        return CriterionConfig(self.loading, self.capital_cost, self.eps, measure,
                               self.principle_obj(**kw))

    def sub_seed(self, *key) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.seed, spawn_key=tuple(int(k) for k in key))


# ---------------------------------------------------------------------------
# Output


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def _write(name: str, header: Sequence[str], rows: List[Sequence], cfg: ExperimentConfig,
           started: float, out_dir=None, extra: Optional[Dict] = None) -> Path:
    out = Path(out_dir or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    manifest = {
        "table": name,
        "csv": path.name,
        "rows": len(rows),
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "wall_time_s": round(time.perf_counter() - started, 3),
        "versions": {
            "reinsopt": __version__,
            "numpy": np.__version__,
            "scipy": __import__("scipy").__version__,
            "python": platform.python_version(),
        },
    }
    if extra:
        manifest.update(extra)
    (out / f"{name}.manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def _sample(cfg, family, key, m=None):
    mdl = cfg.model(family)
    return simulate_total_losses(cfg.portfolio(), mdl, m or cfg.m, seed=cfg.sub_seed(*key))


# ---------------------------------------------------------------------------
# Tables


def _reserves(cfg, out_dir):
    t0 = time.perf_counter()
    rows = []
    for i, fam in enumerate(cfg.models):
        s = _sample(cfg, fam, (0, MODEL_ORDER.index(fam)))
        mdl = cfg.model(fam)
        rows.append([fam, mdl.params[0], mdl.params[1], s.mean, float(s.values.std()),
                     quantile(s, 0.01), quantile(s, 0.005), quantile_standard_error(s, 0.01),
                     quantile_standard_error(s, 0.005), cfg.m, cfg.seed])
    header = ["model", "param1", "param2", "mean", "sd", "reserve_99", "reserve_99_5",
              "se_99", "se_99_5", "m", "seed"]
    return _write("reserves", header, rows, cfg, t0, out_dir)


def _optimum_row(sample, config):
    res = optimize_contract(sample, config)
    return [res.contract.lower, res.contract.width, res.value, res.evaluations, res.converged]


def _optima(cfg, out_dir):
    t0 = time.perf_counter()
    rows = []
    for fam in cfg.models:
        s = _sample(cfg, fam, (0, MODEL_ORDER.index(fam)))
        for principle in ("expected", "esscher"):
            rows.append([fam, principle] + _optimum_row(s, cfg.criterion(principle=principle))
                        + [cfg.m, cfg.seed])
    header = ["model", "principle", "a1", "a2_minus_a1", "ratio", "evaluations", "converged",
              "m", "seed"]
    return _write("optima", header, rows, cfg, t0, out_dir)


def _sweep(cfg, out_dir, name, column, grid, make_config):
    t0 = time.perf_counter()
    samples = {fam: _sample(cfg, fam, (0, MODEL_ORDER.index(fam))) for fam in cfg.models}
    rows = []
    for value in grid:
        for fam in cfg.models:
            rows.append([value, fam] + _optimum_row(samples[fam], make_config(value))
                        + [cfg.m, cfg.seed])
    header = [column, "model", "a1", "a2_minus_a1", "ratio", "evaluations",
              "converged", "m", "seed"]
    return _write(name, header, rows, cfg, t0, out_dir)


def _observed_theta(cfg, family, n, key):
    """Fit parameters to one synthetic observed history of ``n`` expected claims."""
    pf = cfg.portfolio()
    model = cfg.model(family)
    if not cfg.fit_observed:
        return pf, model
    rng = np.random.Generator(np.random.PCG64(cfg.sub_seed(*key)))
    j_h = max(int(round(n / (pf.intensity * pf.horizon))), 1)
    mu, fitted = fit_mle(family, simulate_history(pf.intensity, model, j_h, pf.horizon, rng))
    return pf.with_intensity(mu), fitted


def _bootstrap_rows(cfg, families, principle=None):
    rows = []
    for fam in families:
        stats = []
        for j, n in enumerate(cfg.n_grid):
            pf, mdl = _observed_theta(cfg, fam, n, (3, MODEL_ORDER.index(fam), j))
            st = bootstrap_degradation(pf, mdl, cfg.criterion(principle=principle), n, cfg.reps,
                                       m=cfg.m, seed=cfg.sub_seed(2, MODEL_ORDER.index(fam), j),
                                       n_jobs=cfg.n_jobs)
            stats.append(st)
        slope = rate_fit(stats) if len({s.n for s in stats}) > 1 and all(s.mean > 0 for s in stats) \
            else float("nan")
        for st in stats:
            meta = st.meta
            rows.append(["bootstrap", fam, principle or cfg.principle, int(round(st.n)), st.reps,
                         meta["mean_lower_star"], meta["mean_upper_star"], meta["mean_value_star"],
                         meta["baseline_value"], st.mean, st.sd, st.rmse, st.failures, slope,
                         cfg.m, cfg.seed])
    return rows


BOOT_HEADER = ["method", "model", "principle", "n", "reps", "mean_a1_star", "mean_a2_star",
               "mean_ratio_star", "ratio_hat", "mean_D", "sd_D", "rmse_D", "failures", "slope",
               "m", "seed"]


def _bootstrap(cfg, out_dir):
    t0 = time.perf_counter()
    families = [f for f in cfg.models if f != "gaussian"]
    return _write("bootstrap", BOOT_HEADER, _bootstrap_rows(cfg, families), cfg, t0, out_dir)


def _samplesize(cfg, out_dir):
    t0 = time.perf_counter()
    rows = []
    pf = cfg.portfolio()
    for i, params in enumerate(cfg.samplesize_models):
        mdl = make_severity("gamma", *params)
        for k, target in enumerate(cfg.rmse_targets):
            hist: list = []
            n = sample_size_for_rmse(pf, mdl, cfg.criterion(principle="expected"), target,
                                     reps=cfg.reps, m=cfg.m, seed=cfg.sub_seed(4, i),
                                     n_bounds=tuple(cfg.samplesize_bounds), n_jobs=cfg.n_jobs,
                                     history=hist)
            rmse = next(r for nn, r, *_ in hist if int(round(nn)) == n)
            rows.append(["gamma", params[0], params[1], target, n, rmse, len(hist), cfg.reps,
                         cfg.m, cfg.seed])
    header = ["model", "shape", "scale", "target_rmse", "n", "rmse_D", "probes", "reps", "m", "seed"]
    return _write("samplesize", header, rows, cfg, t0, out_dir)


def _bayes_rows(cfg, families, prior_name):
    rows = []
    pf = cfg.portfolio()
    for fam in families:
        prior = settings.INFORMATIVE_PRIORS[fam] if prior_name == "informative" else JeffreysPrior()
        for j_h in cfg.history_policies:
            st = bayes_degradation(pf, cfg.model(fam), prior, j_h, cfg.criterion(principle="expected"),
                                   m=cfg.bayes_m, reps=cfg.bayes_reps,
                                   seed=cfg.sub_seed(5, MODEL_ORDER.index(fam)), n_jobs=cfg.n_jobs)
            meta = st.meta
            rows.append([fam, prior_name, j_h, meta["mean_lower_star"], meta["mean_upper_star"],
                         meta["mean_value_star"], meta["baseline_value"], st.mean, st.sd,
                         st.failures, st.reps, cfg.bayes_m, cfg.seed])
    return rows


BAYES_HEADER = ["model", "prior", "history_policies", "mean_a1", "mean_a2", "mean_ratio",
                "ratio_true", "mean_D", "sd_D", "failures", "reps", "m", "seed"]


def _bayes_table(prior_name):
    def run(cfg, out_dir):
        t0 = time.perf_counter()
        families = [f for f in cfg.models if f != "gaussian"]
        return _write(f"bayes-{prior_name}", BAYES_HEADER, _bayes_rows(cfg, families, prior_name),
                      cfg, t0, out_dir)
    return run


TABLES: Dict[str, Callable] = {
    "reserves": _reserves,
    "optima": _optima,
    "loadings-sweep": lambda cfg, out: _sweep(
        cfg, out, "loadings-sweep", "reinsurer_loading", cfg.loadings_grid,
        lambda v: cfg.criterion(principle="expected", loading=v)),
    "omega-sweep": lambda cfg, out: _sweep(
        cfg, out, "omega-sweep", "tilt", cfg.omega_grid,
        lambda v: cfg.criterion(principle="esscher", tilt=v)),
    "bootstrap": _bootstrap,
    "samplesize": _samplesize,
    "bayes-informative": _bayes_table("informative"),
    "bayes-jeffreys": _bayes_table("jeffreys"),
}


def run_table(table_id: str, cfg: ExperimentConfig, out_dir=None) -> Path:
    """Run one of :data:`TABLES` and return the CSV path."""
    try:
        runner = TABLES[table_id]
    except KeyError:
        raise ValueError(f"unknown table {table_id!r}; choose from {sorted(TABLES)}") from None
    return runner(cfg, out_dir)


def run_figure_sweep(cfg: ExperimentConfig, a1_grid=None, out_dir=None) -> Path:
    """Criterion as a function of ``a1`` with ``a2`` pinned at each model's ``x_eps``."""
    t0 = time.perf_counter()
    grid = np.linspace(cfg.a1_min, cfg.a1_max, cfg.a1_points) if a1_grid is None \
        else np.asarray(a1_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("a1 grid is empty")
    config = cfg.criterion(principle="expected")
    rows = []
    for fam in cfg.models:
        s = _sample(cfg, fam, (0, MODEL_ORDER.index(fam)))
        x_eps = quantile(s, config.eps)
        for a1 in grid:
            a1 = float(a1)
            try:
                ratio = criterion_ratio(s, LayerContract(min(a1, x_eps), x_eps), config)
                feasible = a1 <= x_eps
            except (NonPositiveSurplus, TiltOverflowError):
                ratio, feasible = "", False
            rows.append([fam, a1, x_eps, ratio if feasible else "", feasible, cfg.m, cfg.seed])
    header = ["model", "a1", "a2", "ratio", "feasible", "m", "seed"]
    return _write("figure-sweep", header, rows, cfg, t0, out_dir)


def run_asymptotics(cfg: ExperimentConfig, out_dir=None) -> Path:
    """Bootstrap against the large-sample formulas for VaR and CVaR on ``cfg.family``."""
    t0 = time.perf_counter()
    fam = cfg.family
    pf, mdl = cfg.portfolio(), cfg.model(fam)
    rows = []
    for measure in ("VaR", "CVaR"):
        config = cfg.criterion(risk_measure=measure)
        boot, asym = [], []
        for j, n in enumerate(cfg.n_grid):
            st = bootstrap_degradation(pf, mdl, config, n, cfg.reps, m=cfg.m,
                                       seed=cfg.sub_seed(6, j), n_jobs=cfg.n_jobs)
            boot.append(st)
        if measure == "VaR":
            laws = [asymptotic_var(pf, mdl, config, n, m=cfg.m, seed=cfg.sub_seed(7))[2]]
            asym = [(laws[0].mean(n), laws[0].sd(n)) for n in cfg.n_grid]
        else:
            inputs = smooth_inputs(pf, mdl, config, m=cfg.m, seed=cfg.sub_seed(7))
            asym = [asymptotic_smooth(inputs, n) for n in cfg.n_grid]
        ns = [st.n for st in boot]
        boot_slope = rate_fit(boot) if len(set(ns)) > 1 and all(s.mean > 0 for s in boot) else float("nan")
        asym_slope = rate_fit(ns, [a[0] for a in asym]) if len(set(ns)) > 1 else float("nan")
        for st, (am, asd) in zip(boot, asym):
            rows.append([fam, measure, cfg.principle, int(round(st.n)), st.reps, st.mean, st.sd, am, asd,
                         boot_slope, asym_slope, cfg.m, cfg.seed])
    header = ["model", "risk_measure", "principle", "n", "reps", "boot_mean_D", "boot_sd_D",
              "asym_mean_D", "asym_sd_D", "boot_slope", "asym_slope", "m", "seed"]
    return _write("asymptotics", header, rows, cfg, t0, out_dir)


# ---------------------------------------------------------------------------
# Single-model commands


def run_simulate(cfg: ExperimentConfig, out_dir=None) -> Path:
    t0 = time.perf_counter()
    out = Path(out_dir or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    s = _sample(cfg, cfg.family, (0, MODEL_ORDER.index(cfg.family)))
    s.save(out / f"losses-{cfg.family}.f8")
    rows = [[cfg.family, s.m, s.mean, float(s.values.std()), quantile(s, cfg.eps), cfg.seed]]
    return _write(f"simulate-{cfg.family}", ["model", "m", "mean", "sd", "quantile", "seed"], rows,
                  cfg, t0, out_dir)


def run_optimize(cfg: ExperimentConfig, out_dir=None) -> Path:
    t0 = time.perf_counter()
    s = _sample(cfg, cfg.family, (0, MODEL_ORDER.index(cfg.family)))
    row = [cfg.family, cfg.principle, cfg.risk_measure] + _optimum_row(s, cfg.criterion()) + [cfg.m, cfg.seed]
    header = ["model", "principle", "risk_measure", "a1", "a2_minus_a1", "ratio", "evaluations",
              "converged", "m", "seed"]
    return _write(f"optimize-{cfg.family}", header, [row], cfg, t0, out_dir)


def run_bootstrap(cfg: ExperimentConfig, out_dir=None) -> Path:
    t0 = time.perf_counter()
    return _write(f"bootstrap-{cfg.family}", BOOT_HEADER,
                  _bootstrap_rows(cfg, [cfg.family], cfg.principle), cfg, t0, out_dir)


def run_bayes(cfg: ExperimentConfig, out_dir=None) -> Path:
    t0 = time.perf_counter()
    return _write(f"bayes-{cfg.family}-{cfg.prior}", BAYES_HEADER,
                  _bayes_rows(cfg, [cfg.family], cfg.prior), cfg, t0, out_dir)
