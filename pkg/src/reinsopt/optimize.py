"""Derivative-free minimisation of the criterion over one-layer contracts.

The contract is parameterised as ``(a1, width)`` so that ``a2 >= a1`` becomes a
simple sign constraint.  Infeasible points (negative coordinates, ``G_I <= 0``,
or a tilt too large to exponentiate) receive a large constant penalty, which
keeps the objective total for Nelder-Mead.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .contract import LayerContract
from .criterion import CriterionConfig, NonPositiveSurplus, criterion_ratio
from .losses import LossSample, quantile
from .premium import TiltOverflowError

__all__ = [
    "PENALTY",
    "OptimResult",
    "AllInfeasible",
    "nelder_mead",
    "grid_bisect_verify",
    "contract_objective",
    "optimize_contract",
    "DEFAULT_JITTER",
]

PENALTY = 1e9
DEFAULT_JITTER = ((1.0, 1.0), (1.15, 0.8), (0.85, 1.25))


class AllInfeasible(RuntimeError):
    """No evaluated contract had positive expected surplus."""


@dataclass
class OptimResult:
    """Outcome of a minimisation.

    Attributes:
        x: Best point found.
        value: Objective at ``x``.
        evaluations: Number of objective calls.
        converged: Whether the stopping rule was met before the budget ran out.
        contract: Best contract when the objective was a criterion.
        restart_values: Best value of each restart, if restarts were used.
    """

    x: np.ndarray
    value: float
    evaluations: int
    converged: bool
    contract: Optional[LayerContract] = None
    restart_values: List[float] = field(default_factory=list)


def nelder_mead(f: Callable[[np.ndarray], float], start, *, step=None, ftol: float = 1e-6,
                max_evals: int = 2000) -> OptimResult:
    """Standard Nelder-Mead simplex search.

    Reflection 1, expansion 2, contraction 0.5, shrink 0.5.  Stops once the
    spread of simplex values falls below ``ftol * (1 + |best|)``.

    Args:
        f: Objective on R^d; must return a finite float everywhere.
        start: Initial point.
        step: Per-coordinate initial simplex offsets; defaults to 10% of each
            coordinate (0.1 for zero coordinates).
        ftol: Relative value-spread tolerance.
        max_evals: Evaluation budget.
    """
    x0 = np.asarray(start, dtype=float).ravel()
    d = x0.size
    if step is None:
        step = np.where(x0 != 0, 0.1 * np.abs(x0), 0.1)
    step = np.broadcast_to(np.asarray(step, dtype=float), (d,))

    evals = 0

    def fe(x):
        nonlocal evals
        evals += 1
        return float(f(x))

    simplex = np.vstack([x0] + [x0 + step[i] * np.eye(d)[i] for i in range(d)])
    fvals = np.array([fe(p) for p in simplex])
    converged = False
    while True:
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        if fvals[-1] - fvals[0] < ftol * (1.0 + abs(fvals[0])):
            converged = True
            break
        if evals >= max_evals:
            break
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + (centroid - worst)
        fr = fe(xr)
        if fr < fvals[0]:
            xe = centroid + 2.0 * (centroid - worst)
            fe_ = fe(xe)
            if fe_ < fr:
                simplex[-1], fvals[-1] = xe, fe_
            else:
                simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[-1]:
            xc = centroid + 0.5 * (xr - centroid)
            fc = fe(xc)
            if fc <= fr:
                simplex[-1], fvals[-1] = xc, fc
                continue
        else:
            xc = centroid + 0.5 * (worst - centroid)
            fc = fe(xc)
            if fc < fvals[-1]:
                simplex[-1], fvals[-1] = xc, fc
                continue
        best = simplex[0]
        for i in range(1, d + 1):
            simplex[i] = best + 0.5 * (simplex[i] - best)
            fvals[i] = fe(simplex[i])
    return OptimResult(simplex[0].copy(), float(fvals[0]), evals, converged)


def grid_bisect_verify(f: Callable[[np.ndarray], float], bounds: Sequence[Tuple[float, float]], *,
                       grid: int = 50, passes: int = 30) -> OptimResult:
    """Brute-force minimiser used to cross-check :func:`nelder_mead`.

    Scans a ``grid``-per-axis lattice over ``bounds``, then refines around the best
    node by probing every neighbour at +-step until none improves, halving the step
    after each pass.
    """
    bounds = np.asarray(bounds, dtype=float)
    if bounds.ndim != 2 or bounds.shape[1] != 2 or not np.all(np.isfinite(bounds)):
        raise ValueError("bounds must be a finite (d, 2) array")
    lo, hi = bounds[:, 0], bounds[:, 1]
    axes = [np.linspace(a, b, grid) for a, b in bounds]
    evals = 0
    best_x, best_f = None, np.inf
    for point in itertools.product(*axes):
        x = np.array(point)
        v = float(f(x))
        evals += 1
        if v < best_f:
            best_x, best_f = x, v
    step = (hi - lo) / max(grid - 1, 1)
    # diagonal neighbours let the search follow ridges such as a fixed upper limit
    moves = [np.array(d) for d in itertools.product((-1.0, 0.0, 1.0), repeat=len(step)) if any(d)]
    for _ in range(passes):
        improved = True
        while improved:
            improved = False
            for d in moves:
                x = np.clip(best_x + d * step, lo, hi)
                if np.array_equal(x, best_x):
                    continue
                v = float(f(x))
                evals += 1
                if v < best_f:
                    best_x, best_f, improved = x, v, True
        step = step / 2.0
    return OptimResult(best_x, best_f, evals, True)


def contract_objective(sample: LossSample, config: CriterionConfig) -> Callable[[np.ndarray], float]:
    """Criterion as a total function of ``(a1, width)`` with penalty outside the feasible set."""

    def f(z):
        a1, w = float(z[0]), float(z[1])
        if not (a1 >= 0 and w >= 0):
            return PENALTY
        try:
            return criterion_ratio(sample, LayerContract(a1, a1 + w), config)
        except (NonPositiveSurplus, TiltOverflowError):
            return PENALTY

    return f


def _feasible_start(f, sample: LossSample, config: CriterionConfig, fallback, points: int = 12):
    x_eps = quantile(sample, config.eps)
    best, best_val = np.asarray(fallback, dtype=float), PENALTY
    for a1 in np.linspace(0.05, 0.95, points) * x_eps:
        for w in np.linspace(0.05, 1.0, points) * (sample.values[-1] - a1):
            val = f((a1, w))
            if val < best_val:
                best, best_val = np.array([a1, w]), val
    return best


def optimize_contract(sample: LossSample, config: CriterionConfig, *,
                      jitter: Sequence[Tuple[float, float]] = DEFAULT_JITTER,
                      start=None, ftol: float = 1e-6, max_evals: int = 2000) -> OptimResult:
    """Minimise the criterion over one-layer contracts.

    Nelder-Mead is run from each start ``(f1 * 0.5 x_eps, f2 * 0.4 x_eps)`` for
    ``(f1, f2)`` in ``jitter`` and the best run is returned.  A start with
    nonpositive surplus is moved to the best point of a coarse feasibility grid,
    since the simplex cannot leave a flat penalty region.

    Raises:
        AllInfeasible: if every run ended at the penalty value.
    """
    f = contract_objective(sample, config)
    if start is None:
        x_eps = quantile(sample, config.eps)
        start = (0.5 * x_eps, 0.4 * x_eps)
    start = np.asarray(start, dtype=float)
    best = None
    values = []
    total = 0
    for f1, f2 in jitter:
        x0 = start * (f1, f2)
        if f(x0) >= PENALTY:
            x0 = _feasible_start(f, sample, config, x0)
        res = nelder_mead(f, x0, ftol=ftol, max_evals=max_evals)
        total += res.evaluations
        values.append(res.value)
        if best is None or res.value < best.value:
            best = res
    if best.value >= PENALTY:
        raise AllInfeasible("no feasible contract found from any start")
    a1, w = best.x
    return OptimResult(best.x, best.value, total, best.converged,
                       LayerContract(float(a1), float(a1 + w)), values)
