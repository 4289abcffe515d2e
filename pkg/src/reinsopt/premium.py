"""Reinsurance premium principles, the market-factor weight W(u) and the K-function.

The market factor is specialised to ``Z = I(X)``, so under the mixed Esscher
principle ``W(u) = (1 + gamma_r) exp(omega I(F^-1(u))) / E exp(omega I(X))`` is a
deterministic transform of the loss quantile.  All expectations are taken over
the empirical distribution of a :class:`~reinsopt.losses.LossSample`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar, Tuple, Union

import numpy as np

from ._validation import check_nonnegative, check_positive
from .contract import LayerContract, ceded
from .losses import LossSample

__all__ = [
    "Expected",
    "MixedEsscher",
    "PremiumPrinciple",
    "TiltOverflowError",
    "TILT_LIMIT",
    "premium",
    "layer_expectations",
    "w_function",
    "k_function",
]

TILT_LIMIT = 500.0


class TiltOverflowError(ValueError):
    """``omega * (a2 - a1)`` is too large for ``exp`` to be evaluated safely."""


@dataclass(frozen=True)
class Expected:
    """Expected-value principle: ``pi_I = (1 + loading) E I(X)``."""

    loading: float = 0.2
    name: ClassVar[str] = "expected"

    def __post_init__(self):
        object.__setattr__(self, "loading", check_positive(self.loading, "loading"))

    @property
    def tilt(self) -> float:
        return 0.0


@dataclass(frozen=True)
class MixedEsscher:
    """Mixed Esscher principle ``(1 + loading) E[I e^{tilt I}] / E[e^{tilt I}]``."""

    loading: float = 0.2
    tilt: float = 0.001
    name: ClassVar[str] = "esscher"

    def __post_init__(self):
        object.__setattr__(self, "loading", check_positive(self.loading, "loading"))
        object.__setattr__(self, "tilt", check_nonnegative(self.tilt, "tilt"))


PremiumPrinciple = Union[Expected, MixedEsscher]


def _effective_width(sample: LossSample, contract: LayerContract) -> float:
    top = min(contract.upper, float(sample.values[-1]))
    return max(top - contract.lower, 0.0)


def layer_expectations(principle: PremiumPrinciple, sample: LossSample,
                       contract: LayerContract) -> Tuple[float, float, float]:
    """Return ``(E I, pi_I, E e^{omega I})`` over the sample.

    Raises:
        TiltOverflowError: if ``omega`` times the active layer width exceeds 500.
    """
    m = sample.m
    mean_i = sample.layer_sum(contract.lower, contract.upper) / m
    omega = principle.tilt
    if omega == 0.0:
        return mean_i, (1.0 + principle.loading) * mean_i, 1.0
    if omega * _effective_width(sample, contract) > TILT_LIMIT:
        raise TiltOverflowError(
            f"tilt {omega} times layer width exceeds {TILT_LIMIT}; exp() would overflow")
    s_e, s_ie = sample.tilted_layer_sums(contract.lower, contract.upper, omega)
    return mean_i, (1.0 + principle.loading) * s_ie / s_e, s_e / m


def premium(principle: PremiumPrinciple, sample: LossSample, contract: LayerContract) -> float:
    """Monte Carlo reinsurance premium ``pi_I`` for the layer."""
    return layer_expectations(principle, sample, contract)[1]


def _order_index(u, m):
    """1-based index ``ceil(u m)`` clamped to [1, m], elementwise."""
    u = np.asarray(u, dtype=float)
    if np.any((u < 0) | (u > 1)) or np.any(np.isnan(u)):
        raise ValueError("u must lie in [0, 1]")
    um = u * m
    r = np.round(um)
    um = np.where(np.abs(um - r) <= 1e-9 * np.maximum(1.0, np.abs(um)), r, um)
    return np.clip(np.ceil(um).astype(np.int64), 1, m)


def _weights(principle, contract, sample):
    """Per-order-statistic weights ``W_j`` for j = 1..m."""
    m = sample.m
    if principle.tilt == 0.0:
        return np.full(m, 1.0 + principle.loading)
    _, _, norm = layer_expectations(principle, sample, contract)
    return (1.0 + principle.loading) * np.exp(principle.tilt * ceded(contract, sample.values)) / norm


def w_function(principle: PremiumPrinciple, contract: LayerContract, sample: LossSample, u):
    """Market-factor weight ``W(u)`` evaluated at the empirical quantile ``F^-1(u)``."""
    scalar = np.ndim(u) == 0
    idx = _order_index(u, sample.m)
    if principle.tilt == 0.0:
        out = np.full(idx.shape, 1.0 + principle.loading)
    else:
        _, _, norm = layer_expectations(principle, sample, contract)
        x = sample.values[idx - 1]
        out = (1.0 + principle.loading) * np.exp(principle.tilt * ceded(contract, x)) / norm
    return float(out) if scalar else out


def k_function(principle: PremiumPrinciple, contract: LayerContract, sample: LossSample, u):
    """``K(u) = integral_u^1 (W(v) - 1) dv``.

    ``W`` is a step function of ``v`` on the cells ``((j-1)/m, j/m]``, so the
    integral is evaluated exactly from suffix sums rather than by quadrature.
    The Expected principle returns ``loading * (1 - u)``.
    """
    scalar = np.ndim(u) == 0
    u_arr = np.asarray(u, dtype=float)
    if principle.tilt == 0.0:
        _order_index(u_arr, sample.m)  # range check
        out = principle.loading * (1.0 - u_arr)
    else:
        m = sample.m
        w = _weights(principle, contract, sample)
        # suffix[j] = sum of W over cells j+1..m (0-based: w[j:])
        suffix = np.concatenate((np.cumsum(w[::-1])[::-1], [0.0]))
        j0 = _order_index(u_arr, m)
        integral = w[j0 - 1] * (j0 / m - u_arr) + suffix[j0] / m
        out = integral - (1.0 - u_arr)
        out = np.where(u_arr >= 1.0, 0.0, out)
    return float(out) if scalar else out
