"""The one-layer treaty ``I(x) = min(max(x - a1, 0), a2 - a1)``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_scalar

__all__ = ["LayerContract", "ceded"]


@dataclass(frozen=True)
class LayerContract:
    """Retention ``lower`` (a1) and upper limit ``upper`` (a2); ``upper`` may be ``inf``
    for an unlimited stop-loss cover."""

    lower: float
    upper: float

    def __post_init__(self):
        lower = check_scalar(self.lower, "lower", lower=0.0)
        upper = float(self.upper)
        if math.isnan(upper) or upper < lower:
            raise ValueError(f"need 0 <= lower <= upper, got ({lower}, {upper})")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @classmethod
    def from_width(cls, lower, width) -> "LayerContract":
        return cls(lower, lower + width)

    @classmethod
    def none(cls) -> "LayerContract":
        """The no-reinsurance contract (I = 0)."""
        return cls(0.0, 0.0)

    def __call__(self, x):
        return ceded(self, x)


def ceded(contract: LayerContract, x):
    """Amount paid by the reinsurer on a total loss ``x`` (scalar or array)."""
    out = np.minimum(np.maximum(np.asarray(x, dtype=float) - contract.lower, 0.0),
                     contract.width)
    return float(out) if out.ndim == 0 else out
