"""Small input-validation helpers shared across the package."""

from __future__ import annotations

import math
import numbers

import numpy as np


def check_scalar(value, name, *, lower=None, upper=None, lower_inclusive=True,
                 upper_inclusive=True):
    """Return ``value`` as a finite float after bounds checks.

    Raises:
        TypeError: if ``value`` is not a real number.
        ValueError: if it is not finite or violates a bound.
    """
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    if lower is not None:
        bad = value < lower if lower_inclusive else value <= lower
        if bad:
            op = ">=" if lower_inclusive else ">"
            raise ValueError(f"{name} must be {op} {lower}, got {value}")
    if upper is not None:
        bad = value > upper if upper_inclusive else value >= upper
        if bad:
            op = "<=" if upper_inclusive else "<"
            raise ValueError(f"{name} must be {op} {upper}, got {value}")
    return value


def check_positive(value, name):
    return check_scalar(value, name, lower=0.0, lower_inclusive=False)


def check_nonnegative(value, name):
    return check_scalar(value, name, lower=0.0)


def check_probability(value, name="eps"):
    """Level strictly inside (0, 1)."""
    return check_scalar(value, name, lower=0.0, upper=1.0,
                        lower_inclusive=False, upper_inclusive=False)


def check_count(value, name, *, minimum=0):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        if isinstance(value, numbers.Real) and float(value).is_integer():
            value = int(value)
        else:
            raise TypeError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return value


def as_generator(rng):
    """Accept a Generator, SeedSequence, int or None (sklearn's ``random_state`` idiom)."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def as_seed_sequence(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, np.random.Generator):
        raise TypeError("pass an int or SeedSequence, not a Generator, where "
                        "reproducible substreams are required")
    return np.random.SeedSequence(seed)


def snap(x, tol=1e-9):
    """Round ``x`` to the nearest integer when it is within float noise of it."""
    r = round(x)
    if abs(x - r) <= tol * max(1.0, abs(x)):
        return float(r)
    return x


def upper_index(eps, m):
    """1-based order-statistic index ``ceil((1 - eps) * m)`` clamped to [1, m]."""
    k = m - math.floor(snap(eps * m))
    return min(max(k, 1), m)


def tail_count(eps, m):
    """Number of values in the upper ``eps`` tail, ``ceil(eps * m)``, at least 1."""
    return min(max(math.ceil(snap(eps * m)), 1), m)
