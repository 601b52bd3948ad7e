"""Divergences between probability tables.

Conditional tables are compared slice by slice and the worst slice is
reported. Slices that are undefined (NaN) on either side are skipped.
"""

from __future__ import annotations

import warnings

import numpy as np

from .distribution import Distribution
from .errors import ValidationError

KL_EPS = 1e-12


def _paired_slices(p: Distribution, q: Distribution) -> tuple[np.ndarray, np.ndarray]:
    if set(p.variables) != set(q.variables) or set(p.given) != set(q.given):
        raise ValidationError(f"cannot compare {p!r} with {q!r}")
    for v in p.axes:
        if p.cards[v] != q.cards[v]:
            raise ValidationError(f"cardinality mismatch on {v}")
    q = q.reorder(p.variables, p.given)
    a, b = p.slices(), q.slices()
    ok = ~(np.isnan(a).any(axis=1) | np.isnan(b).any(axis=1))
    return a[ok], b[ok]


def tvd_per_slice(p: Distribution, q: Distribution) -> np.ndarray:
    a, b = _paired_slices(p, q)
    return 0.5 * np.abs(a - b).sum(axis=1)


def tvd(p: Distribution, q: Distribution) -> float:
    per = tvd_per_slice(p, q)
    return float(per.max()) if per.size else 0.0


def kl_per_slice(p: Distribution, q: Distribution) -> np.ndarray:
    a, b = _paired_slices(p, q)
    support = a > 0
    if np.any(support & (b <= 0)):
        warnings.warn("kl: q has zeros where p is positive; smoothing with 1e-12", stacklevel=3)
    b = np.maximum(b, KL_EPS)
    safe_a = np.where(support, a, 1.0)
    return np.where(support, a * np.log(safe_a / b), 0.0).sum(axis=1)


def kl(p: Distribution, q: Distribution) -> float:
    per = kl_per_slice(p, q)
    return float(per.max()) if per.size else 0.0
