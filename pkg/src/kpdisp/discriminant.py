"""Discriminant of the periodic delta comb and its monodromy matrix.

The discriminant ``D(k) = 2 cos k + V sin(k)/k`` is the trace of the
one-period transfer matrix; ``lambda = k**2`` lies in the spectrum iff
``|D(k)| <= 2``.  Everything here is a pure function of ``(k, V)`` and
accepts scalars or numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

MAX_ORDER = 6
SERIES_CUTOFF = 0.5
_SERIES_TERMS = 14


@dataclass(frozen=True)
class PotentialStrength:
    """Coupling ``V`` of the delta comb.

    ``V == 0`` is the free Laplacian; it is only accepted when
    ``allow_zero`` is set, which test oracles do explicitly.
    """

    V: float
    allow_zero: bool = False

    def __post_init__(self):
        if not np.isfinite(self.V):
            raise ValueError(f"coupling must be finite, got {self.V!r}")
        if self.V == 0.0 and not self.allow_zero:
            raise ValueError("V = 0 is the free case; pass allow_zero=True")

    def __float__(self) -> float:
        return float(self.V)


def coupling(V) -> float:
    """Return ``V`` as a float, accepting a :class:`PotentialStrength`."""
    return float(V.V) if isinstance(V, PotentialStrength) else float(V)


def _sinc_series(k, order: int):
    # d^m/dk^m sum_j (-1)^j k^(2j) / (2j+1)!
    out = np.zeros_like(k, dtype=float)
    for j in range(_SERIES_TERMS):
        p = 2 * j
        if p < order:
            continue
        coef = (-1) ** j / factorial(p + 1) * factorial(p) / factorial(p - order)
        out = out + coef * k ** (p - order)
    return out


def _sinc_closed(k, order: int):
    s, c = np.sin(k), np.cos(k)
    r = 1.0 / k
    if order == 0:
        return s * r
    if order == 1:
        return c * r - s * r**2
    if order == 2:
        return -s * r - 2 * c * r**2 + 2 * s * r**3
    if order == 3:
        return -c * r + 3 * s * r**2 + 6 * c * r**3 - 6 * s * r**4
    if order == 4:
        return (s * r + 4 * c * r**2 - 12 * s * r**3 - 24 * c * r**4
                + 24 * s * r**5)
    if order == 5:
        return (c * r - 5 * s * r**2 - 20 * c * r**3 + 60 * s * r**4
                + 120 * c * r**5 - 120 * s * r**6)
    if order == 6:
        return (-s * r - 6 * c * r**2 + 30 * s * r**3 + 120 * c * r**4
                - 360 * s * r**5 - 720 * c * r**6 + 720 * s * r**7)
    raise ValueError(f"derivative order {order} exceeds {MAX_ORDER}")


def sinc_deriv(k, order: int = 0):
    """``order``-th derivative of ``sin(k)/k``; Taylor series for ``|k| < 0.5``.

    The closed forms carry ``k^-(order+1)`` cancellations, so the series is
    used well beyond the tiny-``k`` region: 14 terms are exact to rounding
    there, while the closed form loses ~``order!/k^(order+1)`` ulps.
    """
    k = np.asarray(k, dtype=float)
    small = np.abs(k) < SERIES_CUTOFF
    if not np.any(small):
        return _sinc_closed(k, order)
    safe = np.where(small, 1.0, k)
    return np.where(small, _sinc_series(k, order), _sinc_closed(safe, order))


_COS_DERIVS = (np.cos, lambda k: -np.sin(k), lambda k: -np.cos(k), np.sin)


def _cos_deriv(k, order: int):
    return _COS_DERIVS[order % 4](k)


def discriminant(k, V):
    """``D(k) = 2 cos k + V sin(k)/k``, with ``D(0) = 2 + V``."""
    return 2.0 * np.cos(k) + coupling(V) * sinc_deriv(k, 0)


def discriminant_derivs(k, V, max_order: int = MAX_ORDER) -> "DiscriminantJet":
    """Closed-form jet ``(D, D', ..., D^(max_order))`` at ``k``."""
    if not 0 <= max_order <= MAX_ORDER:
        raise ValueError(f"max_order must be in [0, {MAX_ORDER}], got {max_order}")
    V = coupling(V)
    k_arr = np.asarray(k, dtype=float)
    values = np.stack([2.0 * _cos_deriv(k_arr, m) + V * sinc_deriv(k_arr, m)
                       for m in range(max_order + 1)])
    return DiscriminantJet(k=k, values=values)


@dataclass(frozen=True)
class DiscriminantJet:
    """Values ``D^(j)(k)`` for ``j = 0..max_order`` stacked on axis 0."""

    k: object
    values: np.ndarray

    def __getitem__(self, order: int):
        return self.values[order]

    @property
    def max_order(self) -> int:
        return self.values.shape[0] - 1


def d_prime(k, V):
    """``D'(k)`` alone, the workhorse of the inverse-function formulas."""
    return -2.0 * np.sin(k) + coupling(V) * sinc_deriv(k, 1)


def discriminant_negative_energy(lam, V):
    """Hyperbolic form of ``D(sqrt(lam))`` for ``lam < 0``."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam >= 0):
        raise ValueError("negative-energy discriminant needs lambda < 0")
    kappa = np.sqrt(-lam)
    # sinh(x)/x has no cancellation issue except at tiny x
    tiny = kappa < 1e-3
    shc = np.where(tiny, 1.0 + kappa**2 / 6.0, np.sinh(kappa) / np.where(tiny, 1.0, kappa))
    out = 2.0 * np.cosh(kappa) + coupling(V) * shc
    return out if out.ndim else float(out)


def transfer_matrix(k, V) -> np.ndarray:
    """One-period map ``(A_{j-1}, B_{j-1}) -> (A_j, B_j)``.

    Works for real or complex ``k``; the resolvent construction feeds it
    complex wavenumbers.
    """
    V = coupling(V)
    k = np.asarray(k)
    c = np.cos(k)
    if np.iscomplexobj(k):
        sk = np.sin(k) / k if k != 0 else 1.0
    else:
        sk = sinc_deriv(k, 0)
    return np.array([[c, sk], [V * c - k * np.sin(k), V * sk + c]])
