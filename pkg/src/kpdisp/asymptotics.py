"""High-energy expansions of band edges and band functions.

Near the upper edge of band ``n`` the inverse ``D^{-1}`` has a square-root
branch point at ``y_n = D(l_n)``.  The edge data are assembled in stages:
Taylor coefficients of ``D`` at ``l_n``, then the Puiseux coefficients of the
inverse, then the induced expansions of ``lambda = k**2`` and its
``theta``-derivatives.  The Puiseux composition is done numerically on
truncated Laurent series in ``r = h**(1/2)``, so the closed-form leading
coefficients quoted alongside serve only as independent checks.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from math import factorial, pi

import numpy as np

from .bands import critical_point, edge_offsets
from .discriminant import coupling, discriminant_derivs


def kn_ln_asymptotic(n: int, V) -> tuple[float, float]:
    """Truncated large-``n`` series for ``(k_n, l_n)``."""
    V = coupling(V)
    if n < 1:
        raise ValueError("n must be >= 1")
    x = n * pi
    k_n = x + V / x - (V**2 + V**3 / 12) / x**3
    l_n = x + V / (2 * x) - (V**2 / 2 + V**3 / 24) / x**3
    return k_n, l_n


def kn_ln_residuals(n: int, V) -> tuple[float, float]:
    """Numeric minus truncated ``(k_n, l_n)``, formed on the offsets from ``n pi``."""
    V = coupling(V)
    x = n * pi
    h, g = edge_offsets(n, V)
    return (h - (V / x - (V**2 + V**3 / 12) / x**3),
            g - (V / (2 * x) - (V**2 / 2 + V**3 / 24) / x**3))


@dataclass(frozen=True)
class EdgeExpansion:
    """Asymptotic data attached to the critical point ``l_n``.

    ``d`` holds ``d_2..d_6``, ``e`` holds ``e_1..e_5``; ``lam0`` is
    ``(l_n**2, lambda_{0,1}, ..., lambda_{0,5})`` and ``lam2`` is
    ``(lambda_{2,-3}, lambda_{2,-1}, lambda_{2,0}, lambda_{2,1})``.
    """

    n: int
    V: float
    l_n: float
    y_n: float
    z_n: float
    d: np.ndarray
    e: np.ndarray | None = None
    lam0: np.ndarray | None = None
    lam2: np.ndarray | None = None

    @property
    def c(self) -> np.ndarray:
        """``c_m = (-1)^(n+1) d_m`` for ``m = 2..6``."""
        return (-1) ** (self.n + 1) * self.d


def edge_taylor(n: int, V) -> EdgeExpansion:
    """Exact Taylor coefficients ``d_m = D^(m)(l_n) / m!`` at the numeric ``l_n``."""
    V = coupling(V)
    l_n = critical_point(n, V)
    jet = discriminant_derivs(l_n, V, 6)
    y_n = float(jet[0])
    d = np.array([float(jet[m]) / factorial(m) for m in range(2, 7)])
    return EdgeExpansion(n=n, V=V, l_n=l_n, y_n=y_n, z_n=(-1) ** n * y_n, d=d)


def edge_taylor_leading(n: int, V) -> dict:
    """Leading large-``n`` forms of ``y_n`` and ``d_2..d_6``."""
    V = coupling(V)
    x = n * pi
    sg = (-1) ** n
    return {
        "y": sg * (2 + V**2 / 4 / x**2),
        "d2": sg * (-1 - (V + V**2 / 8) / x**2),
        "d3": sg * ((V + V**2 / 6) / x**3),
        "d4": sg * (1 / 12 + (V / 6 + V**2 / 96) / x**2),
        "d5": sg * (-(V / 6 + V**2 / 60) / x**3),
        "d6": sg * (-1 / 360 - (V / 120 + V**2 / 2880) / x**2),
    }


def puiseux_residuals(c, e) -> np.ndarray:
    """Residuals of the five coefficient-matching equations for ``h = sum c_m (k - l_n)^m``."""
    c2, c3, c4, c5, c6 = c
    e1, e2, e3, e4, e5 = e
    return np.array([
        c2 * e1**2 - 1.0,
        2 * c2 * e1 * e2 + c3 * e1**3,
        c2 * (2 * e1 * e3 + e2**2) + 3 * c3 * e1**2 * e2 + c4 * e1**4,
        (c2 * (2 * e1 * e4 + 2 * e2 * e3) + c3 * (3 * e1**2 * e3 + 3 * e1 * e2**2)
         + 4 * c4 * e1**3 * e2 + c5 * e1**5),
        (c2 * (2 * e1 * e5 + 2 * e2 * e4 + e3**2)
         + c3 * (6 * e1 * e2 * e3 + 3 * e1**2 * e4 + e2**3)
         + c4 * (6 * e1**2 * e2**2 + 4 * e1**3 * e3) + 5 * c5 * e1**4 * e2
         + c6 * e1**6),
    ])


def puiseux_coeffs(exp: EdgeExpansion) -> EdgeExpansion:
    """Solve the triangular system for ``e_1..e_5`` (``e_1 > 0``)."""
    c2, c3, c4, c5, c6 = exp.c
    if c2 <= 0:
        raise ValueError(f"c_2 must be positive, got {c2}")
    e1 = c2**-0.5
    e2 = -c3 * e1**3 / (2 * c2 * e1)
    e3 = -(c2 * e2**2 + 3 * c3 * e1**2 * e2 + c4 * e1**4) / (2 * c2 * e1)
    e4 = -(2 * c2 * e2 * e3 + c3 * (3 * e1**2 * e3 + 3 * e1 * e2**2)
           + 4 * c4 * e1**3 * e2 + c5 * e1**5) / (2 * c2 * e1)
    e5 = -(c2 * (2 * e2 * e4 + e3**2)
           + c3 * (6 * e1 * e2 * e3 + 3 * e1**2 * e4 + e2**3)
           + c4 * (6 * e1**2 * e2**2 + 4 * e1**3 * e3) + 5 * c5 * e1**4 * e2
           + c6 * e1**6) / (2 * c2 * e1)
    return replace(exp, e=np.array([e1, e2, e3, e4, e5]))


def puiseux_leading(n: int, V) -> np.ndarray:
    """Leading large-``n`` forms of ``e_1..e_5``."""
    V = coupling(V)
    x = n * pi
    return np.array([
        1 - (V / 2 + V**2 / 16) / x**2,
        (V / 2 + V**2 / 12) / x**3,
        1 / 24 - (V / 48 + V**2 / 128) / x**2,
        (V / 24 + V**2 / 80) / x**3,
        3 / 640 - (3 * V / 1280 + 3 * V**2 / 2048) / x**2,
    ])


def puiseux_k(exp: EdgeExpansion, h, branch: int):
    """``k_+-  = l_n + sum_p e_p (+-h^(1/2))^p``, truncated after ``p = 5``."""
    x = branch * np.sqrt(np.asarray(h, dtype=float))
    return exp.l_n + sum(ep * x ** (p + 1) for p, ep in enumerate(exp.e))


# Laurent series in r = h^(1/2) are dicts {power: coefficient}; O(r^2) is dropped
# for the second derivative, matching the order of the truncated k expansion.
_KEEP = 1


def _lmul(a: dict, b: dict, keep=_KEEP) -> dict:
    out: dict = {}
    for pa, ca in a.items():
        for pb, cb in b.items():
            p = pa + pb
            if p <= keep:
                out[p] = out.get(p, 0.0) + ca * cb
    return out


def _ladd(*terms: dict) -> dict:
    out: dict = {}
    for t in terms:
        for p, c in t.items():
            out[p] = out.get(p, 0.0) + c
    return out


def _d_dh(a: dict) -> dict:
    # d/dh = (1 / 2r) d/dr
    return {p - 2: c * p / 2 for p, c in a.items() if p != 0}


def _lambda_series(exp: EdgeExpansion) -> dict:
    e = dict(enumerate(exp.e, start=1))
    lam = {0: exp.l_n**2}
    for q in range(1, 6):
        lam[q] = 2 * exp.l_n * e[q] + sum(e[p] * e[q - p] for p in range(1, q))
    return lam


def _second_derivative_series(exp: EdgeExpansion, lam: dict) -> dict:
    z = exp.z_n
    lam_h = _d_dh(lam)
    lam_hh = _d_dh(lam_h)
    # (2 sin tau)^2 = (4 - z^2) + 2 z h - h^2 and 2 cos tau = z - h
    sin2 = {0: 4 - z * z, 2: 2 * z, 4: -1.0}
    cos2 = {0: z, 2: -1.0}
    return _ladd(_lmul(lam_hh, sin2), _lmul(lam_h, cos2))


def lambda_coeffs(exp: EdgeExpansion) -> EdgeExpansion:
    """Fill ``lam0`` and ``lam2`` by composing the Puiseux series."""
    if exp.e is None:
        exp = puiseux_coeffs(exp)
    lam = _lambda_series(exp)
    lam0 = np.array([lam[q] for q in range(6)])
    d2 = _second_derivative_series(exp, lam)
    lam2 = np.array([d2.get(p, 0.0) for p in (-3, -1, 0, 1)])
    return replace(exp, lam0=lam0, lam2=lam2)


def lambda_leading(n: int, V) -> dict:
    """Leading large-``n`` forms of the ``lambda_{0,.}`` and ``lambda_{2,.}`` coefficients."""
    V = coupling(V)
    x = n * pi
    return {
        "l2": x**2 + V - (3 * V**2 / 4 + V**3 / 12) / x**2,
        "lam0": np.array([2 * x - V**2 / 8 / x, 1 + V**2 / 24 / x**2,
                          x / 12 - V**2 / 64 / x, 1 / 12 + V**2 / 240 / x**2,
                          3 * x / 320 - 3 * V**2 / 1024 / x]),
        "lam2": np.array([V**2 / 2 / x, -V**2 / 16 / x, 2 + V**2 / 6 / x**2,
                          -9 * V**2 / 256 / x]),
    }


def full_edge_expansion(n: int, V) -> EdgeExpansion:
    """Taylor, Puiseux and band-function coefficients for edge ``n`` in one go."""
    return lambda_coeffs(puiseux_coeffs(edge_taylor(n, V)))


def edge_h(exp: EdgeExpansion, theta):
    """``h = (-1)^n (y_n - 2 cos theta)``; nonnegative for real ``theta``."""
    return (-1) ** exp.n * (exp.y_n - 2.0 * np.cos(theta))


def lambda_edge_jet(exp: EdgeExpansion, branch: int, theta):
    """Truncated ``(lambda, lambda', lambda'', lambda''')`` on branch ``+1`` or ``-1``.

    The ``-`` branch continues band ``n`` and the ``+`` branch band ``n+1``
    across ``theta = n pi``.
    """
    if branch not in (1, -1):
        raise ValueError("branch must be +1 or -1")
    if exp.lam0 is None:
        exp = lambda_coeffs(exp)
    theta = np.asarray(theta, dtype=float)
    h = edge_h(exp, theta)
    if np.any(h >= 1):
        raise ValueError("h >= 1 is outside the edge expansion's validity")
    r = branch * np.sqrt(h)
    two_sin_tau = (-1) ** exp.n * 2.0 * np.sin(theta)
    lam = dict(enumerate(exp.lam0))
    lam_h = _d_dh(lam)
    d2 = _second_derivative_series(exp, lam)
    d2_h = _d_dh(d2)

    def ev(series):
        return sum(c * r**p for p, c in series.items())

    return ev(lam), two_sin_tau * ev(lam_h), ev(d2), two_sin_tau * ev(d2_h)


def theta0_asymptotic(n: int, V) -> float:
    """Leading position of the inflection point, ``n pi - (V^2 / 4 n pi)^(1/3)``."""
    V = coupling(V)
    return n * pi - (V**2 / (4 * n * pi)) ** (1 / 3)


def inner_window(n: int, V) -> tuple[float, float]:
    """Band-centre window where the free-particle expansion applies."""
    w = (coupling(V) ** 2 / (4 * n * pi)) ** 0.25
    return (n - 1) * pi + w, n * pi - w


@dataclass(frozen=True)
class InnerExpansion:
    theta: float
    k: float
    dk: float
    d2k: float
    lam: float
    dlam: float
    d2lam: float


def inner_expansion(n: int, V, theta: float) -> InnerExpansion:
    """Band-centre expansions of ``k`` and ``lambda`` in the unfolded variable."""
    V = coupling(V)
    a, b = inner_window(n, V)
    if not a <= theta <= b:
        raise ValueError(f"theta={theta} outside inner window [{a}, {b}]")
    s, c = np.sin(theta), np.cos(theta)
    cot = c / s
    return InnerExpansion(
        theta=theta,
        k=theta + V / (2 * theta) + V**2 / (8 * theta**2) * cot,
        dk=1 - V / (2 * theta**2) - V**2 / (8 * theta**2 * s**2),
        d2k=V**2 * c / (4 * theta**2 * s**3),
        lam=theta**2 + V + V**2 / (4 * theta) * cot,
        dlam=2 * theta - V**2 / (4 * theta * s**2),
        d2lam=2 + V**2 * c / (2 * theta * s**3),
    )
