"""Spectral bands of the Kronig-Penney comb.

A :class:`Band` pins down one monotone branch ``k(theta) = D^{-1}(2 cos theta)``.
Band functions are treated as even, ``2 pi``-periodic functions of a real
quasimomentum, so the same call serves the folded variable in ``[-pi, pi]``
and the unfolded one in ``[(n-1) pi, n pi]`` used by the asymptotics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import pi

import numpy as np
from scipy.optimize import brentq

from .discriminant import coupling, d_prime, discriminant, discriminant_derivs

XTOL = 1e-13
_TABLE_SIZE = 4097
_NEWTON_ITERS = 60


class BracketError(RuntimeError):
    """A bracket guaranteed by monotonicity failed to change sign."""


class NoInflectionError(ValueError):
    """No sign change of ``lambda''`` inside the (widened) inflection bracket."""

    def __init__(self, message, candidates=()):
        super().__init__(message)
        self.candidates = tuple(candidates)


def _check_index(n: int, V: float, allow_first=False):
    if n < 1:
        raise ValueError(f"band index must be >= 1, got {n}")
    if V < 0 and n < 2 and not allow_first:
        raise ValueError("for V < 0 bands are indexed from n = 2")


def _polish(f, fprime, x, lo, hi, steps=3):
    # Newton polish inside a known bracket; never leaves it.
    for _ in range(steps):
        d = fprime(x)
        if d == 0:
            break
        x_new = x - f(x) / d
        if not lo <= x_new <= hi:
            break
        x = x_new
    return x


def _scan_bracket(f, a, b, points=64):
    xs = np.linspace(a, b, points)
    fs = np.array([f(x) for x in xs])
    idx = np.nonzero(np.sign(fs[:-1]) * np.sign(fs[1:]) <= 0)[0]
    if idx.size == 0:
        raise BracketError(f"no sign change on [{a}, {b}]")
    i = idx[0]
    return xs[i], xs[i + 1]


def _solve(f, fprime, a, b, seed=None, halfwidth=None):
    lo, hi = a, b
    if seed is not None and halfwidth is not None:
        s_lo, s_hi = max(a, seed - halfwidth), min(b, seed + halfwidth)
        if f(s_lo) * f(s_hi) < 0:
            lo, hi = s_lo, s_hi
        else:
            lo, hi = _scan_bracket(f, a, b)
    else:
        lo, hi = _scan_bracket(f, a, b)
    if f(lo) == 0:
        return lo
    if f(hi) == 0:
        return hi
    root = brentq(f, lo, hi, xtol=XTOL, rtol=4 * np.finfo(float).eps, maxiter=200)
    return _polish(f, fprime, root, lo, hi)


def _asymptotic_seeds(n, V):
    x = n * pi
    k = x + V / x - (V**2 + V**3 / 12) / x**3
    l = x + V / (2 * x) - (V**2 / 2 + V**3 / 24) / x**3
    return k, l


def critical_point(n: int, V) -> float:
    """``l_n``: the unique zero of ``D'`` that separates band ``n`` from ``n+1``.

    ``l_0 = 0`` by convention.  For ``V > 0`` the root lies in
    ``(n pi, (n+1) pi)``; for ``V < 0`` in ``((n-1) pi, n pi)``.
    """
    V = coupling(V)
    if n == 0:
        return 0.0
    if n < 0:
        raise ValueError("critical point index must be >= 0")
    if V == 0.0:
        return n * pi
    if V > 0:
        a, b = n * pi, (n + 1) * pi
    else:
        a, b = (n - 1) * pi, n * pi
        if n == 1:
            a = 1e-6
    f = lambda k: float(d_prime(k, V))
    fp = lambda k: float(discriminant_derivs(k, V, 2)[2])
    if f(a) * f(b) > 0 and n > 1:
        raise BracketError(f"D' does not change sign on [{a}, {b}] (n={n}, V={V})")
    seed = halfwidth = None
    if n >= 10:
        seed = _asymptotic_seeds(n, V)[1]
        halfwidth = 10 * (1 + V**2 + abs(V) ** 3) / (n * pi) ** 3
    return _solve(f, fp, a, b, seed, halfwidth)


def band_edge(n: int, V) -> float:
    """``k_n``: the root of ``D(k) = 2 (-1)^n`` that is not ``n pi``.

    For ``V > 0`` it lies in ``(l_n, (n+1) pi)`` and is the lower edge of
    band ``n + 1``; for ``V < 0`` it lies in ``((n-1) pi, l_n)`` and is the
    upper edge of band ``n``.
    """
    V = coupling(V)
    if n < 0:
        raise ValueError("edge index must be >= 0")
    if V == 0.0:
        return n * pi
    target = 2.0 * (-1) ** n
    f = lambda k: float(discriminant(k, V)) - target
    fp = lambda k: float(d_prime(k, V))
    if V > 0:
        a = critical_point(n, V) if n >= 1 else 0.0
        b = (n + 1) * pi
    else:
        if n == 0:
            raise ValueError("k_0 is not defined for V < 0")
        a = (n - 1) * pi if n > 1 else 0.0
        b = critical_point(n, V)
    if f(a) * f(b) > 0:
        raise BracketError(f"D - 2(-1)^n does not change sign on [{a}, {b}]")
    seed = halfwidth = None
    if n >= 10:
        seed = _asymptotic_seeds(n, V)[0]
        halfwidth = 10 * (1 + V**2 + abs(V) ** 3) / (n * pi) ** 3
    return _solve(f, fp, a, b, seed, halfwidth)


def edge_offsets(n: int, V) -> tuple[float, float]:
    """``(k_n - n pi, l_n - n pi)`` to full relative precision.

    Substituting ``k = n pi + h`` turns ``D(k) = 2 (-1)^n`` into
    ``2 (n pi + h) sin(h/2) = V cos(h/2)`` and ``D'(k) = 0`` into
    ``2 (n pi + h)^2 sin h = V ((n pi + h) cos h - sin h)``.  Solving for the
    small offset directly avoids the ``eps * n pi`` floor that subtracting
    ``n pi`` from :func:`band_edge` would leave, which matters once the
    offsets' asymptotic residuals drop below that floor.
    """
    V = coupling(V)
    _check_index(n, V)
    if V == 0.0:
        return 0.0, 0.0
    x = n * pi
    sgn = 1.0 if V > 0 else -1.0
    f_edge = lambda h: 2 * (x + h) * np.sin(h / 2) - V * np.cos(h / 2)
    f_crit = lambda g: 2 * (x + g) ** 2 * np.sin(g) - V * ((x + g) * np.cos(g) - np.sin(g))
    lo, hi = sorted((0.0, sgn * pi))
    out = []
    for f in (f_edge, f_crit):
        out.append(brentq(f, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=200))
    return out[0], out[1]


@dataclass(frozen=True)
class Band:
    """One spectral band ``I_n = [k_lo**2, k_hi**2]``.

    ``l_lo, l_hi`` are the critical points bracketing the monotone branch
    of ``D``; ``k_edge`` is ``k_n``.  The inverse table is filled once by
    :func:`build_band` and only read afterwards.
    """

    n: int
    V: float
    l_lo: float
    l_hi: float
    k_lo: float
    k_hi: float
    k_edge: float
    _theta_tab: np.ndarray = field(repr=False, compare=False)
    _k_tab: np.ndarray = field(repr=False, compare=False)

    @property
    def interval(self) -> tuple[float, float]:
        return self.k_lo**2, self.k_hi**2

    @property
    def width(self) -> float:
        return self.k_hi**2 - self.k_lo**2

    @property
    def top_theta(self) -> float:
        """Folded quasimomentum of the upper band edge (0 or pi)."""
        return 0.0 if self.n % 2 == 0 else pi

    @property
    def increasing(self) -> bool:
        """Whether ``k`` increases with ``theta`` on ``(0, pi)``."""
        return self.n % 2 == 1

    def k(self, theta):
        return k_of_theta(self, theta)


def _invert(n, V, k_lo, k_hi, theta, k0=None):
    """Safeguarded vectorized Newton for ``D(k) = 2 cos(theta)`` on ``[k_lo, k_hi]``."""
    theta = np.asarray(theta, dtype=float)
    target = 2.0 * np.cos(theta)
    d_lo = float(discriminant(k_lo, V))
    d_hi = float(discriminant(k_hi, V))
    sgn = 1.0 if d_hi > d_lo else -1.0
    lo = np.full(theta.shape, k_lo)
    hi = np.full(theta.shape, k_hi)
    k = np.clip(k0, k_lo, k_hi) if k0 is not None else 0.5 * (lo + hi)
    k = np.array(k, dtype=float, copy=True)
    tol = 4 * np.finfo(float).eps * max(1.0, k_hi)
    for _ in range(_NEWTON_ITERS):
        g = discriminant(k, V) - target
        above = sgn * g > 0
        hi = np.where(above, k, hi)
        lo = np.where(above, lo, k)
        dp = d_prime(k, V)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = g / dp
        done = np.abs(step) <= tol
        k_new = k - step
        # bisect only on a real excursion; a roundoff-sized step is convergence
        bad = ~done & (~np.isfinite(k_new) | (k_new <= lo) | (k_new >= hi))
        k = np.clip(np.where(bad, 0.5 * (lo + hi), k_new), k_lo, k_hi)
        if np.all(done):
            break
    # exact edges: cos(theta) = +-1 lands on the band end with that value
    at_lo = sgn * (target - d_lo) <= 0
    at_hi = sgn * (target - d_hi) >= 0
    k = np.where(at_lo, k_lo, np.where(at_hi, k_hi, k))
    return k


def build_band(n: int, V) -> Band:
    """Assemble band ``n``: critical points, edges, and the inverse table."""
    V = coupling(V)
    _check_index(n, V)
    if V == 0.0:
        l_lo, l_hi = (n - 1) * pi, n * pi
        k_lo, k_hi, k_edge = (n - 1) * pi, n * pi, n * pi
    elif V > 0:
        l_lo, l_hi = critical_point(n - 1, V), critical_point(n, V)
        k_lo = band_edge(n - 1, V)
        k_hi = n * pi
        k_edge = band_edge(n, V)
    else:
        l_lo, l_hi = critical_point(n - 1, V), critical_point(n, V)
        k_lo = (n - 1) * pi
        k_hi = band_edge(n, V)
        k_edge = k_hi
    theta_tab = np.linspace(0.0, pi, _TABLE_SIZE)
    k_tab = _invert(n, V, k_lo, k_hi, theta_tab)
    k_tab.setflags(write=False)
    theta_tab.setflags(write=False)
    return Band(n=n, V=V, l_lo=l_lo, l_hi=l_hi, k_lo=k_lo, k_hi=k_hi,
                k_edge=k_edge, _theta_tab=theta_tab, _k_tab=k_tab)


@lru_cache(maxsize=256)
def get_band(n: int, V: float) -> Band:
    """Memoized :func:`build_band`; bands are immutable so sharing is safe."""
    return build_band(n, float(V))


def fold(theta):
    """Map any real quasimomentum to ``[0, pi]`` using evenness and periodicity."""
    # |theta| first so that fold(-theta) == fold(theta) bit for bit
    theta = np.abs(np.asarray(theta, dtype=float))
    r = np.remainder(theta, 2 * pi)
    return np.where(r > pi, 2 * pi - r, r)


def k_of_theta(band: Band, theta):
    """Monotone inverse ``k(theta) = D^{-1}(2 cos theta)`` on the band's branch."""
    scalar = np.ndim(theta) == 0
    t = fold(theta)
    k0 = np.interp(t, band._theta_tab, band._k_tab)
    k = _invert(band.n, band.V, band.k_lo, band.k_hi, t, k0)
    return float(k) if scalar else k


@dataclass(frozen=True)
class ThetaSample:
    """Band function and derivatives at one (or an array of) quasimomenta."""

    theta: object
    k: object
    lam: object
    d1: object
    d2: object
    d3: object
    dk_dtheta: object


def k_jet(band: Band, theta, k=None):
    """``(k, k', k'', k''')`` from the inverse-function chain rule."""
    theta = np.asarray(theta, dtype=float)
    if k is None:
        k = np.asarray(k_of_theta(band, theta), dtype=float)
    jet = discriminant_derivs(k, band.V, 3)
    D1, D2, D3 = jet[1], jet[2], jet[3]
    # reduce first so that theta in {0, +-pi} gives sin(theta) == 0 exactly
    r = theta - 2 * pi * np.round(theta / (2 * pi))
    s = np.where(np.abs(r) == pi, 0.0, np.sin(r))
    c = np.cos(r)
    # 2 cos(theta) = D(k) and 4 - D(k)^2 = 4 sin^2(theta); the theta forms avoid cancellation
    four_s2 = 4.0 * s * s
    k1 = -2.0 * s / D1
    k2 = -D2 / D1**3 * four_s2 - 2.0 * c / D1
    k3 = ((-3.0 * D2**2 / D1**5 + D3 / D1**4) * four_s2
          - 6.0 * c * D2 / D1**3 + 1.0 / D1) * 2.0 * s
    return k, k1, k2, k3


def lambda_jet(band: Band, theta) -> ThetaSample:
    """``lambda_n`` and its first three ``theta``-derivatives, closed form."""
    k, k1, k2, k3 = k_jet(band, theta)
    lam = k * k
    d1 = 2.0 * k * k1
    d2 = 2.0 * k1 * k1 + 2.0 * k * k2
    d3 = 6.0 * k1 * k2 + 2.0 * k * k3
    out = [k, lam, d1, d2, d3, k1]
    if np.ndim(theta) == 0:
        out = [float(v) for v in out]
    k, lam, d1, d2, d3, k1 = out
    return ThetaSample(theta=theta, k=k, lam=lam, d1=d1, d2=d2, d3=d3, dk_dtheta=k1)


def _delta(band: Band) -> float:
    return band.V**2 / (4 * band.n * pi)


def inflection_candidates(band: Band, points: int = 20001) -> np.ndarray:
    """All sign changes of ``lambda''`` on ``[(n-1) pi, n pi]``, refined by Brent."""
    n = band.n
    grid = np.linspace((n - 1) * pi, n * pi, points)[1:-1]
    d2 = lambda_jet(band, grid).d2
    idx = np.nonzero(np.sign(d2[:-1]) * np.sign(d2[1:]) < 0)[0]
    f = lambda th: lambda_jet(band, th).d2
    return np.array([brentq(f, grid[i], grid[i + 1], xtol=1e-14) for i in idx])


def inflection_point(band: Band) -> float:
    """Zero ``theta_0`` of ``lambda_n''`` near the upper edge, unfolded to ``((n-1) pi, n pi)``.

    Searches ``[n pi - 2 d, n pi - d/2]`` with ``d = (V^2 / 4 n pi)^(1/3)``,
    widening the bracket geometrically up to five times.
    """
    n = band.n
    d = _delta(band) ** (1 / 3)
    f = lambda th: lambda_jet(band, th).d2
    lo_off, hi_off = 2 * d, d / 2
    for _ in range(6):
        a = n * pi - min(lo_off, pi)
        b = n * pi - hi_off
        fa, fb = f(a), f(b)
        if fa * fb < 0:
            return brentq(f, a, b, xtol=1e-14, rtol=4 * np.finfo(float).eps)
        lo_off, hi_off = 2 * lo_off, hi_off / 2
    raise NoInflectionError(
        f"no inflection certified for n={n}, V={band.V}",
        candidates=inflection_candidates(band))


def max_group_velocity(band: Band) -> float:
    """``v_max = |lambda_n'(theta_0)|``, the peak group speed of the band."""
    return abs(lambda_jet(band, inflection_point(band)).d1)
