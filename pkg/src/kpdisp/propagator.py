"""Band-projected propagator kernel ``K_{n,t}(x, y)``.

The main route integrates the closed-form amplitude against the phase
``e^{-it lambda_n(theta) + i (jx - jy) theta}`` with composite
Gauss-Legendre panels.  Two independent routes (normalized Bloch waves on
a uniform grid, and the spectral-measure integral over energy) exist only
to cross-check it.  The van der Corput helpers turn a partition of the
quasimomentum circle into a computable upper estimate of ``|K|``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import pi

import numpy as np
from numba import njit

from .bands import Band, fold, get_band, inflection_point, lambda_jet
from .bloch import amplitude, amplitude_dtheta, unit_cell_gram
from .discriminant import coupling, discriminant, sinc_deriv

_DENSITY_GRID = 4097
SPECTRUM_MARGIN = 1e-8
STONE_EPS = 0.0
VDC_GRID = 10_000
VDC_SAFETY = 0.9


class ResolutionRefused(RuntimeError):
    """The quadrature would need more nodes than the configured cap."""

    def __init__(self, needed: int, cap: int):
        super().__init__(f"resolution refused: {needed} nodes needed, cap is {cap}")
        self.needed = needed
        self.cap = cap


@dataclass(frozen=True)
class KernelQuery:
    """Kernel request at physical positions ``x, y`` (not integers)."""

    n: int
    t: float
    x: float
    y: float
    V: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"band index must be >= 1, got {self.n}")
        for name in ("t", "x", "y", "V"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not (0 < self.xp < 1 and 0 < self.yp < 1):
            raise ValueError("x and y must not be integers (x', y' in (0, 1) strictly)")

    @property
    def jx(self) -> int:
        return int(np.floor(self.x))

    @property
    def jy(self) -> int:
        return int(np.floor(self.y))

    @property
    def xp(self) -> float:
        return self.x - self.jx

    @property
    def yp(self) -> float:
        return self.y - self.jy

    @property
    def offset(self) -> int:
        return self.jx - self.jy

    @property
    def s(self) -> float:
        """Velocity ``(jx - jy) / t``; infinite at ``t = 0`` unless the offset vanishes."""
        if self.t != 0:
            return self.offset / self.t
        return 0.0 if self.offset == 0 else float(np.copysign(np.inf, self.offset))

    def band(self) -> Band:
        return get_band(self.n, float(self.V))

    def swapped(self, t=None) -> "KernelQuery":
        return KernelQuery(self.n, self.t if t is None else t, self.y, self.x, self.V)


@dataclass(frozen=True)
class QuadratureSpec:
    """Composite Gauss-Legendre settings.

    ``max_nodes`` is the refusal threshold; nothing is truncated silently.
    """

    nodes_per_oscillation: float = 8.0
    min_nodes: int = 2000
    order: int = 16
    max_nodes: int = 100_000_000
    chunk_panels: int = 8192

    def __post_init__(self):
        if self.nodes_per_oscillation < 4:
            raise ValueError("nodes_per_oscillation must be >= 4")
        if self.min_nodes < 1 or self.order < 2 or self.max_nodes < 1:
            raise ValueError("min_nodes, order and max_nodes must be positive")

    def doubled(self) -> "QuadratureSpec":
        return QuadratureSpec(2 * self.nodes_per_oscillation, 2 * self.min_nodes,
                              self.order, 2 * self.max_nodes, self.chunk_panels)


@dataclass(frozen=True)
class KernelGrid:
    """Kernel values on an ``(x', y')`` grid at one ``(t, offset)``."""

    values: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    t: float
    offset: int
    nodes: int


@lru_cache(maxsize=128)
def _velocity_profile(band: Band):
    half = np.linspace(0.0, pi, _DENSITY_GRID)
    d1 = np.asarray(lambda_jet(band, half).d1)
    theta = np.concatenate([-half[::-1], half[1:]])
    vel = np.concatenate([-d1[::-1], d1[1:]])
    return theta, vel


def _edge_scale(band: Band) -> float:
    # distance of the square-root branch points of k(theta) from the real axis
    return max(abs(band.V) / (2 * band.n * pi), 1e-6)


def panel_edges(band: Band, t: float, offset: int, spec: QuadratureSpec) -> np.ndarray:
    """Panel breakpoints on ``[-pi, pi]``, always including ``-pi, 0, pi``.

    Panel density is the largest of the local oscillation rate of the
    phase, a resolution term near the band edges ``theta in {0, +-pi}`` and
    a uniform floor from ``min_nodes``.
    """
    theta, vel = _velocity_profile(band)
    order = spec.order
    osc = np.abs(t * vel - offset) / (2 * pi)
    dens_osc = spec.nodes_per_oscillation * osc / order
    sigma = _edge_scale(band)
    dist = np.minimum(np.abs(theta), pi - np.abs(theta))
    dens_edge = 1.0 / np.hypot(sigma, dist)
    floor = spec.min_nodes / (order * 2 * pi)
    dens = np.maximum(np.maximum(dens_osc, dens_edge), floor)
    mid = _DENSITY_GRID - 1
    pieces = []
    for sl in (slice(0, mid + 1), slice(mid, None)):
        th, de = theta[sl], dens[sl]
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (de[1:] + de[:-1]) * np.diff(th))])
        count = max(1, int(np.ceil(cum[-1])))
        levels = np.linspace(0.0, cum[-1], count + 1)
        e = np.interp(levels, cum, th)
        e[0], e[-1] = th[0], th[-1]
        pieces.append(e)
    return np.concatenate([pieces[0], pieces[1][1:]])


def node_count(band: Band, t: float, offset: int, spec: QuadratureSpec) -> int:
    return (panel_edges(band, t, offset, spec).size - 1) * spec.order


@njit(cache=True)
def _trig_row(k, xs, step, c, s):
    # uniform rows (step > 0) use the rotation e^{ik(x+h)} = e^{ikx} e^{ikh}
    if step > 0:
        z = np.cos(k * xs[0]) + 1j * np.sin(k * xs[0])
        rot = np.cos(k * step) + 1j * np.sin(k * step)
        for a in range(xs.size):
            c[a] = z.real
            s[a] = z.imag
            z = z * rot
    else:
        for a in range(xs.size):
            c[a] = np.cos(k * xs[a])
            s[a] = np.sin(k * xs[a])


@njit(cache=True)
def _accumulate(theta, w, seed, V, k_lo, k_hi, d_lo, d_hi, t, offset, lam_ref,
                xs, ys, x_step, y_step, acc):
    # one pass over the nodes in index order; deterministic reduction
    gx, gy = xs.size, ys.size
    sgn = 1.0 if d_hi > d_lo else -1.0
    tol = 4 * 2.220446049250313e-16 * max(1.0, k_hi)
    px = np.empty(gx)
    sx = np.empty(gx)
    cx = np.empty(gx)
    py = np.empty(gy)
    sy = np.empty(gy)
    cy = np.empty(gy)
    for i in range(theta.size):
        th = theta[i]
        target = 2.0 * np.cos(th)
        if sgn * (target - d_lo) <= 0:
            k = k_lo
        elif sgn * (target - d_hi) >= 0:
            k = k_hi
        else:
            lo, hi, k = k_lo, k_hi, seed[i]
            for _ in range(60):
                sk, ck = np.sin(k), np.cos(k)
                g = 2 * ck + V * sk / k - target
                dp = -2 * sk + V * (ck / k - sk / (k * k))
                if sgn * g > 0:
                    hi = k
                else:
                    lo = k
                step = g / dp if dp != 0 else np.inf
                if abs(step) <= tol:
                    k = min(max(k - step, k_lo), k_hi)
                    break
                k_new = k - step
                if not (lo < k_new < hi):
                    k_new = 0.5 * (lo + hi)
                k = k_new
        sk, ck = np.sin(k), np.cos(k)
        dp = -2 * sk + V * (ck / k - sk / (k * k))
        f1 = -2 * sk / dp
        f2 = -2 * np.sin(th) / dp
        f3 = (-4 * sk + 4 * V * ck / k + V * V * sk / (k * k)) / (2 * dp)
        ph = -t * (k * k - lam_ref) + offset * th
        e = w[i] * (np.cos(ph) + 1j * np.sin(ph))
        r = V / (2 * k)
        _trig_row(k, xs, x_step, cx, sx)
        _trig_row(k, ys, y_step, cy, sy)
        for a in range(gx):
            px[a] = cx[a] + r * sx[a]
        for b in range(gy):
            py[b] = cy[b] + r * sy[b]
        e1, e2, e3 = e * f1, 1j * e * f2, e * f3
        for a in range(gx):
            u = e1 * px[a]
            v = e2 * sx[a]
            z = e3 * sx[a] - e2 * cx[a]
            for b in range(gy):
                acc[a, b] += u * py[b] + v * cy[b] + z * sy[b]


def _uniform_step(v):
    if v.size < 3:
        return 0.0
    h = (v[-1] - v[0]) / (v.size - 1)
    return float(h) if h > 0 and np.all(np.abs(np.diff(v) - h) <= 1e-13) else 0.0


def _grid_sum(band, t, offset, xs, ys, spec):
    edges = panel_edges(band, t, offset, spec)
    npanel = edges.size - 1
    nodes = npanel * spec.order
    if nodes > spec.max_nodes:
        raise ResolutionRefused(nodes, spec.max_nodes)
    gx, gw = np.polynomial.legendre.leggauss(spec.order)
    V = float(band.V)
    d_lo = float(discriminant(band.k_lo, V))
    d_hi = float(discriminant(band.k_hi, V))
    lam_ref = 0.5 * (band.k_lo**2 + band.k_hi**2)
    acc = np.zeros((xs.size, ys.size), dtype=complex)
    x_step, y_step = _uniform_step(xs), _uniform_step(ys)
    for start in range(0, npanel, spec.chunk_panels):
        a = edges[start:min(start + spec.chunk_panels, npanel) + 1]
        mid = 0.5 * (a[1:] + a[:-1])
        hw = 0.5 * (a[1:] - a[:-1])
        theta = (mid[:, None] + hw[:, None] * gx[None, :]).ravel()
        w = (hw[:, None] * gw[None, :]).ravel()
        seed = np.interp(fold(theta), band._theta_tab, band._k_tab)
        _accumulate(theta, w, seed, V, float(band.k_lo), float(band.k_hi), d_lo, d_hi,
                    float(t), float(offset), lam_ref, xs, ys, x_step, y_step, acc)
    acc *= np.exp(-1j * t * lam_ref) / (2 * pi)
    return acc, nodes


def kernel_grid(band: Band, t: float, offset: int, xs, ys,
                spec: QuadratureSpec | None = None) -> KernelGrid:
    """``K_{n,t}(x' + offset, y')`` for all ``x'`` in ``xs`` and ``y'`` in ``ys``.

    Uses the closed form at any real ``t``; the public :func:`kernel`
    reduces negative times through conjugation instead.
    """
    spec = spec or QuadratureSpec()
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    if np.any((xs <= 0) | (xs >= 1)) or np.any((ys <= 0) | (ys >= 1)):
        raise ValueError("cell coordinates must lie in (0, 1)")
    vals, nodes = _grid_sum(band, float(t), int(offset), xs, ys, spec)
    return KernelGrid(values=vals, xs=xs, ys=ys, t=float(t), offset=int(offset), nodes=nodes)


def kernel_direct(q: KernelQuery, spec: QuadratureSpec | None = None) -> complex:
    """Quadrature at the query's own sign of ``t`` (no symmetry reduction)."""
    g = kernel_grid(q.band(), q.t, q.offset, [q.xp], [q.yp], spec)
    return complex(g.values[0, 0])


def kernel(q: KernelQuery, spec: QuadratureSpec | None = None) -> complex:
    """``K_{n,t}(x, y)``; negative ``t`` goes through ``conj K_{n,-t}(y, x)``."""
    if q.t < 0:
        return complex(np.conj(kernel_direct(q.swapped(t=-q.t), spec)))
    return kernel_direct(q, spec)


def kernel_oracle_eigen(q: KernelQuery, grid_size: int = 10_000) -> complex:
    """Trapezoid over a midpoint-shifted uniform grid with normalized Bloch waves.

    The shift keeps the grid off ``theta = 0, +-pi`` where one band edge
    makes the unnormalized wave vanish identically.
    """
    if grid_size < 2 or grid_size % 2:
        raise ValueError("grid_size must be a positive even integer")
    band = q.band()
    theta = -pi + (np.arange(grid_size) + 0.5) * (2 * pi / grid_size)
    k, A0, B0, norm2 = unit_cell_gram(band, theta)
    ux = np.exp(1j * q.jx * theta) * (A0 * np.cos(k * q.xp) + B0 * np.sin(k * q.xp) / k)
    uy = np.exp(1j * q.jy * theta) * (A0 * np.cos(k * q.yp) + B0 * np.sin(k * q.yp) / k)
    vals = np.exp(-1j * q.t * k * k) * ux * np.conj(uy) / norm2
    return complex(vals.mean())


def _floquet(k, z, x):
    # solution with A_j = z^j A_0, B_j = z^j B_0 (e^{i theta} replaced by z)
    j = np.floor(x)
    xr = x - j
    A0 = -np.sin(k) / k
    B0 = np.cos(k) - z
    return z**j * (A0 * np.cos(k * xr) + B0 * np.sin(k * xr) / k), A0, B0


def floquet_multipliers(lam: complex, V) -> tuple[complex, complex]:
    """Roots of ``z^2 - D(sqrt(lam)) z + 1``, contracting root first."""
    V = coupling(V)
    k = np.sqrt(complex(lam))
    D = 2 * np.cos(k) + V * (np.sin(k) / k if k != 0 else 1.0)
    root = np.sqrt(D * D - 4)
    z1, z2 = (D + root) / 2, (D - root) / 2
    return (z1, z2) if abs(z1) < abs(z2) else (z2, z1)


def resolvent_kernel(lam: complex, x: float, y: float, V) -> complex:
    """Green's function ``(H - lam)^{-1}(x, y)`` off the spectrum.

    With ``W(f, g) = f g' - f' g`` the kernel is
    ``phi_+(x v y) phi_-(x ^ y) / W(phi_+, phi_-)``, where ``phi_+`` decays
    to the right (contracting multiplier).  At ``V = 0, lam = -1`` this is
    ``exp(-|x - y|) / 2``.
    """
    V = coupling(V)
    lam = complex(lam)
    z, w = floquet_multipliers(lam, V)
    if abs(z) >= 1 - SPECTRUM_MARGIN:
        raise ValueError(f"lambda={lam} is within {SPECTRUM_MARGIN} of the spectrum")
    k = np.sqrt(lam)
    hi, lo = max(x, y), min(x, y)
    phi_p, A0, _ = _floquet(k, z, hi)
    phi_m, _, _ = _floquet(k, w, lo)
    wr = A0 * (z - w)
    return complex(phi_p * phi_m / wr)


@dataclass(frozen=True)
class StoneResult:
    value: complex
    excluded_mass: float


def kernel_via_stone(q: KernelQuery, grid_size: int = 4096, eps: float = STONE_EPS,
                     with_excluded: bool = False):
    """Energy-integral route: ``((-1)^{n-1}/pi) int e^{-it lam} Im[phi phi_- / W] d lam``.

    The interval ``[lam_lo + eps, lam_hi - eps]`` is mapped by a cosine
    substitution that absorbs the inverse square-root edge behaviour; the
    mass of the two excluded slivers is estimated from that edge law.
    """
    band = q.band()
    lo, hi = band.k_lo**2 + eps, band.k_hi**2 - eps
    order = 16
    panels = max(1, -(-grid_size // order))
    gx, gw = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, pi, panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    hw = 0.5 * (edges[1:] - edges[:-1])
    u = (mid[:, None] + hw[:, None] * gx[None, :]).ravel()
    wu = (hw[:, None] * gw[None, :]).ravel()

    def integrand(lam):
        k = np.sqrt(lam)
        c = np.clip(discriminant(k, band.V) / 2, -1.0, 1.0)
        theta = np.arccos(c)
        A0 = -sinc_deriv(k, 0)
        Bp = np.cos(k) - np.exp(1j * theta)
        Bm = np.cos(k) - np.exp(-1j * theta)
        px = np.exp(1j * q.jx * theta) * (A0 * np.cos(k * q.xp) + Bp * np.sin(k * q.xp) / k)
        my = np.exp(-1j * q.jy * theta) * (A0 * np.cos(k * q.yp) + Bm * np.sin(k * q.yp) / k)
        W = -2j * sinc_deriv(k, 0) * np.sin(theta)
        return np.exp(-1j * q.t * lam) * np.imag(px * my / W)

    lam = lo + (hi - lo) * (1 - np.cos(u)) / 2
    jac = (hi - lo) * np.sin(u) / 2
    sign = (-1) ** (q.n - 1)
    value = sign / pi * np.sum(wu * jac * integrand(lam))
    # integrand ~ c / sqrt(distance to edge): sliver mass = 2 * eps * |f(edge +- eps)|
    excluded = 0.0
    if eps > 0:
        excluded = float(2 * eps * np.abs(integrand(np.array([lo, hi]))).sum() / pi)
    if with_excluded:
        return StoneResult(complex(value), excluded)
    return complex(value)


def amplitude_l1(band: Band, xp: float, yp: float, grid: int = 4096) -> tuple[float, float]:
    """``((1/2pi) int |a_n| d theta, max |a_n|)`` on a midpoint grid."""
    theta = -pi + (np.arange(grid) + 0.5) * (2 * pi / grid)
    a = np.abs(amplitude(band, theta, xp, yp))
    return float(a.mean()), float(a.max())


# --- van der Corput -------------------------------------------------------

def vdc_constant(k: int) -> int:
    """``c_k = 5 * 2^(k-1) - 2``."""
    if k < 1:
        raise ValueError("order must be >= 1")
    return 5 * 2 ** (k - 1) - 2


@dataclass(frozen=True)
class VdCInput:
    k: int
    m_k: float
    psi_end: float
    psi_l1: float
    t: float

    def __post_init__(self):
        if self.k not in (1, 2, 3):
            raise ValueError(f"order must be 1, 2 or 3, got {self.k}")
        if not self.m_k > 0:
            raise ValueError("m_k must be positive")
        if not self.t > 0:
            raise ValueError("t must be positive")
        if self.psi_end < 0 or self.psi_l1 < 0:
            raise ValueError("psi_end and psi_l1 are absolute values")


def van_der_corput_bound(v: VdCInput) -> float:
    """``t^(-1/k) c_k m_k^(-1/k) (|psi(b)| + int |psi'|)``."""
    return (v.t ** (-1.0 / v.k) * vdc_constant(v.k) * v.m_k ** (-1.0 / v.k)
            * (v.psi_end + v.psi_l1))


@dataclass(frozen=True)
class ThetaInterval:
    a: float
    b: float
    k: int

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError("empty interval")
        if self.k not in (1, 2, 3):
            raise ValueError("order must be 1, 2 or 3")


@dataclass(frozen=True)
class IntervalBound:
    interval: ThetaInterval
    m_k: float
    bound: float | None
    note: str = ""


@dataclass(frozen=True)
class BandBound:
    """Sum of per-interval bounds; ``total`` is ``inf`` if any piece is unavailable."""

    total: float
    pieces: tuple[IntervalBound, ...]
    label: str = "grid-certified"
    meta: dict = field(default_factory=dict)

    @property
    def available(self) -> bool:
        return all(p.bound is not None for p in self.pieces)


def _phase_derivative(band, theta, k, s):
    jet = lambda_jet(band, theta)
    if k == 1:
        return np.asarray(jet.d1) - s
    return np.asarray(jet.d2 if k == 2 else jet.d3)


def certified_band_bound(band: Band, q: KernelQuery, partition, grid: int = VDC_GRID) -> BandBound:
    """Assemble van der Corput bounds over ``partition`` for ``|K_{n,t}|``.

    The phase is ``-(lambda - s theta)`` and the amplitude is ``a_n``; each
    ``m_k`` is a grid infimum times 0.9, hence the "grid-certified" label.
    Order-1 pieces also require ``lambda'`` monotone on the grid.
    """
    t = abs(q.t)
    if t == 0:
        raise ValueError("bound needs t != 0")
    xp, yp = (q.xp, q.yp) if q.t > 0 else (q.yp, q.xp)
    s = q.offset / q.t
    pieces = []
    for iv in partition:
        th = np.linspace(iv.a, iv.b, grid)
        der = np.abs(_phase_derivative(band, th, iv.k, s))
        m = VDC_SAFETY * float(der.min())
        note = ""
        ok = m > 0
        if ok and iv.k == 1:
            # endpoints may sit on the zeros of lambda'' that define the split
            d2 = np.asarray(lambda_jet(band, th[1:-1]).d2)
            if np.any(d2 > 0) and np.any(d2 < 0):
                ok, note = False, "phase derivative not monotone"
        elif not ok:
            note = "grid infimum of the phase derivative is zero"
        if not ok:
            pieces.append(IntervalBound(iv, m, None, note))
            continue
        psi_end = abs(amplitude(band, iv.b, xp, yp))
        dpsi = np.abs(amplitude_dtheta(band, th, xp, yp))
        psi_l1 = float(np.sum(0.5 * (dpsi[1:] + dpsi[:-1]) * np.diff(th)))
        b = van_der_corput_bound(VdCInput(iv.k, m, float(psi_end), psi_l1, t)) / (2 * pi)
        pieces.append(IntervalBound(iv, m, b))
    total = sum(p.bound for p in pieces) if all(p.bound is not None for p in pieces) else np.inf
    return BandBound(total=float(total), pieces=tuple(pieces),
                     meta={"grid": grid, "safety": VDC_SAFETY, "s": s})


def resonant_partition(band: Band) -> list[ThetaInterval]:
    """Four-piece partition of one period around the top edge ``n pi``.

    Orders 3 on the two inflection windows and 2 elsewhere, matching the
    resonant-velocity argument (independent of ``s``).
    """
    n = band.n
    d = (band.V**2 / (4 * n * pi)) ** (1 / 3)
    c = n * pi
    return [ThetaInterval(c - 2 * d, c - d / 2, 3),
            ThetaInterval(c - d / 2, c + d / 2, 2),
            ThetaInterval(c + d / 2, c + 2 * d, 3),
            ThetaInterval(c + 2 * d, c + 2 * pi - 2 * d, 2)]


def monotone_partition(band: Band) -> list[ThetaInterval]:
    """Order-1 pieces split at the two inflection points around ``n pi``."""
    n = band.n
    off = n * pi - inflection_point(band)
    c = n * pi
    return [ThetaInterval(c - off, c + off, 1),
            ThetaInterval(c + off, c + 2 * pi - off, 1)]


def best_band_bound(band: Band, q: KernelQuery, grid: int = VDC_GRID) -> BandBound:
    """Smallest available bound over the built-in partitions."""
    best = None
    for part in (resonant_partition(band), monotone_partition(band)):
        bb = certified_band_bound(band, q, part, grid)
        if best is None or bb.total < best.total:
            best = bb
    return best
