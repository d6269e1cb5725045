"""Bloch waves, Wronskians and the propagator amplitude.

On the cell ``(j, j+1)`` a Bloch wave is
``A_j cos k(x-j) + B_j sin k(x-j) / k`` with ``(A_j, B_j) = e^{ij theta} (A_0, B_0)``,
``A_0 = -sin(k)/k`` and ``B_0 = cos k - e^{i theta}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .bands import Band, k_of_theta
from .discriminant import d_prime, sinc_deriv


class DegenerateWaveError(ValueError):
    """The Bloch wave vanishes identically on the unit cell."""


@dataclass(frozen=True)
class BlochWave:
    """Generalized eigenfunction of band ``band`` at quasimomentum ``theta``."""

    band: Band
    theta: float
    k: float
    A0: complex
    B0: complex

    @classmethod
    def at(cls, band: Band, theta: float) -> "BlochWave":
        k = k_of_theta(band, theta)
        return cls.from_k(band, theta, k)

    @classmethod
    def from_k(cls, band, theta, k):
        A0 = -float(sinc_deriv(k, 0))
        B0 = np.cos(k) - np.exp(1j * theta)
        return cls(band=band, theta=float(theta), k=float(k), A0=complex(A0), B0=complex(B0))

    def coefficients(self, j: int) -> tuple[complex, complex]:
        ph = np.exp(1j * j * self.theta)
        return ph * self.A0, ph * self.B0

    def __call__(self, x):
        return bloch_eval(self, x)

    def derivative(self, x):
        return bloch_deriv(self, x)

    def scaled(self, factor: complex) -> "BlochWave":
        return BlochWave(self.band, self.theta, self.k, factor * self.A0, factor * self.B0)


def _cell(x):
    x = np.asarray(x, dtype=float)
    j = np.floor(x)
    return j, x - j


def bloch_eval(w: BlochWave, x):
    """Piecewise value of the Bloch wave; continuous across the integers."""
    j, xr = _cell(x)
    k = w.k
    ph = np.exp(1j * j * w.theta)
    val = ph * (w.A0 * np.cos(k * xr) + w.B0 * xr * sinc_deriv(k * xr, 0))
    return val if val.ndim else complex(val)


def bloch_deriv(w: BlochWave, x):
    """Right-continuous derivative (the value on the cell containing ``x``)."""
    j, xr = _cell(x)
    k = w.k
    ph = np.exp(1j * j * w.theta)
    val = ph * (-k * w.A0 * np.sin(k * xr) + w.B0 * np.cos(k * xr))
    return val if val.ndim else complex(val)


def wronskian(phi: BlochWave, psi: BlochWave, x):
    """``phi psi' - phi' psi`` evaluated numerically at ``x``."""
    return phi(x) * psi.derivative(x) - phi.derivative(x) * psi(x)


def wronskian_pair(band: Band, theta: float) -> complex:
    """Closed form of ``W(phi_theta, phi_-theta) = -2i sin(k) sin(theta) / k``."""
    k = k_of_theta(band, theta)
    return -2j * float(sinc_deriv(k, 0)) * np.sin(theta)


def normalization(w: BlochWave) -> float:
    """``L^2(0, 1)`` norm of the wave by adaptive Gauss-Kronrod quadrature."""
    f = lambda x: abs(bloch_eval(w, x)) ** 2
    val, _ = quad(f, 0.0, 1.0, epsabs=0.0, epsrel=1e-13, limit=200)
    if val < 1e-28:
        raise DegenerateWaveError(
            f"Bloch wave vanishes on the cell (n={w.band.n}, theta={w.theta})")
    return float(np.sqrt(val))


def normalized(w: BlochWave) -> BlochWave:
    return w.scaled(1.0 / normalization(w))


def amplitude_factors(band: Band, theta, k=None):
    """Theta-only factors ``(F1, F2, F3)`` of the amplitude.

    ``a = F1 p(x) p(y) + i F2 sin k(x-y) + F3 sin(kx) sin(ky)`` with
    ``p(x) = cos kx + V sin(kx) / (2k)``.  ``F3`` is written without the
    ``sin(theta)^2 / sin(k)`` quotient so it stays finite where ``sin k = 0``.
    """
    theta = np.asarray(theta, dtype=float)
    if k is None:
        k = np.asarray(k_of_theta(band, theta), dtype=float)
    V = band.V
    dp = d_prime(k, V)
    sk, ck = np.sin(k), np.cos(k)
    F1 = -2.0 * sk / dp
    F2 = -2.0 * np.sin(theta) / dp
    F3 = (-4.0 * sk + 4.0 * V * ck / k + V**2 * sk / k**2) / (2.0 * dp)
    return k, F1, F2, F3


def amplitude(band: Band, theta, xp, yp):
    """Propagator amplitude ``a_n(theta, x', y')`` for ``x', y'`` in ``(0, 1)``."""
    k, F1, F2, F3 = amplitude_factors(band, theta)
    V = band.V
    xp = np.asarray(xp, dtype=float)
    yp = np.asarray(yp, dtype=float)
    px = np.cos(k * xp) + V / (2 * k) * np.sin(k * xp)
    py = np.cos(k * yp) + V / (2 * k) * np.sin(k * yp)
    val = F1 * px * py + 1j * F2 * np.sin(k * (xp - yp)) + F3 * np.sin(k * xp) * np.sin(k * yp)
    return val if np.ndim(val) else complex(val)


def amplitude_dtheta(band: Band, theta, xp, yp, step=1e-5):
    """Central-difference ``d a_n / d theta``."""
    theta = np.asarray(theta, dtype=float)
    return (amplitude(band, theta + step, xp, yp)
            - amplitude(band, theta - step, xp, yp)) / (2 * step)


def amplitude_eigen(band: Band, theta: float, xp: float, yp: float) -> complex:
    """Amplitude from normalized Bloch waves: ``u_theta(x) u_-theta(y)``.

    Independent of the closed form: uses numeric normalization only.
    """
    w = BlochWave.at(band, theta)
    C = normalization(w)
    wm = BlochWave.from_k(band, -theta, w.k)
    return complex(w(xp) * wm(yp) / C**2)


def unit_cell_gram(band: Band, thetas, order: int | None = None):
    """Fixed Gauss-Legendre ``int_0^1 |phi_theta|^2`` for an array of ``theta``."""
    if order is None:
        order = 48 + int(2 * band.k_hi)
    x, wts = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    wts = 0.5 * wts
    thetas = np.asarray(thetas, dtype=float)
    k = np.asarray(k_of_theta(band, thetas), dtype=float)
    A0 = -sinc_deriv(k, 0)
    B0 = np.cos(k) - np.exp(1j * thetas)
    kx = np.outer(k, x)
    phi = A0[:, None] * np.cos(kx) + B0[:, None] * np.sin(kx) / k[:, None]
    return k, A0, B0, (np.abs(phi) ** 2) @ wts

