"""Least-squares power-law fits used by the convergence-order checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PowerFit:
    slope: float
    log_coeff: float
    r2: float

    def predict(self, x):
        return np.exp(self.log_coeff) * np.asarray(x, dtype=float) ** self.slope


def loglog_fit(x, y) -> PowerFit:
    """Fit ``log|y| = slope * log x + log_coeff`` and report R^2."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.abs(np.asarray(y, dtype=float)))
    if lx.size < 2:
        raise ValueError("need at least two points for a slope fit")
    slope, icpt = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + icpt)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return PowerFit(float(slope), float(icpt), float(r2))
