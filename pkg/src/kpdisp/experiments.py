"""Experiment drivers: decay scans, coefficient scaling, completeness, figure data.

Everything here is deterministic for a fixed :class:`RunConfig`; the CSV
writers format floats with ``%.17g`` so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from math import pi
from pathlib import Path

import numpy as np

from .asymptotics import (
    full_edge_expansion,
    kn_ln_asymptotic,
    kn_ln_residuals,
    theta0_asymptotic,
)
from .bands import Band, band_edge, critical_point, get_band, inflection_point, lambda_jet
from .bloch import amplitude
from .discriminant import discriminant
from .fitting import loglog_fit
from .propagator import QuadratureSpec, ResolutionRefused, kernel_grid

MODES = ("resonant", "generic", "super")
R2_THRESHOLD = 0.98

DECAY_COLUMNS = ("n", "V", "mode", "t", "s_effective", "sup_abs_K", "nodes", "grid")
BANDS_COLUMNS = ("n", "V", "l_n", "k_n", "l_n_asym", "k_n_asym", "resid_l", "resid_k")


@dataclass(frozen=True)
class TGrid:
    """Geometric time grid ``t_min .. t_max`` with ``points_per_decade`` samples."""

    t_min: float = 1e2
    t_max: float = 1e5
    points_per_decade: int = 8

    def __post_init__(self):
        if not 0 < self.t_min < self.t_max:
            raise ValueError("need 0 < t_min < t_max")
        if self.points_per_decade < 1:
            raise ValueError("points_per_decade must be >= 1")

    @property
    def decades(self) -> float:
        return float(np.log10(self.t_max / self.t_min))

    def values(self) -> np.ndarray:
        count = int(round(self.decades * self.points_per_decade)) + 1
        return np.geomspace(self.t_min, self.t_max, max(count, 2))


@dataclass(frozen=True)
class RunConfig:
    V: float = 1.0
    bands: tuple[int, ...] = (10,)
    t_grid: TGrid = field(default_factory=TGrid)
    xy_grid: int = 32
    quadrature: QuadratureSpec = field(default_factory=QuadratureSpec)
    output_dir: str = "out"
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.V) or self.V == 0:
            raise ValueError("V must be finite and non-zero")
        if not self.bands:
            raise ValueError("at least one band is required")
        low = 2 if self.V < 0 else 1
        bad = [n for n in self.bands if int(n) != n or n < low]
        if bad:
            raise ValueError(f"invalid band indices {bad} for V={self.V}")
        if self.xy_grid < 8:
            raise ValueError("xy_grid must be >= 8")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def echo(self) -> dict:
        d = asdict(self)
        d["bands"] = list(self.bands)
        return d


def grid_points(grid: int) -> np.ndarray:
    """Uniform interior grid ``(i + 1/2) / grid`` of the unit cell."""
    return (np.arange(grid) + 0.5) / grid


@dataclass(frozen=True)
class SupSample:
    t: float
    offset: int
    value: float
    nodes: int
    grid: int

    @property
    def s_effective(self) -> float:
        return self.offset / self.t if self.t else 0.0


def sup_sample(band: Band, t: float, offset: int, grid: int,
               spec: QuadratureSpec | None = None) -> SupSample:
    if grid < 8:
        raise ValueError("grid must be >= 8")
    xs = grid_points(grid)
    g = kernel_grid(band, t, offset, xs, xs, spec)
    return SupSample(float(t), int(offset), float(np.abs(g.values).max()), g.nodes, grid)


def sup_kernel(band: Band, t: float, offset: int, grid: int,
               spec: QuadratureSpec | None = None) -> float:
    """``max |K_{n,t}(x' + offset, y')`` over the interior ``grid x grid`` mesh."""
    return sup_sample(band, t, offset, grid, spec).value


def target_velocity(band: Band, mode: str) -> float:
    """``s*``: ``lambda'(theta_0)``, ``0``, or ``v_max + 1`` for the three modes."""
    if mode == "generic":
        return 0.0
    v = float(lambda_jet(band, inflection_point(band)).d1)
    if mode == "resonant":
        return v
    if mode == "super":
        return abs(v) + 1.0
    raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


@dataclass(frozen=True)
class DecayReport:
    n: int
    V: float
    mode: str
    s_target: float
    t_values: tuple[float, ...]
    sup_abs_kernel: tuple[float, ...]
    effective_s: tuple[float, ...]
    nodes: tuple[int, ...]
    grid: int
    fitted_slope: float
    fitted_logC: float
    r2: float
    complete: bool = True
    error: str | None = None

    @property
    def flagged(self) -> bool:
        """Fit rejected: poor R^2, or the scan stopped early."""
        return (not self.complete) or not (self.r2 >= R2_THRESHOLD)

    def rows(self):
        for t, s, v, nn in zip(self.t_values, self.effective_s, self.sup_abs_kernel, self.nodes):
            yield (self.n, self.V, self.mode, t, s, v, nn, self.grid)


def decay_scan(band: Band, mode: str, cfg: RunConfig, progress=None) -> DecayReport:
    """Sweep ``t`` over ``cfg.t_grid`` at the mode's velocity and fit the log-log slope."""
    if cfg.t_grid.decades < 3 - 1e-9:
        raise ValueError("decay scans need a t grid spanning at least 3 decades")
    s_star = target_velocity(band, mode)
    samples, error = [], None
    for t in cfg.t_grid.values():
        offset = int(round(s_star * t))
        try:
            samples.append(sup_sample(band, t, offset, cfg.xy_grid, cfg.quadrature))
        except ResolutionRefused as exc:
            error = str(exc)
            break
        if progress is not None:
            progress(samples[-1])
    ts = [s.t for s in samples]
    sups = [s.value for s in samples]
    if len(samples) >= 2:
        fit = loglog_fit(ts, sups)
        slope, logc, r2 = fit.slope, fit.log_coeff, fit.r2
    else:
        slope = logc = r2 = float("nan")
    return DecayReport(
        n=band.n, V=band.V, mode=mode, s_target=s_star, t_values=tuple(ts),
        sup_abs_kernel=tuple(sups), effective_s=tuple(s.s_effective for s in samples),
        nodes=tuple(s.nodes for s in samples), grid=cfg.xy_grid, fitted_slope=slope,
        fitted_logC=logc, r2=r2, complete=error is None, error=error)


@dataclass(frozen=True)
class ScalingRow:
    n: int
    t: float
    sup_resonant: float
    sup_generic: float

    @property
    def c2_hat(self) -> float:
        return self.sup_resonant * self.t ** (1 / 3)

    @property
    def c2_scaled(self) -> float:
        return self.c2_hat * self.n ** (1 / 9)

    @property
    def c1_proxy(self) -> float:
        return self.sup_generic * self.t ** 0.5


SCALING_COLUMNS = ("n", "V", "t", "sup_resonant", "C2_hat", "C2_hat_n19", "sup_generic", "C1_proxy")


@dataclass(frozen=True)
class ScalingTable:
    V: float
    rows: tuple[ScalingRow, ...]

    @staticmethod
    def _ratio(v):
        v = np.asarray(v, dtype=float)
        return float(v.max() / v.min())

    @property
    def c2_ratio(self) -> float:
        return self._ratio([r.c2_scaled for r in self.rows])

    @property
    def c1_ratio(self) -> float:
        return self._ratio([r.c1_proxy for r in self.rows])

    def decreasing_violations(self) -> int:
        c = [r.c2_hat for r in self.rows]
        return sum(1 for a, b in zip(c, c[1:]) if b > a)

    def csv_rows(self):
        for r in self.rows:
            yield (r.n, self.V, r.t, r.sup_resonant, r.c2_hat, r.c2_scaled,
                   r.sup_generic, r.c1_proxy)


def coefficient_scaling(cfg: RunConfig, reports: dict | None = None) -> ScalingTable:
    """``C2_hat = sup|K| t^(1/3)`` and ``sup|K| t^(1/2)`` per band at the largest ``t``.

    ``reports`` may map ``(n, mode)`` to existing :class:`DecayReport` values;
    otherwise only the largest ``t`` of the grid is evaluated.
    """
    t = float(cfg.t_grid.values()[-1])
    rows = []
    for n in sorted(cfg.bands):
        band = get_band(n, cfg.V)
        sups = {}
        for mode in ("resonant", "generic"):
            rep = (reports or {}).get((n, mode))
            if rep is not None and rep.t_values and np.isclose(rep.t_values[-1], t):
                sups[mode] = rep.sup_abs_kernel[-1]
                continue
            offset = int(round(target_velocity(band, mode) * t))
            sups[mode] = sup_kernel(band, t, offset, cfg.xy_grid, cfg.quadrature)
        rows.append(ScalingRow(n, t, sups["resonant"], sups["generic"]))
    return ScalingTable(cfg.V, tuple(rows))


@dataclass(frozen=True)
class GaussianBump:
    """``exp(-(y - center)^2 / (2 width^2))`` sampled on ``support``."""

    center: float = 0.5
    width: float = 0.1
    amplitude: float = 1.0
    support: tuple[float, float] = (0.0, 1.0)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return self.amplitude * np.exp(-0.5 * ((y - self.center) / self.width) ** 2)


def _cell_rule(points: int):
    g, w = np.polynomial.legendre.leggauss(points)
    return 0.5 * (g + 1), 0.5 * w


def completeness_check(N: int, testfn: GaussianBump, x: float, V: float = 1.0,
                       points_per_cell: int = 256) -> float:
    """``|sum_{n<=N} int K_{n,0}(x, y) f(y) dy - f(x)|`` by per-cell Gauss-Legendre."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if float(x).is_integer():
        raise ValueError("x must not be an integer")
    if testfn.amplitude == 0:
        return 0.0
    a, b = testfn.support
    jx = int(np.floor(x))
    xp = x - jx
    yr, wr = _cell_rule(points_per_cell)
    spec = QuadratureSpec()
    low = 2 if V < 0 else 1
    total = 0.0 + 0.0j
    for cell in range(int(np.floor(a)), int(np.ceil(b))):
        lo, hi = max(a, cell), min(b, cell + 1)
        if hi <= lo:
            continue
        yp = (lo - cell) + (hi - lo) * yr
        wy = (hi - lo) * wr
        fy = testfn(cell + yp)
        for n in range(low, N + 1):
            g = kernel_grid(get_band(n, V), 0.0, jx - cell, [xp], yp, spec)
            total += np.sum(g.values[0] * fy * wy)
    return float(abs(total - testfn(x)))


# --- tables -----------------------------------------------------------------

def bands_table(V: float, ns) -> list[tuple]:
    """Edges and critical points with their large-``n`` asymptotic residuals."""
    rows = []
    for n in ns:
        l_n, k_n = critical_point(n, V), band_edge(n, V)
        k_as, l_as = kn_ln_asymptotic(n, V)
        # residuals from the offsets, which keep digits that l_n - l_as loses
        r_k, r_l = kn_ln_residuals(n, V)
        rows.append((n, V, l_n, k_n, l_as, k_as, r_l, r_k))
    return rows


ASYMPTOTICS_COLUMNS = ("n", "V", "l_n", "y_n", *(f"d{m}" for m in range(2, 7)),
                       *(f"e{p}" for p in range(1, 6)), "theta0", "theta0_asym")


def asymptotics_table(V: float, ns) -> list[tuple]:
    rows = []
    for n in ns:
        exp = full_edge_expansion(n, V)
        try:
            th0 = inflection_point(get_band(n, V))
        except ValueError:
            th0 = float("nan")
        rows.append((n, V, exp.l_n, exp.y_n, *exp.d, *exp.e, th0, theta0_asymptotic(n, V)))
    return rows


def amplitude_max(band: Band, xp: float, yp: float, grid: int = 4096) -> float:
    theta = -pi + (np.arange(grid) + 0.5) * (2 * pi / grid)
    return float(np.abs(amplitude(band, theta, xp, yp)).max())


# --- figure datasets --------------------------------------------------------

def _theta_sym(points):
    return np.linspace(-pi, pi, points)


def figure_datasets(cfg: RunConfig, points: int = 2001) -> dict[str, tuple[tuple, list]]:
    """CSV-ready ``name -> (header, rows)`` for the five band-structure figures."""
    V = cfg.V
    out = {}
    theta = _theta_sym(points)
    low = 2 if V < 0 else 1
    jets = {n: lambda_jet(get_band(n, V), theta) for n in range(low, low + 3)}
    out["fig1_band_functions"] = (("n", "V", "theta", "lambda"), [
        (n, V, th, lam) for n, j in jets.items() for th, lam in zip(theta, j.lam)])
    out["fig3_group_velocity"] = (("n", "V", "theta", "dlambda"), [
        (n, V, th, d) for n, j in jets.items() for th, d in zip(theta, j.d1)])
    out["fig4_curvature"] = (("n", "V", "theta", "d2lambda"), [
        (n, V, th, d) for n, j in jets.items() for th, d in zip(theta, j.d2)])
    ks = np.linspace(1e-3, 4 * pi, points)
    d_rows, edge_rows = [], []
    for v in (abs(V), -abs(V)):
        d_rows += [(v, k, d) for k, d in zip(ks, discriminant(ks, v))]
        for n in range(1, 4):
            k_n = band_edge(n, v)
            edge_rows.append((v, n, k_n, float(discriminant(k_n, v)), 2.0 * (-1) ** n))
    out["fig2_discriminant"] = (("V", "k", "D"), d_rows)
    out["fig2_edges"] = (("V", "n", "k_n", "D_at_k_n", "target"), edge_rows)
    n5, V5 = 1000, 1.0
    band = get_band(n5, V5)
    d = (V5**2 / (4 * n5 * pi)) ** (1 / 3)
    th = np.linspace(n5 * pi - 3 * d, n5 * pi - d / 4, points)
    out["fig5_inflection"] = (("n", "V", "theta", "d2lambda"), [
        (n5, V5, a, b) for a, b in zip(th, lambda_jet(band, th).d2)])
    out["fig5_markers"] = (("n", "V", "theta1", "theta2", "theta0", "theta0_asym"), [
        (n5, V5, n5 * pi - 2 * d, n5 * pi - d / 2, inflection_point(band),
         theta0_asymptotic(n5, V5))])
    return out


def sign_changes(values) -> int:
    v = np.sign(np.asarray(values, dtype=float))
    v = v[v != 0]
    return int(np.sum(v[1:] != v[:-1]))


# --- output -----------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue().encode()


def git_blob_hash(data: bytes) -> str:
    """Content hash as git computes it for a blob."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_outputs(out_dir, command: str, config: dict, tables: dict, extra: dict | None = None):
    """Write ``name.csv`` per table plus ``command.json`` with config echo and hashes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hashes = {}
    for name, (header, rows) in tables.items():
        data = csv_bytes(header, rows)
        path = out / f"{name}.csv"
        path.write_bytes(data)
        hashes[path.name] = git_blob_hash(data)
    meta = {"command": command, "config": config, "files": hashes}
    if extra:
        meta.update(extra)
    side = out / f"{command}.json"
    side.write_text(json.dumps(meta, indent=2, sort_keys=True, default=_json_default) + "\n")
    return hashes


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")
