"""Command-line front end: ``kpdisp <command> [options]``.

Settings come from built-in defaults, then an optional TOML file
(``--config``; top-level keys plus an optional per-command table), then
explicit flags.  Exit codes: 0 success, 2 configuration error,
3 quadrature resolution refused, 4 a ``--check`` failed.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass

import numpy as np

from . import experiments as ex
from .bands import get_band
from .discriminant import discriminant
from .propagator import KernelQuery, QuadratureSpec, ResolutionRefused, kernel, node_count

EXIT_OK, EXIT_CONFIG, EXIT_REFUSED, EXIT_CHECK = 0, 2, 3, 4

DEFAULTS = {
    "V": 1.0,
    "bands": [10],
    "n": 10,
    "t": 1.0,
    "x": 0.3,
    "y": 0.6,
    "mode": "resonant",
    "t_min": 1e2,
    "t_max": 1e5,
    "points_per_decade": 8,
    "xy_grid": 32,
    "nodes_per_oscillation": 8.0,
    "min_nodes": 2000,
    "order": 16,
    "max_nodes": 100_000_000,
    "output_dir": "out",
    "seed": 0,
    "N": [5, 10, 20],
    "center": 0.5,
    "width": 0.1,
}

EXPECTED_SLOPES = {"resonant": (-1 / 3, 0.07), "generic": (-0.5, 0.07), "super": (-1.0, 0.1)}


class ConfigError(ValueError):
    pass


def _int_list(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _common(p):
    p.add_argument("--config", help="TOML file; flags override its values")
    p.add_argument("--V", type=float, help=f"coupling (default {DEFAULTS['V']})")
    p.add_argument("--out", dest="output_dir", help="output directory (default 'out')")
    p.add_argument("--check", action="store_true", help="exit 4 if the built-in acceptance check fails")


def _quad(p):
    p.add_argument("--nodes-per-oscillation", type=float, dest="nodes_per_oscillation",
                   help="quadrature nodes per phase oscillation (default 8, minimum 4)")
    p.add_argument("--min-nodes", type=int, dest="min_nodes", help="node floor (default 2000)")
    p.add_argument("--order", type=int, help="Gauss-Legendre panel order (default 16)")
    p.add_argument("--max-nodes", type=int, dest="max_nodes",
                   help="refuse queries needing more nodes (default 1e8)")


def _tgrid(p):
    p.add_argument("--t-min", type=float, dest="t_min", help="smallest t (default 1e2)")
    p.add_argument("--t-max", type=float, dest="t_max", help="largest t (default 1e5)")
    p.add_argument("--ppd", type=int, dest="points_per_decade", help="t points per decade (default 8)")
    p.add_argument("--grid", type=int, dest="xy_grid", help="sup grid per axis (default 32)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kpdisp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bands", help="critical points, edges and asymptotic residuals")
    _common(p)
    p.add_argument("--bands", type=_int_list, help="band indices (default 1..20)")

    p = sub.add_parser("asymptotics", help="Taylor/Puiseux coefficients and theta_0")
    _common(p)
    p.add_argument("--bands", type=_int_list, help="band indices (default 10)")

    p = sub.add_parser("kernel", help="single kernel value K_{n,t}(x, y)")
    _common(p)
    _quad(p)
    p.add_argument("--n", type=int, help="band index (default 10)")
    p.add_argument("--t", type=float, help="time (default 1)")
    p.add_argument("--x", type=float, help="position x, not an integer (default 0.3)")
    p.add_argument("--y", type=float, help="position y, not an integer (default 0.6)")

    p = sub.add_parser("decay", help="sup|K| over a t sweep with slope fit")
    _common(p)
    _quad(p)
    _tgrid(p)
    p.add_argument("--n", type=int, help="band index (default 10)")
    p.add_argument("--mode", choices=ex.MODES, help="velocity mode (default resonant)")

    p = sub.add_parser("scaling", help="coefficient scaling across bands")
    _common(p)
    _quad(p)
    _tgrid(p)
    p.add_argument("--bands", type=_int_list, help="band indices (default 10,20,40,80)")

    p = sub.add_parser("completeness", help="partial sums of band projections at t = 0")
    _common(p)
    p.add_argument("--N", type=_int_list, help="band counts (default 5,10,20)")
    p.add_argument("--x", type=float, help="evaluation point (default 0.5)")

    p = sub.add_parser("figures", help="CSV datasets for the band-structure figures")
    _common(p)
    return parser


def _load_toml(path):
    try:
        import tomli
    except ImportError as exc:  # pragma: no cover
        raise ConfigError("reading TOML needs the 'tomli' package") from exc
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc


def resolve(args, command_defaults=None) -> dict:
    """Merge defaults, TOML (top level then ``[command]`` table) and flags."""
    merged = dict(DEFAULTS)
    merged.update(command_defaults or {})
    if getattr(args, "config", None):
        data = _load_toml(args.config)
        section = data.pop(args.command, {}) if isinstance(data.get(args.command), dict) else {}
        for src in (data, section):
            for key, val in src.items():
                if isinstance(val, dict):
                    continue
                if key not in DEFAULTS:
                    raise ConfigError(f"unknown config key {key!r}")
                merged[key] = val
    for key, val in vars(args).items():
        if key in DEFAULTS and val is not None:
            merged[key] = val
    if args.output_dir is not None:
        merged["output_dir"] = args.output_dir
    for key in ("bands", "N"):
        if isinstance(merged[key], (int, str)):
            merged[key] = _int_list(merged[key])
    return merged


def _run_config(c) -> ex.RunConfig:
    try:
        spec = QuadratureSpec(float(c["nodes_per_oscillation"]), int(c["min_nodes"]),
                              int(c["order"]), int(c["max_nodes"]))
        return ex.RunConfig(V=float(c["V"]), bands=tuple(int(b) for b in c["bands"]),
                            t_grid=ex.TGrid(float(c["t_min"]), float(c["t_max"]),
                                            int(c["points_per_decade"])),
                            xy_grid=int(c["xy_grid"]), quadrature=spec,
                            output_dir=str(c["output_dir"]), seed=int(c["seed"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


class _Refused(Exception):
    """A decay scan stopped because a query exceeded the node cap."""


@dataclass
class Outcome:
    ok: bool
    message: str


def cmd_bands(c, cfg):
    rows = ex.bands_table(cfg.V, cfg.bands)
    ex.write_outputs(cfg.output_dir, "bands", cfg.echo(), {"bands": (ex.BANDS_COLUMNS, rows)})
    worst = max(abs(float(discriminant(r[3], cfg.V)) - 2.0 * (-1) ** r[0]) for r in rows)
    return Outcome(worst < 1e-10, f"max |D(k_n) - 2(-1)^n| = {worst:.3e}")


def cmd_asymptotics(c, cfg):
    rows = ex.asymptotics_table(cfg.V, cfg.bands)
    ex.write_outputs(cfg.output_dir, "asymptotics", cfg.echo(),
                     {"asymptotics": (ex.ASYMPTOTICS_COLUMNS, rows)})
    return Outcome(True, f"{len(rows)} bands tabulated")


def cmd_kernel(c, cfg):
    try:
        q = KernelQuery(int(c["n"]), float(c["t"]), float(c["x"]), float(c["y"]), cfg.V)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    val = kernel(q, cfg.quadrature)
    nodes = node_count(q.band(), abs(q.t), q.offset if q.t >= 0 else -q.offset, cfg.quadrature)
    rows = [(q.n, q.V, q.t, q.x, q.y, val.real, val.imag, abs(val), nodes)]
    ex.write_outputs(cfg.output_dir, "kernel", {**cfg.echo(), "query": c_query(q)},
                     {"kernel": (("n", "V", "t", "x", "y", "re", "im", "abs", "nodes"), rows)})
    print(f"K = {val.real:.12g} {val.imag:+.12g}i  |K| = {abs(val):.6g}  nodes = {nodes}")
    return Outcome(bool(np.isfinite(abs(val))), "finite kernel value")


def c_query(q):
    return {"n": q.n, "t": q.t, "x": q.x, "y": q.y, "V": q.V}


def cmd_decay(c, cfg):
    mode = c["mode"]
    if mode not in ex.MODES:
        raise ConfigError(f"mode must be one of {ex.MODES}")
    band = get_band(int(c["n"]), cfg.V)
    try:
        rep = ex.decay_scan(band, mode, cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    name = f"decay_n{band.n}_{mode}"
    fit = {"fitted_slope": rep.fitted_slope, "fitted_logC": rep.fitted_logC, "r2": rep.r2,
           "flagged": rep.flagged, "complete": rep.complete, "error": rep.error,
           "s_target": rep.s_target}
    ex.write_outputs(cfg.output_dir, name, {**cfg.echo(), "n": band.n, "mode": mode},
                     {name: (ex.DECAY_COLUMNS, list(rep.rows()))}, {"fit": fit})
    print(f"n={band.n} mode={mode} slope={rep.fitted_slope:.4f} R2={rep.r2:.4f}"
          + (" [flagged]" if rep.flagged else ""))
    if rep.error:
        raise _Refused(rep.error)
    target, tol = EXPECTED_SLOPES[mode]
    ok = abs(rep.fitted_slope - target) <= tol and not rep.flagged
    return Outcome(ok, f"slope {rep.fitted_slope:.4f} vs {target:.4f} +- {tol}, R2 {rep.r2:.4f}")


def cmd_scaling(c, cfg):
    table = ex.coefficient_scaling(cfg)
    ex.write_outputs(cfg.output_dir, "scaling", cfg.echo(),
                     {"scaling": (ex.SCALING_COLUMNS, list(table.csv_rows()))},
                     {"c2_ratio": table.c2_ratio, "c1_ratio": table.c1_ratio,
                      "c2_decreasing_violations": table.decreasing_violations()})
    print(f"C2_hat*n^(1/9) max/min = {table.c2_ratio:.3f}; C1 proxy max/min = {table.c1_ratio:.3f}")
    ok = table.c2_ratio <= 4 and table.c1_ratio <= 4
    return Outcome(ok, "ratios within 4" if ok else "ratio above 4")


def cmd_completeness(c, cfg):
    f = ex.GaussianBump(center=float(c["center"]), width=float(c["width"]))
    x = float(c["x"])
    rows = [(N, cfg.V, x, ex.completeness_check(N, f, x, cfg.V)) for N in c["N"]]
    ex.write_outputs(cfg.output_dir, "completeness", {**cfg.echo(), "N": list(c["N"]), "x": x},
                     {"completeness": (("N", "V", "x", "error"), rows)})
    errs = [r[3] for r in rows]
    ok = all(b <= a for a, b in zip(errs, errs[1:]))
    return Outcome(ok, "errors " + ", ".join(f"{e:.3e}" for e in errs))


def cmd_figures(c, cfg):
    data = ex.figure_datasets(cfg)
    ex.write_outputs(cfg.output_dir, "figures", cfg.echo(), data)
    by_n = {}
    for n, _, _, d2 in data["fig4_curvature"][1]:
        by_n.setdefault(n, []).append(d2)
    fig1 = all(ex.sign_changes(v) == 2 for v in by_n.values())
    th1, th2 = data["fig5_markers"][1][0][2:4]
    inside = [d for _, _, th, d in data["fig5_inflection"][1] if th1 <= th <= th2]
    fig5 = ex.sign_changes(inside) >= 1
    return Outcome(fig1 and fig5, f"two inflections per band: {fig1}; fig5 crossing: {fig5}")


COMMANDS = {
    "bands": (cmd_bands, {"bands": list(range(1, 21))}),
    "asymptotics": (cmd_asymptotics, {"bands": [10]}),
    "kernel": (cmd_kernel, {}),
    "decay": (cmd_decay, {}),
    "scaling": (cmd_scaling, {"bands": [10, 20, 40, 80]}),
    "completeness": (cmd_completeness, {"x": 0.5}),
    "figures": (cmd_figures, {}),
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    func, cmd_defaults = COMMANDS[args.command]
    try:
        c = resolve(args, cmd_defaults)
        cfg = _run_config(c)
        outcome = func(c, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ResolutionRefused, _Refused) as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_REFUSED
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.check:
        print(("PASS: " if outcome.ok else "FAIL: ") + outcome.message)
        return EXIT_OK if outcome.ok else EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
