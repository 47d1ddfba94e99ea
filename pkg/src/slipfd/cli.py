"""Command-line front end.

Subcommands: ``run`` (one scenario), ``sweep`` (vary the slip length or the
time step and aggregate), ``fit`` (angular-velocity fit on a series CSV),
``plot`` (static SVG figures, no plotting dependency), ``check`` (built-in
property suite).  Exit codes: 0 success, 1 usage, 2 configuration,
3 numerical failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import driver
from .driver import ConfigError, SimConfig, fit_jeffery
from .lsfd import CgNonconvergenceError, LossOfPositivityError
from .mesh import MeshError
from .rigid import ProximityError
from .stokes import CompatibilityError, SolverError
from .transport import CharacteristicEscapeError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

_NUMERICAL_ERRORS = (
    CgNonconvergenceError, LossOfPositivityError, SolverError,
    CompatibilityError, CharacteristicEscapeError, ProximityError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _out_root(explicit: str | None) -> str:
    if explicit:
        return explicit
    return os.environ.get("SLIPFD_OUT_DIR", "runs")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", default=None, choices=["jeffery", "sedimentation"])
    p.add_argument("--config", default=None, help="INI config file")
    p.add_argument("--ls", default=None, help="slip length (or comma list for sweep)")
    p.add_argument("--dt", default=None, help="time step (or comma list for sweep)")
    p.add_argument("--h1", type=float, default=None)
    p.add_argument("--tfinal", type=float, default=None)
    p.add_argument("--out", default=None, help="output directory root")
    p.add_argument("--stokes-mode", dest="stokes_mode", action="store_true", default=None)
    p.add_argument("--no-stokes-mode", dest="stokes_mode", action="store_false")
    p.add_argument("--output-every", type=int, default=None)


def _build_config(args, ls=None, dt=None) -> SimConfig:
    if args.config:
        cfg = driver.load_config(args.config)
        if args.scenario and args.scenario != cfg.scenario:
            cfg = driver.scenario_config(args.scenario)
    else:
        cfg = driver.scenario_config(args.scenario or "jeffery")
    overrides = {}
    ls_val = ls if ls is not None else args.ls
    if ls_val is not None:
        overrides["ls"] = float(ls_val)
    dt_val = dt if dt is not None else args.dt
    if dt_val is not None:
        overrides["dt"] = float(dt_val)
    if args.h1 is not None:
        overrides["h1"] = args.h1
    if args.tfinal is not None:
        overrides["t_final"] = args.tfinal
    if args.stokes_mode is not None:
        overrides["stokes_mode"] = args.stokes_mode
    if getattr(args, "output_every", None) is not None:
        overrides["output_every"] = args.output_every
    from dataclasses import replace
    cfg = replace(cfg, **overrides)
    cfg.validate()
    return cfg


def _run_check(verbose: bool = True) -> bool:
    results = driver.builtin_check()
    for r in results:
        if verbose:
            print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: {r.detail}")
    return all(r.passed for r in results)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_run(args) -> int:
    cfg = _build_config(args)
    validated = None if args.skip_check else _run_check(verbose=not args.quiet)
    out_dir = os.path.join(_out_root(args.out),
                           f"{cfg.scenario}_ls{cfg.ls:g}_dt{cfg.dt:g}")
    result = driver.run_scenario(cfg, out_dir, validated=validated)
    print(f"status: {result.status}")
    print(f"output: {out_dir}")
    if result.gamma_fit is not None:
        print(f"gamma_fit: {result.gamma_fit:.6g}  p_fit: {result.p_fit:.6g}")
    return EXIT_OK if result.status == "completed" else EXIT_NUMERICAL


def _cmd_sweep(args) -> int:
    root = _out_root(args.out)
    if args.ls is not None and "," in str(args.ls):
        values = [float(v) for v in str(args.ls).split(",")]
        key = "ls"
    elif args.dt is not None and "," in str(args.dt):
        values = [float(v) for v in str(args.dt).split(",")]
        key = "dt"
    else:
        print("error: sweep needs a comma list for --ls or --dt", file=sys.stderr)
        return EXIT_USAGE

    rows = []
    for v in values:
        cfg = _build_config(args, ls=v if key == "ls" else None,
                            dt=v if key == "dt" else None)
        out_dir = os.path.join(root, f"{cfg.scenario}_{key}{v:g}")
        result = driver.run_scenario(cfg, out_dir, validated=None)
        print(f"{key}={v:g}: {result.status}", flush=True)
        if result.status != "completed":
            return EXIT_NUMERICAL
        if key == "ls":
            rows.append([v, result.gamma_fit, result.p_fit])
        else:
            final = result.records[-1]
            mags = [float(np.hypot(r.C1[0], r.C1[1])) for r in result.records[1:]]
            c2s = [abs(r.C2) for r in result.records[1:]]
            rows.append([v, max(mags), max(c2s), final.theta])

    os.makedirs(root, exist_ok=True)
    if key == "ls":
        path = os.path.join(root, "p_vs_ls.csv")
        header = ["ls", "gamma_fit", "p_fit"]
    else:
        path = os.path.join(root, "c_vs_dt.csv")
        header = ["dt", "max_C1_norm", "max_C2_abs", "final_theta"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_fit(args) -> int:
    theta, omega = _read_theta_omega(args.series)
    gamma, p = fit_jeffery(theta, omega)
    print(f"gamma_fit: {gamma:.10g}")
    print(f"p_fit: {p:.10g}")
    return EXIT_OK


def _cmd_check(args) -> int:
    ok = _run_check()
    print("check: PASS" if ok else "check: FAIL")
    return EXIT_OK if ok else EXIT_NUMERICAL


# ---------------------------------------------------------------------------
# plotting (hand-rolled SVG)


def _read_csv_columns(path: str) -> dict[str, list[str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols: dict[str, list[str]] = {name: [] for name in header}
        for row in reader:
            for name, value in zip(header, row):
                cols[name].append(value)
    return cols


def _read_theta_omega(path: str):
    cols = _read_csv_columns(path)
    try:
        theta = np.array([float(v) for v in cols["theta"]])
        omega = np.array([float(v) for v in cols["omega"]])
    except KeyError as exc:
        raise ConfigError(f"series file lacks column {exc}") from exc
    return theta, omega


_SVG_COLORS = ["#1f6fb4", "#d1495b", "#3a7d44", "#8d5a97", "#c98a1b"]


def _svg_figure(path, curves, title, xlabel, ylabel, width=640, height=440):
    """Minimal static line plot: axes, ticks, legend, polylines.

    curves: list of (label, x array, y array, style) with style "line" or
    "dots".
    """
    ml, mr, mt, mb = 70, 20, 40, 55
    pw, ph = width - ml - mr, height - mt - mb
    xs = np.concatenate([np.asarray(c[1], dtype=float) for c in curves])
    ys = np.concatenate([np.asarray(c[2], dtype=float) for c in curves])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    padx, pady = 0.04 * (x1 - x0), 0.06 * (y1 - y0)
    x0, x1, y0, y1 = x0 - padx, x1 + padx, y0 - pady, y1 + pady

    def sx(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return mt + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="15">{title}</text>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
    ]
    for tick in np.linspace(x0 + padx, x1 - padx, 5):
        px = sx(tick)
        out.append(f'<line x1="{px:.1f}" y1="{mt + ph}" x2="{px:.1f}" y2="{mt + ph + 5}" stroke="#444"/>')
        out.append(f'<text x="{px:.1f}" y="{mt + ph + 18}" text-anchor="middle">{tick:.3g}</text>')
    for tick in np.linspace(y0 + pady, y1 - pady, 5):
        py = sy(tick)
        out.append(f'<line x1="{ml - 5}" y1="{py:.1f}" x2="{ml}" y2="{py:.1f}" stroke="#444"/>')
        out.append(f'<text x="{ml - 8}" y="{py + 4:.1f}" text-anchor="end">{tick:.3g}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 12}" text-anchor="middle">{xlabel}</text>')
    out.append(
        f'<text x="18" y="{mt + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 18 {mt + ph / 2:.1f})">{ylabel}</text>'
    )
    for i, (label, cx, cy, style) in enumerate(curves):
        color = _SVG_COLORS[i % len(_SVG_COLORS)]
        cx = np.asarray(cx, dtype=float)
        cy = np.asarray(cy, dtype=float)
        if style == "dots":
            for px, py in zip(cx, cy):
                out.append(f'<circle cx="{sx(px):.2f}" cy="{sy(py):.2f}" r="2.4" fill="{color}"/>')
        else:
            pts = " ".join(f"{sx(px):.2f},{sy(py):.2f}" for px, py in zip(cx, cy))
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = mt + 16 + 16 * i
        out.append(f'<line x1="{ml + pw - 130}" y1="{ly}" x2="{ml + pw - 105}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw - 100}" y="{ly + 4}">{label}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def _cmd_plot(args) -> int:
    cols = _read_csv_columns(args.input)

    def col(name):
        try:
            return np.array([float(v) for v in cols[name]])
        except KeyError:
            raise ConfigError(f"input CSV lacks column {name!r}") from None

    if args.kind == "omega_vs_theta":
        theta, omega = col("theta"), col("omega")
        curves = [("samples", theta, omega, "dots")]
        if args.overlay:
            gamma, p = fit_jeffery(theta, omega)
            tt = np.linspace(theta.min(), theta.max(), 400)
            curves.append((f"fit g={gamma:.3g} p={p:.3g}",
                           tt, 0.5 * gamma * (-1.0 + p * np.cos(2.0 * tt)), "line"))
        _svg_figure(args.out, curves, "angular velocity vs orientation",
                    "theta", "omega")
    elif args.kind == "p_vs_ls":
        curves = [("p", col("ls"), col("p_fit"), "dots"),
                  ("p", col("ls"), col("p_fit"), "line")]
        _svg_figure(args.out, curves, "anisotropy vs slip length", "ls", "p")
    elif args.kind == "coord_vs_time":
        t = col("t")
        curves = [("x", t, col("X_x"), "line"), ("y", t, col("X_y"), "line")]
        _svg_figure(args.out, curves, "particle center vs time", "t", "coordinate")
    elif args.kind == "omega_vs_time":
        curves = [("omega", col("t"), col("omega"), "line")]
        _svg_figure(args.out, curves, "angular velocity vs time", "t", "omega")
    else:
        print(f"error: unknown plot kind {args.kind!r}", file=sys.stderr)
        return EXIT_USAGE

    if args.emit_csv:
        with open(args.emit_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(list(cols))
            writer.writerows(zip(*cols.values()))
    print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="slipfd", description="slip-boundary particle flow simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario")
    _add_run_flags(p_run)
    p_run.add_argument("--skip-check", action="store_true")
    p_run.add_argument("--quiet", action="store_true")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="sweep slip length or time step")
    _add_run_flags(p_sweep)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_fit = sub.add_parser("fit", help="fit the angular-velocity law to a series")
    p_fit.add_argument("series", help="series.csv with theta and omega columns")
    p_fit.set_defaults(func=_cmd_fit)

    p_plot = sub.add_parser("plot", help="render an SVG figure from CSV")
    p_plot.add_argument("--kind", required=True,
                        choices=["omega_vs_theta", "p_vs_ls", "coord_vs_time",
                                 "omega_vs_time"])
    p_plot.add_argument("--input", required=True)
    p_plot.add_argument("--out", required=True)
    p_plot.add_argument("--overlay", action="store_true")
    p_plot.add_argument("--emit-csv", default=None)
    p_plot.set_defaults(func=_cmd_plot)

    p_check = sub.add_parser("check", help="run the built-in property suite")
    p_check.set_defaults(func=_cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, MeshError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
