"""Command line interface: ``kropinakit {convert,classify,geodesic,verify}``.

Exit codes: 0 success (for ``classify``: constant flag curvature), 2 ``classify``
found non-constant curvature, 1 any error (including usage errors).
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from .classify import classify_theorem4, killing_check, lemma4_residual, sample_pairs, space_form_killing_residual
from .errors import KropinaError
from .exprcore import to_source
from .geodesics import F_drift, integrate
from .geom import sample_box
from .invariants import TOLERANCES, all_passed, format_table, run_invariants
from .kropina import (
    AlphaBetaNorm,
    KillingSpray,
    KropinaData,
    KropinaNorm,
    NavigationSpray,
    from_navigation,
)
from .specfile import _TOL_KEYS, ManifoldSpec, load, with_overrides

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONSTANT = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _floats(text: str):
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _tol(text: str):
    name, sep, val = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected NAME=VAL, got {text!r}")
    try:
        return name.strip(), float(val)
    except ValueError:
        raise argparse.ArgumentTypeError(f"tolerance value must be a number: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kropinakit", description="Analyse Kropina metrics F = alpha^2/beta.")
    p.add_argument("--version", action="version", version=f"kropinakit {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--spec", required=True, help="spec file path or bundled name (e.g. s3_hopf)")
        sp.add_argument("--out", help="output path")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--points", type=int)
        sp.add_argument("--dirs", type=int, dest="directions")
        sp.add_argument("--tol", type=_tol, action="append", default=[], metavar="NAME=VAL",
                        help=f"override a tolerance ({', '.join(_TOL_KEYS)}, or a verify check name)")
        sp.add_argument("--eps-dir", type=float, dest="eps_dir")
        sp.add_argument("--workers", type=int)
        return sp

    common(sub.add_parser("convert", help="(a, b) <-> (h, W, kappa) with a spot-check table"))
    common(sub.add_parser("classify", help="constant flag curvature classification"))
    g = common(sub.add_parser("geodesic", help="integrate a geodesic and write a CSV trace"))
    g.add_argument("--x0", type=_floats)
    g.add_argument("--y0", type=_floats)
    g.add_argument("--dt", type=float, default=1e-3)
    g.add_argument("--steps", type=int, default=1000)
    common(sub.add_parser("verify", help="run the invariant suite"))
    return p


def _prepare(args) -> tuple[ManifoldSpec, dict]:
    spec = load(args.spec)
    overrides = {"seed": args.seed, "points": args.points, "directions": args.directions,
                 "workers": args.workers, "eps_dir": args.eps_dir}
    extra = {}
    for name, val in args.tol:
        if name in _TOL_KEYS:
            overrides[_TOL_KEYS[name]] = val
        elif name in TOLERANCES:
            extra[name] = val
        else:
            raise KropinaError(f"unknown tolerance {name!r}")
    return with_overrides(spec, **overrides), extra


def _open_out(path):
    return open(path, "w", newline="") if path else nullcontext(sys.stdout)


# ---------------------------------------------------------------------------
# convert

def _matrix_toml(key, m):
    n = len(m)
    rows = []
    for i in range(n):
        cells = [json.dumps(to_source(m[i][j].expr) if j >= i else "") for j in range(n)]
        rows.append("[" + ", ".join(cells) + "]")
    return f"{key} = [" + (",\n" + " " * (len(key) + 4)).join(rows) + "]"


def _vector_toml(key, v):
    return f"{key} = [" + ", ".join(json.dumps(to_source(c.expr)) for c in v.components) + "]"


def cmd_convert(spec: ManifoldSpec, out=None) -> int:
    chart = spec.chart
    head = [
        "[chart]",
        f"coordinates = {json.dumps(list(chart.coordinates))}",
        f"domain = {json.dumps([list(iv) for iv in chart.domain])}",
        f"eps_dir = {spec.eps_dir!r}",
        "",
    ]
    if isinstance(spec.data, KropinaData):
        K = spec.data
        N = K.navigation
        body = ["[navigation]", _matrix_toml("h", N.h.components), _vector_toml("W", N.W),
                'W_index = "lower"', f"kappa = {json.dumps(N.kappa.source)}"]
    else:
        N = spec.data
        K = from_navigation(N, check_points=sample_pairs(N, spec.sampling)[0])
        body = ["[kropina]", _matrix_toml("a", K.a.components), _vector_toml("b", K.b)]
    text = "\n".join(head + body) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)

    # spot check: F from both descriptions along y = W^sharp (always admissible)
    rng = np.random.default_rng(spec.sampling.seed)
    pts = sample_box(chart, 5, rng)
    Fn, Fab = KropinaNorm(N, spec.eps_dir), AlphaBetaNorm(K, spec.eps_dir)
    print(f"\n# spot check at 5 points (y = W^i), kappa = {N.kappa.source}")
    print(f"# {'x':<36} {'kappa':>12} {'|W|_h - 1':>11} {'F_nav':>14} {'F_ab':>14} {'rel diff':>9}")
    for x in pts:
        y = N.at(x).Wu
        fn, fa = Fn(x, y), Fab(x, y)
        xs = "(" + ", ".join(f"{v:+.4f}" for v in x) + ")"
        print(f"# {xs:<36} {N.kappa(x):>12.6g} {N.unit_length_error(x):>11.2e} "
              f"{fn:>14.8g} {fa:>14.8g} {abs(fn - fa) / fn:>9.1e}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# classify

def run_report(spec: ManifoldSpec) -> dict:
    """The machine-readable RunReport (deterministic for fixed spec and seed)."""
    rep = classify_theorem4(spec.data, spec.sampling)
    N = spec.navigation
    pts, pairs = sample_pairs(N, spec.sampling)
    checks = {"unit_length_max_error": max(N.unit_length_error(x) for x in pts)}
    if rep.killing["passed"]:
        checks["lemma4_residual"] = lemma4_residual(N, pts, spec.sampling.tol_killing)
    if rep.constant_curvature:
        checks["space_form_killing_residual"] = space_form_killing_residual(N, rep.K, pairs)
    return {
        "tool": "kropinakit",
        "version": __version__,
        "spec": {"name": spec.name, "sha256": spec.digest, "kind": spec.kind,
                 "dimension": spec.chart.dim, "coordinates": list(spec.chart.coordinates)},
        "classification": rep.to_dict(),
        "checks": checks,
    }


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def cmd_classify(spec: ManifoldSpec, out=None) -> int:
    t0 = time.perf_counter()
    report = run_report(spec)
    elapsed = time.perf_counter() - t0
    if out:
        Path(out).write_text(report_json(report))
    c = report["classification"]
    t4 = c["theorem4"]
    print(f"spec: {spec.name} ({spec.kind}, n = {spec.chart.dim}, sha256 {spec.digest[:12]})")
    print(f"samples: {c['flag']['count']} (points={spec.sampling.points}, directions={spec.sampling.directions}, "
          f"seed={spec.sampling.seed})")
    print(f"Killing check: {'passed' if c['killing']['passed'] else 'failed'} "
          f"(max |R_ij| = {c['killing']['max_abs_R']:.3e})")
    print(f"(M, h) curvature fit: K = {c['riemannian']['K']:.10g}, residual = {c['riemannian']['residual']:.3e}")
    print(f"flag curvature fit: mean K = {c['flag']['K']:.10g}, spread = {c['flag']['spread']:.3e}, "
          f"max residual = {c['flag']['max_residual']:.3e}")
    if t4["constant_curvature"]:
        print(f"verdict: constant flag curvature K = {t4['K']:.10g}")
    else:
        print("verdict: NOT of constant flag curvature: " + "; ".join(t4["reasons"]))
    print(f"wall-clock: {elapsed:.3f} s")
    if out:
        print(f"report: {out}")
    return EXIT_OK if t4["constant_curvature"] else EXIT_NOT_CONSTANT


# ---------------------------------------------------------------------------
# geodesic

def choose_spray(spec: ManifoldSpec):
    """Killing route when W passes the Killing check, navigation route otherwise."""
    N = spec.navigation
    pts = sample_pairs(N, spec.sampling)[0]
    if killing_check(N, pts, spec.sampling.tol_killing).passed:
        return KillingSpray(N, spec.eps_dir, spec.sampling.tol_killing)
    return NavigationSpray(N, spec.eps_dir)


def cmd_geodesic(spec: ManifoldSpec, x0, y0, dt, steps, out=None) -> int:
    N = spec.navigation
    chart = spec.chart
    if x0 is None:
        x0 = [(lo + hi) / 2 for lo, hi in chart.domain]
    if y0 is None:
        y0 = N.at(x0).Wu
    if len(x0) != chart.dim or len(y0) != chart.dim:
        raise KropinaError(f"--x0 and --y0 need {chart.dim} components")
    spray = choose_spray(spec)
    F = KropinaNorm(N, spec.eps_dir)
    trace = integrate(spray, x0, y0, dt, steps, chart, F)
    drift = F_drift(trace)
    footer = {"spray": spray.provenance, "dt": repr(dt), "steps": len(trace) - 1,
              "exit_reason": trace.exit_reason or "completed", "F_drift": f"{drift:.6e}"}
    with _open_out(out) as fh:
        trace.write_csv(fh, [f"x{i + 1}" for i in range(chart.dim)], footer)
    if out:
        print(f"wrote {len(trace)} samples to {out} (spray={spray.provenance}, F_drift={drift:.3e}, "
              f"exit: {footer['exit_reason']})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify

def cmd_verify(spec: ManifoldSpec, tolerances=None, out=None) -> int:
    results = run_invariants(spec.data, spec.sampling, tolerances)
    table = format_table(results)
    print(f"spec: {spec.name} ({spec.kind})")
    print(table)
    ok = all_passed(results)
    failed = [r.name for r in results if r.passed is False]
    print("all invariants within tolerance" if ok else "FAILED: " + ", ".join(failed))
    if out:
        Path(out).write_text(table + "\n")
    return EXIT_OK if ok else EXIT_ERROR


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        spec, extra = _prepare(args)
        if args.command == "convert":
            return cmd_convert(spec, args.out)
        if args.command == "classify":
            return cmd_classify(spec, args.out)
        if args.command == "geodesic":
            return cmd_geodesic(spec, args.x0, args.y0, args.dt, args.steps, args.out)
        return cmd_verify(spec, extra, args.out)
    except (KropinaError, OSError) as err:
        print(f"kropinakit: error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
