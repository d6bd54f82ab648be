"""The invariant suite run by ``kropinakit verify``.

Each check returns a :class:`CheckResult`. A check whose preconditions do not hold
(e.g. the second-derivative identity for a non-Killing field) is reported with
``passed=None`` and does not affect the overall verdict.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classify import SampleConfig, killing_check, lemma4_residual, sample_pairs
from .errors import KropinaError
from .geom import conformal_christoffel_residual, ricci_identity_residual
from .kropina import (
    AlphaBetaNorm,
    AlphaBetaSpray,
    KillingSpray,
    KropinaData,
    KropinaNorm,
    NavigationData,
    NavigationSpray,
    from_navigation,
    rs_RS_conversion_residual,
)

TOLERANCES = {
    "unit_length": 1e-8,
    "roundtrip": 1e-12,
    "conformal_christoffel": 1e-9,
    "rs_RS_conversion": 1e-9,
    "spray_alpha_beta_vs_navigation": 1e-9,
    "spray_killing_vs_navigation": 1e-9,
    "spray_gauge_invariance": 1e-9,
    "spray_intermediates": 1e-12,
    "F_homogeneity": 1e-12,
    "F_alpha_beta_vs_navigation": 1e-12,
    "ricci_identity": 1e-7,
    "lemma4": 1e-7,
}


@dataclass(frozen=True)
class CheckResult:
    name: str
    residual: float | None
    tol: float
    passed: bool | None
    note: str = ""

    @property
    def status(self) -> str:
        return {True: "PASS", False: "FAIL", None: "n/a"}[self.passed]


def spray_discrepancy(G1, G2, y) -> float:
    """|G1 - G2|_inf / max(|G2|_inf, |y|_inf^2); the floor keeps flat (G = 0) cases meaningful."""
    scale = max(float(np.abs(G2).max()), float(np.abs(y).max()) ** 2)
    return float(np.abs(np.asarray(G1) - np.asarray(G2)).max()) / scale


def alternative_gauge(chart) -> str:
    c = chart.coordinates[0]
    return f"ln(1 + {c}^2/4)"


def _roundtrip_residual(data, points) -> float:
    worst = 0.0
    if isinstance(data, KropinaData):
        back = from_navigation(data.navigation, check_points=points)
        pairs = [(data.a, back.a), (data.b, back.b)]
    else:
        K = from_navigation(data, check_points=points)
        back = K.navigation
        pairs = [(data.h, back.h), (data.W, back.W)]
    for x in points:
        for f1, f2 in pairs:
            v1, v2 = f1.jet(x, 0)[0], f2.jet(x, 0)[0]
            worst = max(worst, float((np.abs(v1 - v2) / np.maximum(1.0, np.abs(v1))).max()))
    return worst


def run_invariants(data, cfg: SampleConfig = SampleConfig(), tolerances: dict | None = None) -> list[CheckResult]:
    tols = dict(TOLERANCES, **(tolerances or {}))
    N: NavigationData = data.navigation if isinstance(data, KropinaData) else data
    pts, pairs = sample_pairs(N, cfg)
    out: list[CheckResult] = []

    def record(name, fn, precondition=None):
        if precondition is not None:
            out.append(CheckResult(name, None, tols[name], None, precondition))
            return
        try:
            r = float(fn())
        except KropinaError as err:
            out.append(CheckResult(name, None, tols[name], False, str(err)))
            return
        out.append(CheckResult(name, r, tols[name], r <= tols[name]))

    unit = max(N.unit_length_error(x) for x in pts)
    out.append(CheckResult("unit_length", unit, tols["unit_length"], unit <= tols["unit_length"],
                           "" if unit <= tols["unit_length"] else "|W|_h != 1"))
    unit_ok = unit <= tols["unit_length"]
    need_unit = None if unit_ok else "requires |W|_h = 1"

    K = data if isinstance(data, KropinaData) else None
    K_alt = None
    if unit_ok:
        if K is None:
            K = from_navigation(N, check_points=pts)
        K_alt = from_navigation(N, kappa=N.kappa + N.chart.field(alternative_gauge(N.chart)), check_points=pts)

    record("roundtrip", lambda: _roundtrip_residual(data, pts), need_unit)
    record("conformal_christoffel",
           lambda: max(conformal_christoffel_residual(Kx.a, 0.5 * Kx.navigation.kappa, x)
                       for Kx in (K, K_alt) for x in pts), need_unit)
    record("rs_RS_conversion",
           lambda: max(rs_RS_conversion_residual(Kx, x) for Kx in (K, K_alt) for x in pts), need_unit)

    nav = NavigationSpray(N, cfg.eps_dir)

    def cross(spray):
        return max(spray_discrepancy(spray(x, y), nav(x, y), y) for x, y in pairs)

    record("spray_alpha_beta_vs_navigation", lambda: cross(AlphaBetaSpray(K, cfg.eps_dir)), need_unit)
    kv = killing_check(N, pts, cfg.tol_killing)
    not_killing = None if kv.passed else f"W is not Killing (max |R_ij| = {kv.max_abs_R:.3g})"
    record("spray_killing_vs_navigation", lambda: cross(KillingSpray(N, cfg.eps_dir, cfg.tol_killing)),
           not_killing)
    record("spray_gauge_invariance", lambda: cross(AlphaBetaSpray(K_alt, cfg.eps_dir)), need_unit)
    record("spray_intermediates",
           lambda: max(AlphaBetaSpray(K, cfg.eps_dir).intermediates(x, y).identity_residual()
                       for x, y in pairs), need_unit)

    Fn = KropinaNorm(N, cfg.eps_dir)

    def homogeneity():
        worst = 0.0
        for x, y in pairs:
            f = Fn(x, y)
            for lam in (0.5, 3.0):
                worst = max(worst, abs(Fn(x, lam * y) - lam * f) / (lam * f))
        return worst

    record("F_homogeneity", homogeneity)

    def f_cross():
        Fab = AlphaBetaNorm(K, cfg.eps_dir)
        return max(abs(Fab(x, y) - Fn(x, y)) / Fn(x, y) for x, y in pairs)

    record("F_alpha_beta_vs_navigation", f_cross, need_unit)
    record("ricci_identity", lambda: max(ricci_identity_residual(N.W, N.h, x) for x in pts))
    record("lemma4", lambda: lemma4_residual(N, pts, cfg.tol_killing), not_killing)
    return out


def all_passed(results) -> bool:
    return all(r.passed is not False for r in results)


def format_table(results) -> str:
    w = max(len(r.name) for r in results)
    lines = [f"{'check':<{w}}  {'residual':>10}  {'tol':>8}  status"]
    for r in results:
        res = "-" if r.residual is None else f"{r.residual:.3e}"
        line = f"{r.name:<{w}}  {res:>10}  {r.tol:>8.1e}  {r.status}"
        if r.note:
            line += f"  ({r.note})"
        lines.append(line)
    return "\n".join(lines)
