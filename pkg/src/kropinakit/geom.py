"""Riemannian engine: metric jets, Levi-Civita connection, covariant derivatives, curvature.

Everything is evaluated pointwise from symbolic component fields.

Index conventions (arrays are 0-based, component names follow the usual notation):

* ``gamma[i, j, k]``       = gamma^i_{jk}
* ``dgamma[l, i, j, k]``   = d_l gamma^i_{jk}
* ``riemann(...)[j, i, k, l]`` = R_j^i_{kl}

    R_j^i_{kl} = d_l gamma^i_{jk} - d_k gamma^i_{jl}
                 + gamma^r_{jk} gamma^i_{rl} - gamma^r_{jl} gamma^i_{rk}

This sign is chosen so that a space of constant curvature K satisfies
``R_k^i_{jl} = K (g_{jk} delta^i_l - g_{kl} delta^i_j)`` with K = +1 on the unit
round sphere. It is the convention of the Berwald curvature used in
:mod:`kropinakit.classify`; it is minus the common "d_k gamma_l - d_l gamma_k" one.
With it the Ricci identity for a covector reads
``W_{i||j||k} - W_{i||k||j} = -W_r R_i^r_{jk}``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import exprcore as ex
from .errors import GeometryError, IllConditionedError, NotPositiveDefiniteError
from .exprcore import ScalarField

COND_MAX = 1e10
INVERSE_TOL = 1e-10


@dataclass(frozen=True)
class Chart:
    """A coordinate box. ``exclusion`` (optional) must stay > 0 on accepted samples."""

    coordinates: tuple
    domain: tuple
    exclusion: ScalarField | None = field(default=None, compare=False)

    def __post_init__(self):
        coords = tuple(self.coordinates)
        object.__setattr__(self, "coordinates", coords)
        if len(coords) < 1:
            raise GeometryError("a chart needs at least one coordinate")
        if len(set(coords)) != len(coords):
            raise GeometryError(f"duplicate coordinate names: {coords}")
        dom = tuple((float(lo), float(hi)) for lo, hi in self.domain)
        if len(dom) != len(coords):
            raise GeometryError(f"domain box has {len(dom)} intervals for {len(coords)} coordinates")
        for lo, hi in dom:
            if not lo <= hi:
                raise GeometryError(f"empty domain interval [{lo}, {hi}]")
        object.__setattr__(self, "domain", dom)

    @classmethod
    def standard(cls, n: int, domain=None, exclusion=None) -> "Chart":
        domain = domain if domain is not None else [(-1.0, 1.0)] * n
        return cls(tuple(f"x{i + 1}" for i in range(n)), tuple(domain), exclusion)

    @property
    def dim(self) -> int:
        return len(self.coordinates)

    def contains(self, x, slack: float = 0.0) -> bool:
        return all(lo - slack <= v <= hi + slack for v, (lo, hi) in zip(x, self.domain))

    def admits(self, x) -> bool:
        if not self.contains(x):
            return False
        if self.exclusion is not None:
            try:
                return self.exclusion.evaluate(x) > 0.0
            except ArithmeticError:
                return False
        return True

    def field(self, source) -> ScalarField:
        if isinstance(source, ScalarField):
            return source
        if isinstance(source, (int, float)):
            return ex.constant_field(source, self)
        return ex.parse(str(source), self)

    def require_geometric(self):
        if self.dim < 2:
            raise GeometryError(f"geometric objects need n >= 2, chart has n = {self.dim}")


def _jet_exprs(components: Sequence[ex.Expr], n: int, order: int):
    exprs = list(components)
    if order >= 1:
        exprs += [c.diff(k) for k in range(n) for c in components]
    if order >= 2:
        exprs += [c.diff(k).diff(l) for k in range(n) for l in range(n) for c in components]
    return exprs


class _Jet:
    """Compiled values and partial derivatives (up to ``order``) of a flat list of fields."""

    def __init__(self, components: Sequence[ex.Expr], n: int, order: int):
        self.m = len(components)
        self.n = n
        self.order = order
        self._ev = ex.Evaluator(_jet_exprs(components, n, order))

    def __call__(self, x):
        v = self._ev(x)
        m, n = self.m, self.n
        out = [v[:m]]
        if self.order >= 1:
            out.append(v[m:m + n * m].reshape(n, m))
        if self.order >= 2:
            out.append(v[m + n * m:].reshape(n, n, m))
        return out


class _JetCache:
    def __init__(self, exprs, n):
        self._exprs = tuple(exprs)
        self._n = n
        self._jets: dict = {}

    def get(self, order):
        jet = self._jets.get(order)
        if jet is None:
            jet = _Jet(self._exprs, self._n, order)
            self._jets[order] = jet
        return jet


# ---------------------------------------------------------------------------
# symbolic matrix helpers (small n)

def sym_det(m: Sequence[Sequence[ex.Expr]]) -> ex.Expr:
    n = len(m)
    if n == 1:
        return m[0][0]
    if n == 2:
        return ex.sub(ex.mul(m[0][0], m[1][1]), ex.mul(m[0][1], m[1][0]))
    total = ex.ZERO
    for j in range(n):
        if m[0][j] is ex.ZERO:
            continue
        minor = [row[:j] + row[j + 1:] for row in m[1:]]
        term = ex.mul(m[0][j], sym_det(minor))
        total = ex.add(total, term) if j % 2 == 0 else ex.sub(total, term)
    return total


def sym_inverse(m: Sequence[Sequence[ex.Expr]]):
    """Adjugate inverse; returns (inverse matrix of Expr, determinant)."""
    n = len(m)
    det = sym_det(m)
    if n == 1:
        return [[ex.div(ex.ONE, det)]], det
    inv = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            minor = [row[:i] + row[i + 1:] for k, row in enumerate(m) if k != j]
            cof = sym_det(minor)
            if (i + j) % 2:
                cof = ex.neg(cof)
            inv[i][j] = ex.div(cof, det)
    return inv, det


# ---------------------------------------------------------------------------
# fields

class MetricField:
    """Symmetric matrix of scalar fields. Positive-definiteness is checked at evaluation."""

    def __init__(self, components, chart: Chart):
        chart.require_geometric()
        n = chart.dim
        rows = [[chart.field(c) for c in row] for row in components]
        if len(rows) != n or any(len(r) != n for r in rows):
            raise GeometryError(f"metric must be {n}x{n}")
        for i in range(n):
            for j in range(i + 1, n):
                if rows[i][j].expr is not rows[j][i].expr:
                    _check_numerically_equal(rows[i][j], rows[j][i], chart, f"g[{i + 1}][{j + 1}]", f"g[{j + 1}][{i + 1}]")
                rows[j][i] = rows[i][j]
        self.chart = chart
        self.n = n
        self.components = tuple(tuple(r) for r in rows)
        self._jets = _JetCache([c.expr for r in rows for c in r], n)

    @classmethod
    def from_upper(cls, upper, chart: Chart) -> "MetricField":
        """Build from a full matrix whose strictly-lower entries may be None or ''."""
        n = chart.dim
        full = [[None] * n for _ in range(n)]
        for i in range(n):
            for j in range(n):
                v = upper[i][j]
                if i > j and (v is None or (isinstance(v, str) and not v.strip())):
                    v = upper[j][i]
                full[i][j] = v
        return cls(full, chart)

    @classmethod
    def diagonal(cls, entries, chart: Chart) -> "MetricField":
        n = chart.dim
        return cls([[entries[i] if i == j else 0 for j in range(n)] for i in range(n)], chart)

    def __getitem__(self, ij):
        i, j = ij
        return self.components[i][j]

    def scaled(self, factor: ScalarField) -> "MetricField":
        return MetricField([[factor * c for c in row] for row in self.components], self.chart)

    def jet(self, x, order: int = 0):
        """(g, dg, ddg) with dg[k, i, j] = d_k g_ij and ddg[k, l, i, j] = d_k d_l g_ij."""
        n = self.n
        parts = self._jets.get(order)(x)
        out = [parts[0].reshape(n, n)]
        if order >= 1:
            out.append(parts[1].reshape(n, n, n))
        if order >= 2:
            out.append(parts[2].reshape(n, n, n, n))
        return out

    def symbolic_inverse(self):
        inv, det = sym_inverse([[c.expr for c in row] for row in self.components])
        return [[ScalarField(e, self.chart) for e in row] for row in inv], ScalarField(det, self.chart)


class FormField:
    """Vector (``variance='upper'``) or covector (``'lower'``) field of scalar components."""

    def __init__(self, components, chart: Chart, variance: str = "lower"):
        if variance not in ("lower", "upper"):
            raise ValueError("variance must be 'lower' or 'upper'")
        comps = tuple(chart.field(c) for c in components)
        if len(comps) != chart.dim:
            raise GeometryError(f"expected {chart.dim} components, got {len(comps)}")
        self.chart = chart
        self.n = chart.dim
        self.variance = variance
        self.components = comps
        self._jets = _JetCache([c.expr for c in comps], self.n)

    def __getitem__(self, i):
        return self.components[i]

    def jet(self, x, order: int = 0):
        """(w, dw, ddw) with dw[k, i] = d_k w_i, ddw[k, l, i] = d_k d_l w_i."""
        return self._jets.get(order)(x)

    def values(self, x) -> np.ndarray:
        return self.jet(x, 0)[0]

    def lower(self, g: MetricField) -> "FormField":
        if self.variance == "lower":
            return self
        n = self.n
        comps = [ex.sum_exprs(ex.mul(g[i, j].expr, self[j].expr) for j in range(n)) for i in range(n)]
        return FormField([ScalarField(c, self.chart) for c in comps], self.chart, "lower")

    def raise_index(self, g: MetricField) -> "FormField":
        if self.variance == "upper":
            return self
        inv, _ = g.symbolic_inverse()
        n = self.n
        comps = [ex.sum_exprs(ex.mul(inv[i][j].expr, self[j].expr) for j in range(n)) for i in range(n)]
        return FormField([ScalarField(c, self.chart) for c in comps], self.chart, "upper")

    def scaled(self, factor: ScalarField) -> "FormField":
        return FormField([factor * c for c in self.components], self.chart, self.variance)


# aliases matching the vocabulary of the data model
CovectorField = FormField
VectorField = FormField


def covector(components, chart) -> FormField:
    return FormField(components, chart, "lower")


def vector(components, chart) -> FormField:
    return FormField(components, chart, "upper")


def _check_numerically_equal(f1, f2, chart, n1, n2, samples=5):
    rng = np.random.default_rng(12345)
    for _ in range(samples):
        x = [rng.uniform(lo, hi) for lo, hi in chart.domain]
        try:
            a, b = f1(x), f2(x)
        except ArithmeticError:
            continue
        if abs(a - b) > 1e-12 * max(1.0, abs(a), abs(b)):
            raise GeometryError(f"metric is not symmetric: {n1} = {f1.source!r} but {n2} = {f2.source!r}")


# ---------------------------------------------------------------------------
# pointwise operations

def check_metric_matrix(G: np.ndarray, x=None):
    """Validate symmetry, positive-definiteness and conditioning; return the inverse."""
    eig = np.linalg.eigvalsh(G)
    if eig[0] <= 0.0:
        raise NotPositiveDefiniteError(float(eig[0]), x)
    cond = eig[-1] / eig[0]
    if cond > COND_MAX:
        raise IllConditionedError(float(cond), x)
    Ginv = np.linalg.inv(G)
    Ginv = 0.5 * (Ginv + Ginv.T)
    err = np.max(np.abs(G @ Ginv - np.eye(len(G))))
    if err > INVERSE_TOL:
        raise IllConditionedError(float(cond), x)
    return Ginv


def metric_at(g: MetricField, x):
    """Return (g_ij, g^ij) at x after positive-definiteness and conditioning checks."""
    G = g.jet(x, 0)[0]
    return G, check_metric_matrix(G, x)


@dataclass(frozen=True)
class ConnectionEval:
    x: np.ndarray
    gamma: np.ndarray            # gamma[i, j, k] = gamma^i_jk
    dgamma: np.ndarray | None    # dgamma[l, i, j, k] = d_l gamma^i_jk
    g: np.ndarray
    ginv: np.ndarray


def christoffel_from_jet(G, Ginv, dG, ddG=None):
    # first-kind symbols: Gamma_{r,jk} = (d_j g_rk + d_k g_rj - d_r g_jk) / 2, dG[k, i, j] = d_k g_ij
    first = 0.5 * (np.einsum("jrk->rjk", dG) + np.einsum("krj->rjk", dG) - dG)
    gamma = np.einsum("ir,rjk->ijk", Ginv, first)
    if ddG is None:
        return gamma, None
    dfirst = 0.5 * (np.einsum("ljrk->lrjk", ddG) + np.einsum("lkrj->lrjk", ddG) - np.einsum("lrjk->lrjk", ddG))
    dGinv = -np.einsum("ia,lab,br->lir", Ginv, dG, Ginv)
    dgamma = np.einsum("lir,rjk->lijk", dGinv, first) + np.einsum("ir,lrjk->lijk", Ginv, dfirst)
    return gamma, dgamma


def christoffel(g: MetricField, x, derivatives: bool = True) -> ConnectionEval:
    x = np.asarray(x, dtype=float)
    if derivatives:
        G, dG, ddG = g.jet(x, 2)
    else:
        (G, dG), ddG = g.jet(x, 1), None
    Ginv = check_metric_matrix(G, x)
    gamma, dgamma = christoffel_from_jet(G, Ginv, dG, ddG)
    return ConnectionEval(x, gamma, dgamma, G, Ginv)


def riemann_from_connection(conn: ConnectionEval) -> np.ndarray:
    gam, dgam = conn.gamma, conn.dgamma
    # R[j,i,k,l] = d_l gamma^i_jk - d_k gamma^i_jl + gamma^r_jk gamma^i_rl - gamma^r_jl gamma^i_rk
    R = np.einsum("lijk->jikl", dgam) - np.einsum("kijl->jikl", dgam)
    quad = np.einsum("rjk,irl->jikl", gam, gam)
    R += quad - np.einsum("jiKL->jiLK", quad)
    return R


def riemann(g: MetricField, x) -> np.ndarray:
    """R_j^i_kl at x as an array indexed [j, i, k, l]."""
    return riemann_from_connection(christoffel(g, x, derivatives=True))


def constant_curvature_model(G: np.ndarray) -> np.ndarray:
    """M[j, i, k, l] = g_kj delta^i_l - g_jl delta^i_k, so that R = K M on a space form."""
    n = len(G)
    d = np.eye(n)
    return np.einsum("kj,il->jikl", G, d) - np.einsum("jl,ik->jikl", G, d)


def fit_constant_curvature(R: np.ndarray, G: np.ndarray):
    """Least-squares K in R = K M; returns (K, relative misfit)."""
    M = constant_curvature_model(G)
    mm = float(np.sum(M * M))
    K = float(np.sum(R * M)) / mm
    return K, float(np.sqrt(np.sum((R - K * M) ** 2) / mm))


def bianchi_residual(R: np.ndarray) -> float:
    """max |R_j^i_kl + R_k^i_lj + R_l^i_jk|."""
    cyc = R + np.einsum("jikl->kilj", R) + np.einsum("jikl->lijk", R)
    return float(np.max(np.abs(cyc)))


def conformal_christoffel_residual(g: MetricField, rho: ScalarField, x) -> float:
    """Max deviation between gamma(e^{2 rho} g) and gamma(g) + rho_j d^i_k + rho_k d^i_j - rho^i g_jk."""
    x = np.asarray(x, dtype=float)
    scaled = g.scaled((2 * rho).apply("exp"))
    star = christoffel(scaled, x, derivatives=False).gamma
    base = christoffel(g, x, derivatives=False)
    n = g.n
    drho = np.array([rho.diff(k).evaluate(x) for k in range(n)])
    rho_up = base.ginv @ drho
    d = np.eye(n)
    rhs = (base.gamma + np.einsum("j,ik->ijk", drho, d) + np.einsum("k,ij->ijk", drho, d)
           - np.einsum("i,jk->ijk", rho_up, base.g))
    return float(np.max(np.abs(star - rhs)))


def _covector_jet(field: FormField, g: MetricField | None, x, order):
    if field.variance == "upper":
        if g is None:
            raise GeometryError("a metric is needed to lower a vector field")
        field = field.lower(g)
    return field.jet(x, order)


def covariant_derivative(field: FormField, g: MetricField, x, conn: ConnectionEval | None = None) -> np.ndarray:
    """D[i, j] = W_{i||j} = d_j W_i - gamma^r_ij W_r (vector fields are lowered first)."""
    x = np.asarray(x, dtype=float)
    conn = conn or christoffel(g, x, derivatives=False)
    w, dw = _covector_jet(field, g, x, 1)
    return dw.T - np.einsum("rij,r->ij", conn.gamma, w)


def second_covariant_derivative(field: FormField, g: MetricField, x, conn: ConnectionEval | None = None) -> np.ndarray:
    """T[i, j, k] = W_{i||j||k} = d_k(W_{i||j}) - gamma^r_ik W_{r||j} - gamma^r_jk W_{i||r}."""
    x = np.asarray(x, dtype=float)
    if conn is None or conn.dgamma is None:
        conn = christoffel(g, x, derivatives=True)
    w, dw, ddw = _covector_jet(field, g, x, 2)
    gam, dgam = conn.gamma, conn.dgamma
    D = dw.T - np.einsum("rij,r->ij", gam, w)
    # d_k(W_{i||j}) = d_k d_j W_i - d_k gamma^r_ij W_r - gamma^r_ij d_k W_r
    dD = (np.einsum("kji->ijk", ddw) - np.einsum("krij,r->ijk", dgam, w)
          - np.einsum("rij,kr->ijk", gam, dw))
    return dD - np.einsum("rik,rj->ijk", gam, D) - np.einsum("rjk,ir->ijk", gam, D)


def ricci_identity_residual(field: FormField, g: MetricField, x) -> float:
    """max |W_{i||j||k} - W_{i||k||j} + W_r R_i^r_jk|."""
    x = np.asarray(x, dtype=float)
    conn = christoffel(g, x, derivatives=True)
    T = second_covariant_derivative(field, g, x, conn)
    R = riemann_from_connection(conn)
    w = _covector_jet(field, g, x, 0)[0]
    res = T - np.einsum("ikj->ijk", T) + np.einsum("r,irjk->ijk", w, R)
    return float(np.max(np.abs(res)))


def sample_box(chart: Chart, count: int, rng: np.random.Generator, max_tries: int = 10000):
    """Uniform points in the chart box that satisfy the exclusion predicate."""
    lo = np.array([a for a, _ in chart.domain])
    hi = np.array([b for _, b in chart.domain])
    pts = []
    tries = 0
    while len(pts) < count:
        tries += 1
        if tries > max_tries:
            raise GeometryError("could not draw admissible sample points in the chart box")
        x = lo + (hi - lo) * rng.random(len(lo))
        if chart.admits(x):
            pts.append(x)
    return pts
