"""Kropina metrics F = alpha^2/beta and their navigation data (h, W).

Conversion in both directions, the deformation tensors of b (w.r.t. a) and of
W (w.r.t. h), and the geodesic spray by three independent formulas:

* :class:`AlphaBetaSpray`  -- general (alpha, beta) spray with phi(s) = 1/s,
* :class:`NavigationSpray` -- 2G^i = h-gamma_0^i_0 + 2 Phi^i, Phi written in (h, W),
* :class:`KillingSpray`    -- 2G^i = h-gamma_0^i_0 - 2 F S^i_0, valid when W is Killing.

A subscript 0 means contraction with the direction y (W_0 = W_i y^i, h_00 = h_ij y^i y^j).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DomainError, NotKillingError, SingularDirectionError, UnitLengthError
from .exprcore import ScalarField
from .geom import (
    Chart,
    FormField,
    MetricField,
    check_metric_matrix,
    christoffel_from_jet,
    sample_box,
)

EPS_DIR = 1e-6
UNIT_TOL = 1e-8
TOL_KILLING = 1e-8


def _kappa(chart: Chart, kappa) -> ScalarField:
    if kappa is None:
        return chart.field(0)
    return chart.field(kappa)


class KropinaData:
    """Riemannian metric a_ij and one-form b_i; F = a_00 / b_0."""

    def __init__(self, a: MetricField, b: FormField):
        if b.variance != "lower":
            b = b.lower(a)
        if a.chart is not b.chart and a.chart != b.chart:
            raise ValueError("a and b live on different charts")
        self.a = a
        self.b = b
        self.chart = a.chart
        self.n = a.n

    @cached_property
    def b2(self) -> ScalarField:
        """b^2 = a^ij b_i b_j as a symbolic field."""
        inv, _ = self.a.symbolic_inverse()
        n = self.n
        total = self.chart.field(0)
        for i in range(n):
            for j in range(n):
                total = total + inv[i][j] * self.b[i] * self.b[j]
        return total

    @cached_property
    def navigation(self) -> "NavigationData":
        return to_navigation(self)

    def validate(self, points):
        """Check a positive definite and b^2 > 0 at the given points."""
        for x in points:
            G = self.a.jet(x, 0)[0]
            check_metric_matrix(G, x)
            if self.b2.evaluate(x) <= 0.0:
                raise DomainError("b^2 vanishes; F is undefined", point=x)

    def at(self, x) -> "AlphaBetaPoint":
        return AlphaBetaPoint.build(self, x)


class NavigationData:
    """Riemannian metric h_ij and a vector field W (unit length for a Kropina metric).

    ``W`` may be given with either index position; the lowered form is derived
    symbolically, the raised one is computed pointwise.
    """

    def __init__(self, h: MetricField, W: FormField, kappa=None):
        self.h = h
        self.chart = h.chart
        self.n = h.n
        self.W_source = W
        self.W = W.lower(h) if W.variance == "upper" else W
        self.kappa = _kappa(self.chart, kappa)

    @cached_property
    def W_upper(self) -> FormField:
        if self.W_source.variance == "upper":
            return self.W_source
        return self.W.raise_index(self.h)

    def unit_length_error(self, x) -> float:
        p = self.at(x)
        return abs(float(np.sqrt(p.W @ p.Wu)) - 1.0)

    def check_unit_length(self, points, tol: float = UNIT_TOL) -> float:
        worst = max((self.unit_length_error(x) for x in points), default=0.0)
        if worst > tol:
            raise UnitLengthError(f"|W|_h deviates from 1 by {worst:.3g} (tolerance {tol:g})")
        return worst

    def at(self, x, derivatives: bool = False) -> "NavPoint":
        return NavPoint.build(self, x, derivatives)


@dataclass
class NavPoint:
    """Everything about (h, W) at one point; tensors as arrays with lower indices first."""

    x: np.ndarray
    h: np.ndarray
    hinv: np.ndarray
    gamma: np.ndarray
    dgamma: np.ndarray | None
    W: np.ndarray        # W_i
    Wu: np.ndarray       # W^i
    dW: np.ndarray       # dW[k, i] = d_k W_i
    DW: np.ndarray       # DW[i, j] = W_{i||j}
    R: np.ndarray        # R_ij = (W_i||j + W_j||i) / 2
    S: np.ndarray        # S_ij = (W_i||j - W_j||i) / 2
    S_up: np.ndarray     # S^i_j = h^ir S_rj
    S_vec: np.ndarray    # S_i = W^r S_ri
    R_vec: np.ndarray    # R_i = W^r R_ri

    @classmethod
    def build(cls, N: NavigationData, x, derivatives=False) -> "NavPoint":
        x = np.asarray(x, dtype=float)
        if derivatives:
            G, dG, ddG = N.h.jet(x, 2)
        else:
            (G, dG), ddG = N.h.jet(x, 1), None
        Ginv = check_metric_matrix(G, x)
        gamma, dgamma = christoffel_from_jet(G, Ginv, dG, ddG)
        w, dw = N.W.jet(x, 1)
        wu = Ginv @ w
        D = dw.T - np.einsum("rij,r->ij", gamma, w)
        R = 0.5 * (D + D.T)
        S = 0.5 * (D - D.T)
        return cls(x, G, Ginv, gamma, dgamma, w, wu, dw, D, R, S, Ginv @ S, wu @ S, wu @ R)


@dataclass
class AlphaBetaPoint:
    x: np.ndarray
    a: np.ndarray
    ainv: np.ndarray
    gamma: np.ndarray
    b: np.ndarray        # b_i
    bu: np.ndarray       # b^i
    Db: np.ndarray       # Db[i, j] = b_{i;j}
    r: np.ndarray
    s: np.ndarray
    s_up: np.ndarray     # s^i_j = a^ir s_rj
    s_vec: np.ndarray    # s_j = b^i s_ij
    r_vec: np.ndarray    # r_j = b^i r_ij
    b2: float

    @classmethod
    def build(cls, K: KropinaData, x) -> "AlphaBetaPoint":
        x = np.asarray(x, dtype=float)
        A, dA = K.a.jet(x, 1)
        Ainv = check_metric_matrix(A, x)
        gamma, _ = christoffel_from_jet(A, Ainv, dA)
        b, db = K.b.jet(x, 1)
        bu = Ainv @ b
        D = db.T - np.einsum("rij,r->ij", gamma, b)
        r = 0.5 * (D + D.T)
        s = 0.5 * (D - D.T)
        b2 = float(b @ bu)
        if b2 <= 0.0:
            raise DomainError("b^2 vanishes; F is undefined", point=x)
        return cls(x, A, Ainv, gamma, b, bu, D, r, s, Ainv @ s, bu @ s, bu @ r, b2)


# ---------------------------------------------------------------------------
# conversion

def kappa_field(K: KropinaData) -> ScalarField:
    """kappa = ln(4 / b^2), the gauge that makes |W|_h = 1."""
    return (4 / K.b2).apply("ln")


def to_navigation(K: KropinaData) -> NavigationData:
    """h_ij = e^kappa a_ij, W_i = e^kappa b_i / 2 with kappa = ln(4 / b^2)."""
    kappa = kappa_field(K)
    ek = kappa.apply("exp")
    h = K.a.scaled(ek)
    W = K.b.scaled(ek * 0.5)
    return NavigationData(h, W, kappa=kappa)


def _unit_check_points(chart: Chart, count=20, seed=20240611):
    return sample_box(chart, count, np.random.default_rng(seed))


def from_navigation(N: NavigationData, kappa=None, check_points=None, tol: float = UNIT_TOL) -> KropinaData:
    """a_ij = e^{-kappa} h_ij, b_i = 2 e^{-kappa} W_i for any gauge kappa (default: N.kappa)."""
    kappa = N.kappa if kappa is None else _kappa(N.chart, kappa)
    pts = check_points if check_points is not None else _unit_check_points(N.chart)
    N.check_unit_length(pts, tol)
    emk = (-kappa).apply("exp")
    a = N.h.scaled(emk)
    b = N.W.scaled(emk * 2)
    return KropinaData(a, b)


# ---------------------------------------------------------------------------
# Finsler function

def _dir(y):
    y = np.asarray(y, dtype=float)
    if not np.any(y):
        raise SingularDirectionError("direction y = 0")
    return y


def _admissible_nav(h00, W0, eps_dir, x, y):
    if h00 <= 0.0 or W0 <= eps_dir * np.sqrt(h00):
        raise SingularDirectionError(
            f"direction y={tuple(float(v) for v in y)} at x={tuple(float(v) for v in x)} "
            f"outside admissible cone: W_0 = {W0:.3g} <= {eps_dir:g} |y|_h"
        )


def _admissible_ab(alpha, beta, eps_dir, x, y):
    if beta <= eps_dir * alpha:
        raise SingularDirectionError(
            f"direction y={tuple(float(v) for v in y)} at x={tuple(float(v) for v in x)} "
            f"outside admissible cone: beta = {beta:.3g} <= {eps_dir:g} alpha"
        )


def F_alpha_beta(K: KropinaData, x, y, eps_dir: float = EPS_DIR) -> float:
    y = _dir(y)
    A = K.a.jet(x, 0)[0]
    b = K.b.values(x)
    a00 = float(y @ A @ y)
    beta = float(b @ y)
    _admissible_ab(np.sqrt(a00), beta, eps_dir, x, y)
    return a00 / beta


def F_navigation(N: NavigationData, x, y, eps_dir: float = EPS_DIR) -> float:
    y = _dir(y)
    H = N.h.jet(x, 0)[0]
    W = N.W.values(x)
    h00 = float(y @ H @ y)
    W0 = float(W @ y)
    _admissible_nav(h00, W0, eps_dir, x, y)
    return h00 / (2.0 * W0)


def F_value(data, x, y, eps_dir: float = EPS_DIR) -> float:
    if isinstance(data, KropinaData):
        return F_alpha_beta(data, x, y, eps_dir)
    return F_navigation(data, x, y, eps_dir)


class KropinaNorm:
    """F = h_00 / (2 W_0) with its exact y-gradient; the Finsler function used by classify."""

    def __init__(self, N: NavigationData, eps_dir: float = EPS_DIR):
        self.N = N
        self.eps_dir = eps_dir

    def __call__(self, x, y) -> float:
        return F_navigation(self.N, x, y, self.eps_dir)

    def grad_y(self, x, y) -> np.ndarray:
        """l_l = dF/dy^l = h_0l / W_0 - h_00 W_l / (2 W_0^2)."""
        y = _dir(y)
        H = self.N.h.jet(x, 0)[0]
        W = self.N.W.values(x)
        h0 = H @ y
        h00 = float(h0 @ y)
        W0 = float(W @ y)
        _admissible_nav(h00, W0, self.eps_dir, x, y)
        return h0 / W0 - h00 * W / (2.0 * W0 * W0)


class AlphaBetaNorm:
    """F = alpha^2 / beta with dF/dy^l = 2 a_0l / beta - alpha^2 b_l / beta^2."""

    def __init__(self, K: KropinaData, eps_dir: float = EPS_DIR):
        self.K = K
        self.eps_dir = eps_dir

    def __call__(self, x, y) -> float:
        return F_alpha_beta(self.K, x, y, self.eps_dir)

    def grad_y(self, x, y) -> np.ndarray:
        y = _dir(y)
        A = self.K.a.jet(x, 0)[0]
        b = self.K.b.values(x)
        a0 = A @ y
        a00 = float(a0 @ y)
        beta = float(b @ y)
        _admissible_ab(np.sqrt(a00), beta, self.eps_dir, x, y)
        return 2.0 * a0 / beta - a00 * b / beta ** 2


class RiemannianNorm:
    """F = sqrt(g_00); used to run the Finsler curvature pipeline on a Riemannian spray."""

    def __init__(self, g: MetricField):
        self.g = g

    def __call__(self, x, y) -> float:
        y = _dir(y)
        return float(np.sqrt(y @ self.g.jet(x, 0)[0] @ y))

    def grad_y(self, x, y) -> np.ndarray:
        y = _dir(y)
        G = self.g.jet(x, 0)[0]
        return G @ y / np.sqrt(y @ G @ y)


# ---------------------------------------------------------------------------
# deformation tensors

def rs_tensors(K: KropinaData, x) -> AlphaBetaPoint:
    """r_ij, s_ij, s^i_j, s_j, r_j of b with respect to a (fields of the returned record)."""
    return AlphaBetaPoint.build(K, x)


def RS_tensors(N: NavigationData, x) -> NavPoint:
    """R_ij, S_ij, S^i_j, S_i, R_i of W with respect to h (fields of the returned record)."""
    return NavPoint.build(N, x)


def rs_RS_conversion_residual(K: KropinaData, x) -> float:
    """Max componentwise residual of the identities linking (r, s) to (R, S).

    Checks r_ij, s_ij, s^i_j (hence s^i_0 for every y), s_i and b^i = 2 W^i.
    """
    x = np.asarray(x, dtype=float)
    N = K.navigation
    kap = N.kappa
    n = K.n
    k = kap.evaluate(x)
    dk = np.array([kap.diff(i).evaluate(x) for i in range(n)])
    p = K.at(x)
    q = N.at(x)
    ek = np.exp(-k)
    kbar = q.hinv @ dk
    Wk = float(q.W @ kbar)
    r_pred = 2 * ek * (q.R - 0.5 * Wk * q.h)
    s_pred = 2 * ek * (q.S + 0.5 * (np.outer(dk, q.W) - np.outer(q.W, dk)))
    sup_pred = 2 * q.S_up + np.outer(kbar, q.W) - np.outer(q.Wu, dk)
    svec_pred = 2 * ek * (2 * q.S_vec + Wk * q.W - dk)
    res = [
        np.abs(p.r - r_pred).max(),
        np.abs(p.s - s_pred).max(),
        np.abs(p.s_up - sup_pred).max(),
        np.abs(p.s_vec - svec_pred).max(),
        np.abs(p.bu - 2 * q.Wu).max(),
    ]
    return float(max(res))


# ---------------------------------------------------------------------------
# sprays

@dataclass(frozen=True)
class SprayEval:
    x: np.ndarray
    y: np.ndarray
    G: np.ndarray
    provenance: str


@dataclass(frozen=True)
class SprayIntermediates:
    """Scalars of the (alpha, beta) spray specialised to phi(s) = 1/s."""

    s: float
    b2: float
    r00: float
    s0: float
    si0: np.ndarray

    @property
    def phi(self):
        return 1.0 / self.s

    @property
    def omega(self):
        return -1.0 / (2.0 * self.s)

    @property
    def domega(self):
        return 1.0 / (2.0 * self.s ** 2)

    @property
    def theta(self):
        return -self.s / self.b2

    def identity_residual(self) -> float:
        """Relative residual of 1 + s w + (b^2 - s^2) w' = b^2 / (2 s^2)."""
        s, w, dw, b2 = self.s, self.omega, self.domega, self.b2
        lhs = 1.0 + s * w + (b2 - s * s) * dw
        rhs = b2 / (2.0 * s * s)
        return abs(lhs - rhs) / abs(rhs)


class _Spray:
    provenance = ""

    def fiber(self, x):
        """Return a callable y -> G(x, y) with all x-dependent work done once."""
        raise NotImplementedError

    def __call__(self, x, y) -> np.ndarray:
        return self.fiber(x)(np.asarray(y, dtype=float))

    def evaluate(self, x, y) -> SprayEval:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return SprayEval(x, y, self(x, y), self.provenance)


class AlphaBetaSpray(_Spray):
    """2G^i = a-gamma_0^i_0 + 2 w alpha s^i_0 + 2 Theta (r_00 - 2 alpha w s_0)(y^i/alpha + w'/(w - s w') b^i)."""

    provenance = "alpha-beta"

    def __init__(self, K: KropinaData, eps_dir: float = EPS_DIR):
        self.K = K
        self.eps_dir = eps_dir

    def intermediates(self, x, y) -> SprayIntermediates:
        p = self.K.at(x)
        y = _dir(y)
        alpha = float(np.sqrt(y @ p.a @ y))
        beta = float(p.b @ y)
        _admissible_ab(alpha, beta, self.eps_dir, x, y)
        return SprayIntermediates(beta / alpha, p.b2, float(y @ p.r @ y), float(p.s_vec @ y), p.s_up @ y)

    def fiber(self, x):
        p = self.K.at(x)
        eps = self.eps_dir

        def G(y):
            alpha = np.sqrt(y @ p.a @ y)
            beta = p.b @ y
            _admissible_ab(alpha, beta, eps, p.x, y)
            s = beta / alpha
            w = -1.0 / (2.0 * s)
            dw = 1.0 / (2.0 * s * s)
            theta = -s / p.b2
            g00 = np.einsum("ijk,j,k->i", p.gamma, y, y)
            r00 = y @ p.r @ y
            s0 = p.s_vec @ y
            si0 = p.s_up @ y
            two_g = (g00 + 2.0 * w * alpha * si0
                     + 2.0 * theta * (r00 - 2.0 * alpha * w * s0) * (y / alpha + dw / (w - s * dw) * p.bu))
            return 0.5 * two_g

        return G


class NavigationSpray(_Spray):
    """2G^i = h-gamma_0^i_0 + 2 Phi^i with

    2 Phi^i = (h_00/W_0)(S_0 W^i - S^i_0) + (R_00 W^i - 2 S_0 y^i) - (2 W_0/h_00) R_00 y^i.

    Needs only (h, W): no gauge kappa enters.
    """

    provenance = "navigation"

    def __init__(self, N: NavigationData, eps_dir: float = EPS_DIR):
        self.N = N
        self.eps_dir = eps_dir

    def fiber(self, x):
        q = self.N.at(x)
        eps = self.eps_dir

        def G(y):
            h00 = y @ q.h @ y
            W0 = q.W @ y
            _admissible_nav(h00, W0, eps, q.x, y)
            g00 = np.einsum("ijk,j,k->i", q.gamma, y, y)
            R00 = y @ q.R @ y
            S0 = q.S_vec @ y
            Si0 = q.S_up @ y
            two_phi = ((h00 / W0) * (S0 * q.Wu - Si0) + (R00 * q.Wu - 2.0 * S0 * y)
                       - (2.0 * W0 / h00) * R00 * y)
            return 0.5 * (g00 + two_phi)

        return G


class KillingSpray(_Spray):
    """2G^i = h-gamma_0^i_0 - 2 F S^i_0 with F = h_00 / (2 W_0); W must be Killing."""

    provenance = "killing"

    def __init__(self, N: NavigationData, eps_dir: float = EPS_DIR, tol_killing: float = TOL_KILLING):
        self.N = N
        self.eps_dir = eps_dir
        self.tol_killing = tol_killing

    def fiber(self, x):
        q = self.N.at(x)
        worst = float(np.abs(q.R).max())
        if worst > self.tol_killing:
            raise NotKillingError(
                f"W is not Killing at x={tuple(float(v) for v in q.x)}: max |R_ij| = {worst:.3g}"
            )
        eps = self.eps_dir

        def G(y):
            h00 = y @ q.h @ y
            W0 = q.W @ y
            _admissible_nav(h00, W0, eps, q.x, y)
            F = h00 / (2.0 * W0)
            return 0.5 * (np.einsum("ijk,j,k->i", q.gamma, y, y) - 2.0 * F * (q.S_up @ y))

        return G


class RiemannianSpray(_Spray):
    """G^i = gamma^i_jk y^j y^k / 2 of a Riemannian metric."""

    provenance = "riemannian"

    def __init__(self, g: MetricField):
        self.g = g

    def fiber(self, x):
        x = np.asarray(x, dtype=float)
        G, dG = self.g.jet(x, 1)
        gamma, _ = christoffel_from_jet(G, check_metric_matrix(G, x), dG)

        def spray(y):
            return 0.5 * np.einsum("ijk,j,k->i", gamma, y, y)

        return spray


def spray_alpha_beta(K: KropinaData, x, y, eps_dir: float = EPS_DIR) -> SprayEval:
    return AlphaBetaSpray(K, eps_dir).evaluate(x, y)


def spray_navigation(N: NavigationData, x, y, eps_dir: float = EPS_DIR) -> SprayEval:
    return NavigationSpray(N, eps_dir).evaluate(x, y)


def spray_killing(N: NavigationData, x, y, eps_dir: float = EPS_DIR, tol_killing: float = TOL_KILLING) -> SprayEval:
    return KillingSpray(N, eps_dir, tol_killing).evaluate(x, y)
