"""Curvature analysis and the constant-flag-curvature classifier.

Two independent routes decide whether a Kropina space has constant flag curvature K:

* route A (navigation data): W is Killing for h, and (M, h) has constant sectional curvature K;
* route B (Finsler): the Berwald spray curvature R_0^i_0l of the full spray fits
  K F^2 (delta^i_l - l^i l_l) with the same K at every sampled (x, y).

:func:`classify_theorem4` runs both and refuses to report when they disagree.
Constancy is certified on seeded random samples in the chart box, never globally.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DegenerateModelError, InconsistentVerdictError, NotKillingError, StepSizeError
from .geom import (
    MetricField,
    christoffel,
    fit_constant_curvature,
    riemann_from_connection,
    sample_box,
    second_covariant_derivative,
)
from .kropina import (
    EPS_DIR,
    AlphaBetaNorm,
    AlphaBetaSpray,
    KropinaData,
    KropinaNorm,
    NavigationData,
    NavigationSpray,
)

FD_STEP = 1e-4
RICHARDSON_TOL = 1e-5


@dataclass(frozen=True)
class SampleConfig:
    points: int = 20
    directions: int = 5
    seed: int = 0
    tol_killing: float = 1e-8
    tol_curvfit: float = 1e-5
    tol_identity: float = 1e-7
    eps_dir: float = EPS_DIR
    cone_margin: float = 0.1   # sampled directions satisfy W_0 >= cone_margin * |y|_h
    workers: int = 1
    fd_step: float = FD_STEP

    def __post_init__(self):
        if self.points < 1 or self.directions < 1:
            raise ValueError("sample counts must be >= 1")
        for name in ("tol_killing", "tol_curvfit", "tol_identity", "eps_dir", "fd_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not 0 < self.cone_margin < 1:
            raise ValueError("cone_margin must lie in (0, 1)")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def tolerances(self) -> dict:
        return {"killing": self.tol_killing, "curvfit": self.tol_curvfit,
                "identity": self.tol_identity, "eps_dir": self.eps_dir}


# ---------------------------------------------------------------------------
# sampling

def sample_points(N: NavigationData, cfg: SampleConfig):
    rng = np.random.default_rng(cfg.seed)
    return sample_box(N.chart, cfg.points, rng)


def sample_directions(N: NavigationData, x, count: int, rng: np.random.Generator, cone_margin: float = 0.1):
    """Random h-unit directions inside the admissible cone W_0 >= cone_margin * |y|_h."""
    q = N.at(x)
    dirs = []
    while len(dirs) < count:
        y = rng.standard_normal(N.n)
        norm = np.sqrt(y @ q.h @ y)
        if norm == 0.0:
            continue
        y = y / norm
        W0 = q.W @ y
        if W0 < 0:
            y, W0 = -y, -W0
        if W0 >= cone_margin:
            dirs.append(y)
    return dirs


def sample_pairs(N: NavigationData, cfg: SampleConfig):
    """Deterministic (x, y) samples: points from the seed, directions from a child stream."""
    pts = sample_points(N, cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    pairs = []
    for x in pts:
        for y in sample_directions(N, x, cfg.directions, rng, cfg.cone_margin):
            pairs.append((x, y))
    return pts, pairs


# ---------------------------------------------------------------------------
# Berwald spray curvature

def _fiber(spray, x):
    if hasattr(spray, "fiber"):
        return spray.fiber(x)
    return lambda y: np.asarray(spray(x, y), dtype=float)


def _d1(f, h):
    """4th-order central first derivative of t -> f(t) at 0."""
    return (f(-2 * h) - 8 * f(-h) + 8 * f(h) - f(2 * h)) / (12 * h)


def _jac_y(fib, y, hy):
    n = len(y)
    e = np.eye(n)
    return np.stack([_d1(lambda t, j=j: fib(y + t * e[j]), hy) for j in range(n)], axis=1)


def _hess_y(fib, y, hy):
    n = len(y)
    e = np.eye(n)
    # H[i, j, l] = d^2 G^i / dy^j dy^l
    return np.stack([_d1(lambda t, j=j: _jac_y(fib, y + t * e[j], hy), hy) for j in range(n)], axis=1)


def _berwald_once(spray, x, y, hx, hy):
    n = len(x)
    e = np.eye(n)
    fib0 = _fiber(spray, x)
    G0 = fib0(y)
    Gy = _jac_y(fib0, y, hy)
    Gyy = _hess_y(fib0, y, hy)
    Gx = np.stack([_d1(lambda t, l=l: _fiber(spray, x + t * e[l])(y), hx) for l in range(n)], axis=1)
    ht = hx / np.max(np.abs(y))
    # T[i, l] = y^j d_j d_{y^l} G^i, a derivative along the line x + t y
    T = _d1(lambda t: _jac_y(_fiber(spray, x + t * y), y, hy), ht)
    return 2 * Gx - T + 2 * np.einsum("j,ijl->il", G0, Gyy) - Gy @ Gy, G0


def berwald_curvature(spray, x, y, step: float = FD_STEP, richardson_tol: float = RICHARDSON_TOL) -> np.ndarray:
    """R_0^i_0l of a spray, returned as ``R[i, l]``.

    Contracting the Berwald curvature A_(kl){d G_j^i_k / dx^l + G_j^r_k G_r^i_l}
    (with horizontal derivatives d_l - G^r_l d/dy^r) by y^j y^k gives

        R^i_l = 2 d_l G^i - y^j d_j d_{y^l} G^i + 2 G^j d_{y^j} d_{y^l} G^i - d_{y^j} G^i d_{y^l} G^j,

    which is evaluated with 4th-order central differences of the spray in x and y.
    The estimate at step h is compared with the one at h/2; a relative
    disagreement above ``richardson_tol`` (relative to max(|R|, |y|^2, |G|))
    raises :class:`StepSizeError`.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    hx = step * max(1.0, float(np.max(np.abs(x))))
    hy = step * float(np.max(np.abs(y)))
    R1, G0 = _berwald_once(spray, x, y, hx, hy)
    R2, _ = _berwald_once(spray, x, y, hx / 2, hy / 2)
    scale = max(float(np.max(np.abs(R2))), float(np.max(np.abs(y))) ** 2, float(np.max(np.abs(G0))))
    if scale > 0:
        err = float(np.max(np.abs(R1 - R2))) / scale
        if err > richardson_tol:
            raise StepSizeError(f"Berwald curvature unstable under step halving: relative change {err:.3g}")
    return R2


@dataclass(frozen=True)
class FlagFit:
    K: float
    residual: float
    R: np.ndarray
    model: np.ndarray


def flag_curvature_fit(spray, F_fn, x, y, step: float = FD_STEP) -> FlagFit:
    """Least-squares K in R_0^i_0l = K F^2 (delta^i_l - l^i l_l), l^i = y^i/F, l_l = dF/dy^l.

    ``residual`` is |R - K M|_F / |M|_F with M = F^2 (delta - l (x) l).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    F = F_fn(x, y)
    l_low = F_fn.grad_y(x, y)
    M = F * F * (np.eye(len(y)) - np.outer(y / F, l_low))
    norm_m = float(np.linalg.norm(M))
    if norm_m < 1e-12:
        raise DegenerateModelError("flag-curvature model tensor vanishes")
    R = berwald_curvature(spray, x, y, step)
    K = float(np.sum(R * M)) / norm_m ** 2
    return FlagFit(K, float(np.linalg.norm(R - K * M)) / norm_m, R, M)


# ---------------------------------------------------------------------------
# route A checks

@dataclass(frozen=True)
class KillingVerdict:
    passed: bool
    max_abs_R: float
    witness: tuple
    max_WWR: float        # |W^i W^j R_ij|, forced to 0 by unit length
    max_S_vec: float      # |S_j|, 0 for a unit Killing field
    tol: float


def killing_check(N: NavigationData, points, tol: float = 1e-8) -> KillingVerdict:
    """Max over points of max_ij |R_ij| (symmetrised h-covariant derivative of W) against ``tol``."""
    worst, witness, wwr, svec = 0.0, (), 0.0, 0.0
    for x in points:
        q = N.at(x)
        m = float(np.abs(q.R).max())
        if m > worst or not witness:
            worst, witness = m, tuple(float(v) for v in x)
        wwr = max(wwr, abs(float(q.Wu @ q.R @ q.Wu)))
        svec = max(svec, float(np.abs(q.S_vec).max()))
    return KillingVerdict(worst <= tol, worst, witness, wwr, svec, tol)


@dataclass(frozen=True)
class RiemannianFit:
    K: float
    residual: float
    per_point_K: tuple
    max_misfit: float


def riemannian_cc_check(h: MetricField, points) -> RiemannianFit:
    """Per-point fit of R_k^i_jl = K (h_jk delta^i_l - h_kl delta^i_j); K = mean.

    residual = max deviation of per-point K from the mean + max relative ansatz misfit.
    """
    ks, mis = [], []
    for x in points:
        conn = christoffel(h, x)
        k, m = fit_constant_curvature(riemann_from_connection(conn), conn.g)
        ks.append(k)
        mis.append(m)
    K = float(np.mean(ks))
    dev = max(abs(k - K) for k in ks)
    return RiemannianFit(K, float(dev + max(mis)), tuple(ks), float(max(mis)))


def _h_and_W(data):
    if isinstance(data, NavigationData):
        return data.h, data.W
    if isinstance(data, KropinaData):
        n = data.navigation
        return n.h, n.W
    h, W = data
    if W.variance == "upper":
        W = W.lower(h)
    return h, W


def lemma4_residual(data, points, tol_killing: float | None = 1e-8) -> float:
    """max |W_{i||j||k} - W_r R_k^r_ij| over ``points`` for a Killing field W.

    ``data`` is NavigationData, KropinaData or an (h, W) pair (W need not have unit length).
    Raises NotKillingError when the Killing residual exceeds ``tol_killing``.
    """
    h, W = _h_and_W(data)
    worst = 0.0
    for x in points:
        x = np.asarray(x, dtype=float)
        conn = christoffel(h, x)
        w, dw = W.jet(x, 1)
        D = dw.T - np.einsum("rij,r->ij", conn.gamma, w)
        if tol_killing is not None and np.abs(D + D.T).max() / 2 > tol_killing:
            raise NotKillingError(f"W is not Killing at x={tuple(x)}: max |R_ij| = {np.abs(D + D.T).max() / 2:.3g}")
        T = second_covariant_derivative(W, h, x, conn)
        R = riemann_from_connection(conn)
        worst = max(worst, float(np.abs(T - np.einsum("r,krij->ijk", w, R)).max()))
    return worst


def space_form_killing_residual(N: NavigationData, K: float, pairs) -> float:
    """Residual of W^i_{||0||0} = K (y^i W_0 - h_00 W^i) and W_{i||r} W^r_{||l} = K (W_l W_i - h_li)."""
    worst = 0.0
    for x, y in pairs:
        q = N.at(x, derivatives=True)
        conn = christoffel(N.h, x)
        T = second_covariant_derivative(N.W, N.h, x, conn)
        Tup = np.einsum("ir,rjk->ijk", q.hinv, T)
        lhs1 = np.einsum("ijk,j,k->i", Tup, y, y)
        rhs1 = K * (y * (q.W @ y) - (y @ q.h @ y) * q.Wu)
        DWup = q.hinv @ q.DW     # W^r_{||l}
        lhs2 = q.DW @ DWup
        rhs2 = K * (np.outer(q.W, q.W) - q.h)
        worst = max(worst, float(np.abs(lhs1 - rhs1).max()), float(np.abs(lhs2 - rhs2).max()))
    return worst


# ---------------------------------------------------------------------------
# classifier

@dataclass
class ClassificationReport:
    killing: dict
    riemannian: dict
    flag: dict
    theorem4: dict
    provenance: dict
    samples: list = field(default_factory=list)

    @property
    def constant_curvature(self) -> bool:
        return bool(self.theorem4["constant_curvature"])

    @property
    def K(self):
        return self.theorem4["K"]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _finsler_route(data, N, cfg):
    if isinstance(data, KropinaData):
        return AlphaBetaSpray(data, cfg.eps_dir), AlphaBetaNorm(data, cfg.eps_dir)
    return NavigationSpray(N, cfg.eps_dir), KropinaNorm(N, cfg.eps_dir)


def classify_theorem4(data, cfg: SampleConfig = SampleConfig()) -> ClassificationReport:
    """Decide constant flag curvature through both routes and check they agree.

    Raises :class:`InconsistentVerdictError` when route A (Killing + Riemannian
    constant curvature) and route B (flag-curvature fit) disagree, or when both
    pass with different K.
    """
    N = data.navigation if isinstance(data, KropinaData) else data
    pts, pairs = sample_pairs(N, cfg)
    N.check_unit_length(pts)

    kv = killing_check(N, pts, cfg.tol_killing)
    rf = riemannian_cc_check(N.h, pts)

    spray, norm = _finsler_route(data, N, cfg)

    def fit(pair):
        x, y = pair
        return flag_curvature_fit(spray, norm, x, y, cfg.fd_step)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            fits = list(pool.map(fit, pairs))
    else:
        fits = [fit(p) for p in pairs]

    ks = np.array([f.K for f in fits])
    flag_K = float(ks.mean())
    spread = float(ks.max() - ks.min())
    max_res = float(max(f.residual for f in fits))

    route_a = kv.passed and rf.residual <= cfg.tol_curvfit
    route_b = spread <= cfg.tol_curvfit and max_res <= cfg.tol_curvfit
    if route_a != route_b:
        raise InconsistentVerdictError(
            f"route A (Killing={kv.passed}, Riemannian residual={rf.residual:.3g}) says "
            f"{'constant' if route_a else 'not constant'}, route B (flag spread={spread:.3g}, "
            f"max fit residual={max_res:.3g}) says {'constant' if route_b else 'not constant'}"
        )
    if route_a and abs(rf.K - flag_K) > cfg.tol_curvfit:
        raise InconsistentVerdictError(f"routes agree on constancy but K differs: {rf.K!r} vs {flag_K!r}")

    reasons = []
    if not kv.passed:
        reasons.append("Killing check failed")
    if rf.residual > cfg.tol_curvfit:
        reasons.append("(M, h) is not of constant curvature")
    if spread > cfg.tol_curvfit:
        reasons.append("flag curvature varies across samples")
    if max_res > cfg.tol_curvfit:
        reasons.append("not of scalar flag curvature")

    return ClassificationReport(
        killing={"passed": kv.passed, "max_abs_R": kv.max_abs_R, "witness": list(kv.witness),
                 "max_WWR": kv.max_WWR, "max_S_vec": kv.max_S_vec, "tol": kv.tol},
        riemannian={"K": rf.K, "residual": rf.residual, "max_misfit": rf.max_misfit,
                    "per_point_K": list(rf.per_point_K)},
        flag={"K": flag_K, "spread": spread, "max_residual": max_res, "count": len(fits)},
        theorem4={"constant_curvature": route_a, "K": rf.K if route_a else None,
                  "routes_agree": True, "reasons": reasons},
        provenance={"seed": cfg.seed, "points": cfg.points, "directions": cfg.directions,
                    "tolerances": cfg.tolerances(), "cone_margin": cfg.cone_margin,
                    "fd_step": cfg.fd_step},
        samples=[{"x": [float(v) for v in x], "y": [float(v) for v in y], "K": f.K, "residual": f.residual}
                 for (x, y), f in zip(pairs, fits)],
    )
