"""Fixed-step RK4 integration of the spray ODE x'' + 2 G(x, x') = 0."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import InadmissibleError, KropinaError, SingularDirectionError


@dataclass
class GeodesicTrace:
    t: np.ndarray
    x: np.ndarray          # (samples, n)
    v: np.ndarray          # (samples, n)
    dt: float
    provenance: str
    F: np.ndarray | None = None
    exit_reason: str | None = None   # None when all requested steps completed

    def __len__(self):
        return len(self.t)

    @property
    def completed(self) -> bool:
        return self.exit_reason is None

    def columns(self, names=None):
        n = self.x.shape[1]
        names = names or [f"x{i + 1}" for i in range(n)]
        return ["t", *names, *[f"v{i + 1}" for i in range(n)], "F"]

    def write_csv(self, fh, coordinate_names=None, footer: dict | None = None):
        """Columns t, x1..xn, v1..vn, F; footer lines start with '#'."""
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(self.columns(coordinate_names))
        F = self.F if self.F is not None else np.full(len(self.t), np.nan)
        for k in range(len(self.t)):
            w.writerow([repr(float(self.t[k])), *map(lambda v: repr(float(v)), self.x[k]),
                        *map(lambda v: repr(float(v)), self.v[k]), repr(float(F[k]))])
        for key, val in (footer or {}).items():
            fh.write(f"# {key}={val}\n")

    def to_csv(self, coordinate_names=None, footer=None) -> str:
        buf = io.StringIO()
        self.write_csv(buf, coordinate_names, footer)
        return buf.getvalue()


def _spray_fn(spray):
    if hasattr(spray, "fiber"):
        return lambda x, y: spray.fiber(x)(y)
    return lambda x, y: np.asarray(spray(x, y), dtype=float)


def integrate(spray, x0, y0, dt: float, steps: int, chart=None, F_fn=None) -> GeodesicTrace:
    """Classical RK4 on (x, v) with v' = -2 G(x, v).

    Halts early (partial trace, ``exit_reason`` set) when the trajectory leaves
    ``chart``'s box or the admissible cone; raises :class:`InadmissibleError` if
    (x0, y0) itself is inadmissible.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    G = _spray_fn(spray)
    x = np.asarray(x0, dtype=float)
    v = np.asarray(y0, dtype=float)
    # roundoff slack so a trajectory ending exactly on the boundary is not cut short
    slack = 1e-9 * max((hi - lo for lo, hi in chart.domain), default=1.0) if chart is not None else 0.0
    if chart is not None and not chart.contains(x, slack):
        raise InadmissibleError(f"x0={tuple(x)} lies outside the chart domain")
    try:
        G(x, v)
        F0 = F_fn(x, v) if F_fn is not None else None
    except SingularDirectionError as err:
        raise InadmissibleError(f"initial condition is not admissible: {err}") from None

    ts, xs, vs = [0.0], [x.copy()], [v.copy()]
    Fs = [F0] if F_fn is not None else None
    reason = None

    def rhs(xx, vv):
        return vv, -2.0 * G(xx, vv)

    for k in range(1, steps + 1):
        try:
            k1x, k1v = rhs(x, v)
            k2x, k2v = rhs(x + 0.5 * dt * k1x, v + 0.5 * dt * k1v)
            k3x, k3v = rhs(x + 0.5 * dt * k2x, v + 0.5 * dt * k2v)
            k4x, k4v = rhs(x + dt * k3x, v + dt * k3v)
        except SingularDirectionError:
            reason = f"left admissible cone at step {k}"
            break
        except (ArithmeticError, KropinaError) as err:
            reason = f"evaluation failed at step {k}: {err}"
            break
        xn = x + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        vn = v + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        if chart is not None and not chart.contains(xn, slack):
            reason = f"left chart domain at step {k}"
            break
        if F_fn is not None:
            try:
                Fs.append(F_fn(xn, vn))
            except SingularDirectionError:
                reason = f"left admissible cone at step {k}"
                break
        x, v = xn, vn
        ts.append(k * dt)
        xs.append(x.copy())
        vs.append(v.copy())

    return GeodesicTrace(
        np.array(ts), np.array(xs), np.array(vs), dt,
        getattr(spray, "provenance", "custom"),
        np.array(Fs) if Fs is not None else None, reason,
    )


def F_drift(trace: GeodesicTrace, F_fn=None) -> float:
    """max_t |F(x(t), x'(t)) - F(x0, y0)| / F(x0, y0)."""
    if len(trace) == 0:
        raise ValueError("empty trace")
    if F_fn is not None:
        F = np.array([F_fn(x, v) for x, v in zip(trace.x, trace.v)])
    elif trace.F is not None:
        F = trace.F
    else:
        raise ValueError("trace carries no F values; pass F_fn")
    return float(np.max(np.abs(F - F[0])) / abs(F[0]))
