"""Loading of manifold spec files (TOML).

A spec fully determines a run::

    [chart]
    coordinates = ["x1", "x2"]          # or: dimension = 2
    domain = [[-1, 1], [-1, 1]]
    eps_dir = 1e-6                      # optional

    [kropina]                           # either this block ...
    a = [["1", "0"], ["", "1"]]         # upper triangle suffices
    b = ["2", "0"]

    [navigation]                        # ... or this one
    h = [["1", "0"], ["", "1"]]
    W = ["cos(x2)", "sin(x2)"]
    W_index = "upper"                   # default; "lower" for W_i
    kappa = "0"                         # optional gauge

    [sampling]
    points = 20
    directions = 5
    seed = 0
    [sampling.tolerances]
    killing = 1e-8
    curvfit = 1e-5
"""
from __future__ import annotations

import hashlib
import re
import sys
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .classify import SampleConfig
from .errors import ExprSyntaxError, GeometryError, KropinaError, SpecError
from .geom import Chart, FormField, MetricField
from .kropina import EPS_DIR, KropinaData, NavigationData

BUNDLED = ("flat_constant", "scaled_flat", "s3_hopf", "non_killing_rotation")

_TOL_KEYS = {"killing": "tol_killing", "curvfit": "tol_curvfit", "identity": "tol_identity",
             "eps_dir": "eps_dir"}


@dataclass
class ManifoldSpec:
    chart: Chart
    data: object                  # KropinaData or NavigationData
    sampling: SampleConfig
    eps_dir: float = EPS_DIR
    name: str = ""
    digest: str = ""
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def kind(self) -> str:
        return "kropina" if isinstance(self.data, KropinaData) else "navigation"

    @property
    def navigation(self) -> NavigationData:
        return self.data.navigation if isinstance(self.data, KropinaData) else self.data


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    """1-based line of ``key`` inside ``[section]`` (or of the header when key is None)."""
    current = None
    header = re.compile(r"^\s*\[\s*([^\]]+?)\s*\]\s*(#.*)?$")
    keyre = re.compile(rf"^\s*{re.escape(key)}\s*=") if key else None
    for no, line in enumerate(text.splitlines(), 1):
        m = header.match(line)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return no
            continue
        if keyre and current == section and keyre.match(line):
            return no
    return None


class _Loader:
    def __init__(self, text: str, path: str):
        self.text = text
        self.path = path

    def fail(self, msg, section=None, key=None):
        line = _line_of(self.text, section, key) if section else None
        raise SpecError(msg, self.path, line)

    def section(self, doc, name, required=True):
        sec = doc.get(name)
        if sec is None:
            if required:
                self.fail(f"missing [{name}] section")
            return None
        if not isinstance(sec, dict):
            self.fail(f"[{name}] must be a table", name)
        return sec

    def chart(self, doc) -> tuple[Chart, float]:
        sec = self.section(doc, "chart")
        unknown = set(sec) - {"dimension", "coordinates", "domain", "eps_dir", "exclusion"}
        if unknown:
            self.fail(f"unknown key(s) in [chart]: {', '.join(sorted(unknown))}", "chart")
        coords = sec.get("coordinates")
        dim = sec.get("dimension")
        if coords is None:
            if not isinstance(dim, int) or dim < 1:
                self.fail("[chart] needs 'coordinates' or a positive integer 'dimension'", "chart")
            coords = [f"x{i + 1}" for i in range(dim)]
        if dim is not None and dim != len(coords):
            self.fail(f"dimension = {dim} but {len(coords)} coordinates given", "chart", "dimension")
        domain = sec.get("domain")
        if domain is None:
            self.fail("[chart] needs a 'domain' box", "chart")
        try:
            chart = Chart(tuple(str(c) for c in coords), tuple(tuple(iv) for iv in domain))
            chart.require_geometric()
        except (GeometryError, TypeError, ValueError) as err:
            self.fail(f"invalid chart: {err}", "chart", "domain")
        if "exclusion" in sec:
            excl = self.expr(chart, sec["exclusion"], "chart", "exclusion")
            chart = Chart(chart.coordinates, chart.domain, excl)
        eps = sec.get("eps_dir", EPS_DIR)
        if not isinstance(eps, (int, float)) or not eps > 0:
            self.fail("eps_dir must be a positive number", "chart", "eps_dir")
        return chart, float(eps)

    def expr(self, chart, value, section, key):
        if isinstance(value, bool) or not isinstance(value, (str, int, float)):
            self.fail(f"{key}: expected an expression string, got {value!r}", section, key)
        try:
            return chart.field(value)
        except ExprSyntaxError as err:
            self.fail(f"{key}: {err}", section, key)

    def matrix(self, chart, value, section, key) -> MetricField:
        n = chart.dim
        if not isinstance(value, list) or len(value) != n or any(
                not isinstance(r, list) or len(r) != n for r in value):
            self.fail(f"{key} must be a {n}x{n} array of expressions", section, key)
        rows = [[None] * n for _ in range(n)]
        for i in range(n):
            for j in range(n):
                v = value[i][j]
                if i > j and isinstance(v, str) and not v.strip():
                    continue
                rows[i][j] = self.expr(chart, v, section, key)
        try:
            return MetricField.from_upper(rows, chart)
        except GeometryError as err:
            self.fail(f"{key} is not symmetric: {err}", section, key)

    def vector(self, chart, value, section, key, variance) -> FormField:
        if not isinstance(value, list) or len(value) != chart.dim:
            self.fail(f"{key} must list {chart.dim} expressions", section, key)
        comps = [self.expr(chart, v, section, key) for v in value]
        return FormField(comps, chart, variance)

    def data(self, doc, chart):
        has_k, has_n = "kropina" in doc, "navigation" in doc
        if has_k == has_n:
            self.fail("exactly one of [kropina] or [navigation] is required")
        if has_k:
            sec = self.section(doc, "kropina")
            for k in ("a", "b"):
                if k not in sec:
                    self.fail(f"[kropina] needs '{k}'", "kropina")
            a = self.matrix(chart, sec["a"], "kropina", "a")
            b = self.vector(chart, sec["b"], "kropina", "b", "lower")
            return KropinaData(a, b)
        sec = self.section(doc, "navigation")
        for k in ("h", "W"):
            if k not in sec:
                self.fail(f"[navigation] needs '{k}'", "navigation")
        h = self.matrix(chart, sec["h"], "navigation", "h")
        variance = sec.get("W_index", "upper")
        if variance not in ("upper", "lower"):
            self.fail("W_index must be 'upper' or 'lower'", "navigation", "W_index")
        W = self.vector(chart, sec["W"], "navigation", "W", variance)
        kappa = self.expr(chart, sec.get("kappa", "0"), "navigation", "kappa")
        return NavigationData(h, W, kappa)

    def sampling(self, doc, eps_dir) -> SampleConfig:
        sec = self.section(doc, "sampling", required=False) or {}
        kw = {"eps_dir": eps_dir}
        for key in ("points", "directions", "seed"):
            if key in sec:
                if not isinstance(sec[key], int) or isinstance(sec[key], bool):
                    self.fail(f"{key} must be an integer", "sampling", key)
                kw[key] = sec[key]
        for key, val in (sec.get("tolerances") or {}).items():
            if key not in _TOL_KEYS:
                self.fail(f"unknown tolerance {key!r} (known: {', '.join(_TOL_KEYS)})",
                          "sampling.tolerances", key)
            kw[_TOL_KEYS[key]] = float(val)
        try:
            return SampleConfig(**kw)
        except ValueError as err:
            self.fail(str(err), "sampling")


def loads(text: str, path: str = "<string>", name: str = "") -> ManifoldSpec:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        m = re.search(r"line (\d+)", str(err))
        raise SpecError(f"malformed TOML: {err}", path, int(m.group(1)) if m else None) from None
    ld = _Loader(text, path)
    chart, eps = ld.chart(doc)
    try:
        data = ld.data(doc, chart)
    except SpecError:
        raise
    except KropinaError as err:
        raise SpecError(str(err), path) from None
    cfg = ld.sampling(doc, eps)
    digest = hashlib.sha256(text.encode()).hexdigest()
    return ManifoldSpec(chart, data, cfg, eps, name or Path(path).stem, digest, doc)


def bundled_path(name: str):
    return resources.files("kropinakit") / "specs" / f"{name}.toml"


def load(path_or_name) -> ManifoldSpec:
    """Load a spec file; a bare bundled name (e.g. ``s3_hopf``) is also accepted."""
    p = Path(path_or_name)
    if not p.exists() and str(path_or_name).replace("-", "_") in BUNDLED:
        name = str(path_or_name).replace("-", "_")
        return loads(bundled_path(name).read_text(), f"{name}.toml", name)
    try:
        text = p.read_text()
    except OSError as err:
        raise SpecError(f"cannot read spec: {err}", str(p)) from None
    return loads(text, str(p))


def with_overrides(spec: ManifoldSpec, **kw) -> ManifoldSpec:
    """Return a copy whose SampleConfig has the given non-None fields replaced."""
    kw = {k: v for k, v in kw.items() if v is not None}
    if not kw:
        return spec
    try:
        cfg = replace(spec.sampling, **kw)
    except ValueError as err:
        raise SpecError(str(err), spec.name) from None
    out = replace(spec, sampling=cfg)
    if "eps_dir" in kw:
        out.eps_dir = kw["eps_dir"]
    return out
