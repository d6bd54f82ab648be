"""kropinakit: numerical toolkit for Kropina metrics F = alpha^2 / beta.

Symbolic scalar fields on a coordinate chart, tensor calculus, the (a, b) <-> (h, W)
navigation correspondence, geodesic sprays, flag-curvature classification and
geodesic integration.
"""
from .errors import *  # noqa: F401,F403
from .exprcore import ScalarField, constant_field, differentiate, evaluate, parse
from .geom import Chart, FormField, MetricField, christoffel, covector, riemann, vector
from .kropina import (
    AlphaBetaSpray,
    KillingSpray,
    KropinaData,
    KropinaNorm,
    NavigationData,
    NavigationSpray,
    RiemannianSpray,
    from_navigation,
    spray_alpha_beta,
    spray_killing,
    spray_navigation,
    to_navigation,
)
from .classify import SampleConfig, classify_theorem4, flag_curvature_fit, killing_check
from .geodesics import F_drift, GeodesicTrace, integrate

__version__ = "0.1.0"
