import math

import numpy as np
import pytest

from kropinakit.errors import GeometryError, IllConditionedError, NotPositiveDefiniteError
from kropinakit.geom import (
    Chart,
    MetricField,
    bianchi_residual,
    christoffel,
    conformal_christoffel_residual,
    constant_curvature_model,
    covariant_derivative,
    covector,
    fit_constant_curvature,
    metric_at,
    ricci_identity_residual,
    riemann,
    sample_box,
    second_covariant_derivative,
    vector,
)


def test_chart_validation():
    with pytest.raises(GeometryError):
        Chart(("x1", "x1"), ((0, 1), (0, 1)))
    with pytest.raises(GeometryError):
        Chart(("x1", "x2"), ((1, 0), (0, 1)))
    with pytest.raises(GeometryError):
        MetricField([["1"]], Chart.standard(1))


def test_metric_at_examples():
    c = Chart.standard(2, [(-3, 3)] * 2)
    G, Ginv = metric_at(MetricField.diagonal([1, 1], c), [0.3, -2.0])
    assert np.array_equal(G, np.eye(2)) and np.array_equal(Ginv, np.eye(2))
    G, Ginv = metric_at(MetricField.diagonal(["1", "x1^2"], c), [2.0, 0.0])
    assert np.allclose(G, np.diag([1, 4])) and np.allclose(Ginv, np.diag([1, 0.25]))
    with pytest.raises(NotPositiveDefiniteError):
        metric_at(MetricField.diagonal([1, -1], c), [0.0, 0.0])
    with pytest.raises((IllConditionedError, NotPositiveDefiniteError)):
        metric_at(MetricField.diagonal(["1", "x1^2"], c), [0.0, 0.0])


def test_symmetry_enforced(chart2):
    with pytest.raises(GeometryError):
        MetricField([["1", "x1"], ["x2", "1"]], chart2)
    g = MetricField.from_upper([["2", "x1"], ["", "3"]], chart2)
    assert g[1, 0] is g[0, 1]


def test_christoffel_examples():
    c = Chart.standard(2, [(0.5, 3)] * 2)
    assert not christoffel(MetricField.diagonal([1, 1], c), [1.0, 1.0]).gamma.any()
    gam = christoffel(MetricField.diagonal(["1", "x1^2"], c), [2.0, 0.7]).gamma
    expect = np.zeros((2, 2, 2))
    expect[0, 1, 1] = -2.0
    expect[1, 0, 1] = expect[1, 1, 0] = 0.5
    assert np.allclose(gam, expect, atol=1e-15)

    c = Chart.standard(2)
    gam = christoffel(MetricField.diagonal(["exp(2*x1)"] * 2, c), [0.0, 0.0]).gamma
    expect = np.zeros((2, 2, 2))
    expect[0, 0, 0] = 1
    expect[0, 1, 1] = -1
    expect[1, 0, 1] = expect[1, 1, 0] = 1
    assert np.allclose(gam, expect, atol=1e-15)


def test_christoffel_derivative_matches_finite_differences(poly_kropina):
    x = np.array([0.3, -0.4])
    conn = christoffel(poly_kropina.a, x)
    h = 1e-5
    for l in range(2):
        e = np.zeros(2)
        e[l] = h
        fd = (christoffel(poly_kropina.a, x + e, False).gamma - christoffel(poly_kropina.a, x - e, False).gamma) / (2 * h)
        assert np.allclose(conn.dgamma[l], fd, atol=1e-8)


def test_conformal_identity(chart2, rng):
    flat = MetricField.diagonal([1, 1], chart2)
    assert conformal_christoffel_residual(flat, chart2.field(0), [0.2, 0.1]) == 0.0
    c = Chart.standard(2, [(0.5, 2.0), (-1, 1)])
    polar = MetricField.diagonal(["1", "x1^2"], c)
    for x in sample_box(chart2, 50, rng):
        assert conformal_christoffel_residual(flat, chart2.field("x1"), x) <= 1e-9
    for x in sample_box(c, 50, rng):
        assert conformal_christoffel_residual(polar, c.field("ln(1 + x2^2)"), x) <= 1e-9


def test_conformal_identity_on_polynomial_metric(poly_kropina, rng):
    rho = poly_kropina.chart.field("0.3*x1*x2 - 0.2*x2^2 + 0.1*x1^3")
    for x in sample_box(poly_kropina.chart, 50, rng):
        assert conformal_christoffel_residual(poly_kropina.a, rho, x) <= 1e-9


def test_covariant_derivative_examples(chart2):
    flat = MetricField.diagonal([1, 1], chart2)
    assert not covariant_derivative(covector([1, 2], chart2), flat, [0.1, 0.2]).any()
    D = covariant_derivative(covector(["cos(x2)", "sin(x2)"], chart2), flat, [0.4, 0.0])
    assert D[0, 1] == 0.0 and D[1, 1] == 1.0
    assert not second_covariant_derivative(covector([1, 2], chart2), flat, [0.1, 0.2]).any()


def test_metricity_lowering_commutes(poly_kropina, rng):
    g = poly_kropina.a
    V = vector(["x1*x2 + 1", "sin(x1) - x2^2"], g.chart)
    for x in sample_box(g.chart, 10, rng):
        Dlow = covariant_derivative(V.lower(g), g, x)
        # nabla_j V^i computed directly then lowered
        conn = christoffel(g, x, False)
        v, dv = V.jet(x, 1)
        DV = dv.T + np.einsum("ijr,r->ij", conn.gamma.transpose(0, 2, 1), v)  # d_j V^i + gamma^i_jr V^r
        assert np.allclose(conn.g @ DV, Dlow, atol=1e-10)


def test_ricci_identity_random_fields(poly_kropina, rng):
    g = poly_kropina.a
    for src in (["x1^2*x2", "cos(x1 + x2)"], ["exp(0.3*x1)", "x1 - x2^3"]):
        W = covector(src, g.chart)
        for x in sample_box(g.chart, 10, rng):
            assert ricci_identity_residual(W, g, x) <= 1e-8


def test_riemann_flat_and_spheres(chart2, s3_metric, rng):
    assert not riemann(MetricField.diagonal([1, 1], chart2), [0.3, 0.3]).any()
    c = Chart.standard(2, [(0.3, 2.8), (-3, 3)])
    s2 = MetricField.diagonal(["1", "sin(x1)^2"], c)
    x = [math.pi / 3, 0.5]
    R = riemann(s2, x)
    K, misfit = fit_constant_curvature(R, metric_at(s2, x)[0])
    assert abs(K - 1) <= 1e-8 and misfit <= 1e-8
    assert bianchi_residual(R) <= 1e-12
    for x in sample_box(s3_metric.chart, 20, rng):
        R = riemann(s3_metric, x)
        K, misfit = fit_constant_curvature(R, metric_at(s3_metric, x)[0])
        assert abs(K - 1) <= 1e-6 and misfit <= 1e-8


def test_riemann_sign_convention(chart2):
    # R_j^i_kl = K (g_kj delta^i_l - g_jl delta^i_k); on S^2 R_2^1_21 = g_22 = sin^2 x1
    c = Chart.standard(2, [(0.3, 2.8), (-3, 3)])
    s2 = MetricField.diagonal(["1", "sin(x1)^2"], c)
    x = [1.1, 0.0]
    R = riemann(s2, x)
    assert R[1, 0, 1, 0] == pytest.approx(math.sin(1.1) ** 2, rel=1e-12)
    assert np.allclose(R, constant_curvature_model(metric_at(s2, x)[0]), atol=1e-12)


def test_sample_box_respects_exclusion(rng):
    c = Chart.standard(2, exclusion=Chart.standard(2).field("x1"))
    pts = sample_box(c, 30, rng)
    assert all(p[0] > 0 for p in pts)
