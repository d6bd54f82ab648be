import json

import numpy as np
import pytest

from kropinakit.classify import (
    SampleConfig,
    berwald_curvature,
    classify_theorem4,
    flag_curvature_fit,
    killing_check,
    lemma4_residual,
    riemannian_cc_check,
    sample_pairs,
    space_form_killing_residual,
)
from kropinakit.errors import NotKillingError, StepSizeError
from kropinakit.geom import Chart, MetricField, riemann, sample_box, vector
from kropinakit.kropina import (
    AlphaBetaNorm,
    AlphaBetaSpray,
    KropinaNorm,
    NavigationSpray,
    RiemannianNorm,
    RiemannianSpray,
)


def test_sampling_is_deterministic_and_admissible(hopf_nav):
    cfg = SampleConfig(points=6, directions=3, seed=11)
    p1, s1 = sample_pairs(hopf_nav, cfg)
    p2, s2 = sample_pairs(hopf_nav, cfg)
    assert len(s1) == 18
    for (x1, y1), (x2, y2) in zip(s1, s2):
        assert np.array_equal(x1, x2) and np.array_equal(y1, y2)
        q = hopf_nav.at(x1)
        assert q.W @ y1 >= cfg.cone_margin * np.sqrt(y1 @ q.h @ y1) - 1e-15


def test_config_validation():
    with pytest.raises(ValueError):
        SampleConfig(points=0)
    with pytest.raises(ValueError):
        SampleConfig(tol_killing=-1)


def test_berwald_zero_spray():
    zero = lambda x, y: np.zeros(2)
    assert not berwald_curvature(zero, [0.1, 0.2], [1.0, 0.5]).any()


def test_berwald_flat_kropina(flat_kropina):
    R = berwald_curvature(AlphaBetaSpray(flat_kropina), [0.2, 0.1], [1.0, 0.4])
    assert np.abs(R).max() <= 1e-7


@pytest.mark.parametrize("which", ["s2", "s3"])
def test_berwald_matches_christoffel_curvature(which, s3_metric, rng):
    if which == "s2":
        g = MetricField.diagonal(["1", "sin(x1)^2"], Chart.standard(2, [(0.3, 2.8), (-3, 3)]))
    else:
        g = s3_metric
    spray = RiemannianSpray(g)
    for x in sample_box(g.chart, 5, rng):
        y = rng.standard_normal(g.n)
        B = berwald_curvature(spray, x, y)
        ref = np.einsum("jikl,j,k->il", riemann(g, x), y, y)
        assert np.abs(B - ref).max() <= 1e-6 * max(1.0, np.abs(ref).max())


def test_berwald_step_failure_detected():
    # a spray whose x-dependence is too oscillatory for the step
    wild = lambda x, y: np.array([np.sin(1e4 * x[0]) * y @ y, 0.0])
    with pytest.raises(StepSizeError):
        berwald_curvature(wild, [0.1, 0.2], [1.0, 0.5])


def test_flag_fit_examples(flat_kropina, hopf_nav):
    fit = flag_curvature_fit(AlphaBetaSpray(flat_kropina), AlphaBetaNorm(flat_kropina), [0.1, 0.1], [1.0, 0.3])
    assert abs(fit.K) <= 1e-7 and fit.residual <= 1e-7
    for x, y in sample_pairs(hopf_nav, SampleConfig(points=3, directions=2))[1]:
        fit = flag_curvature_fit(NavigationSpray(hopf_nav), KropinaNorm(hopf_nav), x, y)
        assert abs(fit.K - 1) <= 1e-5 and fit.residual <= 1e-5


def test_flag_fit_riemannian_sphere(s3_metric):
    fit = flag_curvature_fit(RiemannianSpray(s3_metric), RiemannianNorm(s3_metric), [0.3, -0.2, 0.5], [1.0, 0.2, -0.4])
    assert abs(fit.K - 1) <= 1e-6


def test_killing_check_examples(flat_nav, rotating_nav, hopf_nav, rng):
    pts = sample_box(flat_nav.chart, 20, rng)
    v = killing_check(flat_nav, pts)
    assert v.passed and v.max_abs_R == 0.0
    pts = list(pts) + [np.array([0.0, 0.0])]
    v = killing_check(rotating_nav, pts)
    assert not v.passed and v.max_abs_R >= 0.99
    v = killing_check(hopf_nav, sample_box(hopf_nav.chart, 20, rng))
    assert v.passed and v.max_abs_R <= 1e-9


def test_riemannian_cc_check(flat_nav, s3_metric, rng):
    assert riemannian_cc_check(flat_nav.h, sample_box(flat_nav.chart, 5, rng)).K == 0.0
    fit = riemannian_cc_check(s3_metric, sample_box(s3_metric.chart, 10, rng))
    assert abs(fit.K - 1) <= 1e-6
    s2 = MetricField.diagonal(["1", "sin(x1)^2"], Chart.standard(2, [(0.3, 2.8), (-3, 3)]))
    assert abs(riemannian_cc_check(s2, sample_box(s2.chart, 10, rng)).K - 1) <= 1e-8


def test_lemma4(flat_nav, hopf_nav, rotating_nav, chart2, rng):
    assert lemma4_residual(flat_nav, sample_box(chart2, 10, rng)) == 0.0
    assert lemma4_residual(hopf_nav, sample_box(hopf_nav.chart, 50, rng)) <= 1e-7
    # Killing but not unit length: the identity does not need |W| = 1
    rot = (flat_nav.h, vector(["-x2", "x1"], chart2))
    assert lemma4_residual(rot, sample_box(chart2, 20, rng)) <= 1e-7
    with pytest.raises(NotKillingError):
        lemma4_residual(rotating_nav, [np.array([0.1, 0.2])])


def test_space_form_consequences(hopf_nav):
    pairs = sample_pairs(hopf_nav, SampleConfig(points=10, directions=3))[1]
    assert space_form_killing_residual(hopf_nav, 1.0, pairs) <= 1e-7
    assert space_form_killing_residual(hopf_nav, 0.5, pairs) > 1e-3


def test_classify_flat(flat_kropina):
    rep = classify_theorem4(flat_kropina, SampleConfig(points=10, directions=3))
    assert rep.constant_curvature and rep.K == 0.0
    assert abs(rep.flag["K"]) <= 1e-7


def test_classify_hopf(hopf_nav):
    rep = classify_theorem4(hopf_nav, SampleConfig(points=5, directions=3))
    assert rep.constant_curvature and abs(rep.K - 1) <= 1e-5
    assert abs(rep.flag["K"] - 1) <= 1e-5


def test_classify_non_killing(rotating_nav):
    rep = classify_theorem4(rotating_nav, SampleConfig(points=5, directions=3))
    assert not rep.constant_curvature and rep.K is None
    assert rep.theorem4["reasons"][0] == "Killing check failed"
    assert rep.flag["spread"] > 0.1


def test_report_serialises_and_is_worker_independent(hopf_nav):
    a = classify_theorem4(hopf_nav, SampleConfig(points=4, directions=2, workers=1)).to_json()
    b = classify_theorem4(hopf_nav, SampleConfig(points=4, directions=2, workers=3)).to_json()
    assert a == b
    assert json.loads(a)["theorem4"]["constant_curvature"] is True
