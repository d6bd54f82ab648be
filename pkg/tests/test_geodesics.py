import io

import numpy as np
import pytest

from kropinakit.errors import InadmissibleError, SingularDirectionError
from kropinakit.geodesics import F_drift, integrate
from kropinakit.kropina import AlphaBetaNorm, AlphaBetaSpray, KillingSpray, KropinaNorm, NavigationSpray

X0 = np.array([0.1, 0.2, -0.1])
Y0 = np.array([0.3, 0.1, 0.8])


def test_flat_straight_lines(flat_kropina):
    spray, F = AlphaBetaSpray(flat_kropina), AlphaBetaNorm(flat_kropina)
    tr = integrate(spray, [0, 0], [1, 0], 0.01, 100, flat_kropina.chart, F)
    assert tr.completed and len(tr) == 101
    assert np.allclose(tr.x, np.c_[tr.t, np.zeros(101)], atol=1e-12)
    tr = integrate(spray, [0, 0], [1, 0.5], 0.01, 50, None, F)
    assert np.allclose(tr.x, np.outer(tr.t, [1, 0.5]), atol=1e-12)
    assert F_drift(tr) <= 1e-12
    assert np.all(np.diff(tr.t) > 0)


def test_inadmissible_start(flat_kropina):
    with pytest.raises(InadmissibleError):
        integrate(AlphaBetaSpray(flat_kropina), [0, 0], [0, 1], 0.01, 10)
    with pytest.raises(InadmissibleError):
        integrate(AlphaBetaSpray(flat_kropina), [5, 0], [1, 0], 0.01, 10, flat_kropina.chart)
    with pytest.raises(ValueError):
        integrate(AlphaBetaSpray(flat_kropina), [0, 0], [1, 0], 0.0, 10)


def test_early_halt_on_chart_exit(flat_kropina):
    tr = integrate(AlphaBetaSpray(flat_kropina), [0.5, 0], [1, 0], 0.1, 100, flat_kropina.chart)
    assert not tr.completed and "chart" in tr.exit_reason
    assert tr.x[-1, 0] <= 1.0 and len(tr) == 6


def test_early_halt_on_cone_exit():
    def spray(x, y):
        if x[0] > 0.5:
            raise SingularDirectionError("outside cone")
        return np.zeros(2)

    tr = integrate(spray, [0, 0], [1, 0], 0.1, 100)
    assert not tr.completed and "cone" in tr.exit_reason
    assert tr.x[-1, 0] <= 0.5 + 1e-12


def test_hopf_conservation(hopf_nav):
    F = KropinaNorm(hopf_nav)
    tr = integrate(KillingSpray(hopf_nav), X0, Y0, 1e-3, 2000, hopf_nav.chart, F)
    assert tr.completed
    assert F_drift(tr) <= 1e-6
    assert F_drift(tr, F) == F_drift(tr)


def test_killing_and_navigation_traces_agree(hopf_nav):
    a = integrate(KillingSpray(hopf_nav), X0, Y0, 1e-3, 1000, hopf_nav.chart)
    b = integrate(NavigationSpray(hopf_nav), X0, Y0, 1e-3, 1000, hopf_nav.chart)
    assert np.abs(a.x - b.x).max() <= 1e-8 and np.abs(a.v - b.v).max() <= 1e-8


def test_fourth_order_convergence(hopf_nav):
    F = KropinaNorm(hopf_nav)
    spray = NavigationSpray(hopf_nav)
    drifts = [F_drift(integrate(spray, X0, Y0, dt, round(2.0 / dt), hopf_nav.chart, F)) for dt in (0.1, 0.05, 0.025)]
    for coarse, fine in zip(drifts, drifts[1:]):
        assert 8 <= coarse / fine <= 32


def test_csv_export(flat_kropina):
    tr = integrate(AlphaBetaSpray(flat_kropina), [0, 0], [1, 0], 0.1, 3, flat_kropina.chart, AlphaBetaNorm(flat_kropina))
    buf = io.StringIO()
    tr.write_csv(buf, footer={"F_drift": 0.0})
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,x1,x2,v1,v2,F"
    assert len(lines) == 1 + 4 + 1 and lines[-1] == "# F_drift=0.0"
    assert [float(v) for v in lines[2].split(",")] == pytest.approx([0.1, 0.1, 0, 1, 0, 0.5])
