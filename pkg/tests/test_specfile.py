import math

import numpy as np
import pytest

from kropinakit.errors import SpecError
from kropinakit.kropina import KropinaData, NavigationData
from kropinakit.specfile import BUNDLED, load, loads, with_overrides

FLAT = """\
[chart]
coordinates = ["u", "v"]
domain = [[-1, 1], [-1, 1]]

[kropina]
a = [["1", "0"],
     ["",  "1"]]
b = ["2", "0"]
"""


def test_minimal_spec_and_defaults():
    spec = loads(FLAT, "flat.toml")
    assert isinstance(spec.data, KropinaData)
    assert spec.chart.coordinates == ("u", "v")
    assert spec.sampling.points == 20 and spec.eps_dir == 1e-6
    assert spec.name == "flat" and len(spec.digest) == 64


def test_upper_triangle_mirrored():
    text = FLAT.replace('["1", "0"]', '["1", "0.5*u"]')
    a = loads(text).data.a
    assert a[1, 0] is a[0, 1]
    assert np.allclose(a.jet([0.4, 0])[0], [[1, 0.2], [0.2, 1]])


def test_asymmetric_matrix_rejected_with_line():
    text = FLAT.replace('["",  "1"]', '["v",  "1"]')
    with pytest.raises(SpecError) as info:
        loads(text, "bad.toml")
    assert info.value.line == 6
    assert "symmetric" in str(info.value) and "bad.toml:6" in str(info.value)


def test_expression_errors_carry_line():
    with pytest.raises(SpecError) as info:
        loads(FLAT.replace('b = ["2", "0"]', 'b = ["2*w", "0"]'))
    assert info.value.line == 8 and "'w'" in str(info.value)
    with pytest.raises(SpecError) as info:
        loads(FLAT.replace('b = ["2", "0"]', 'b = ["2 +", "0"]'))
    assert info.value.line == 8


@pytest.mark.parametrize("mutate, fragment", [
    (lambda t: t.replace("[kropina]", "[nothing]"), "exactly one"),
    (lambda t: t + '\n[navigation]\nh = [["1","0"],["","1"]]\nW = ["1","0"]\n', "exactly one"),
    (lambda t: t.replace('domain = [[-1, 1], [-1, 1]]', 'domain = [[-1, 1]]'), "chart"),
    (lambda t: t.replace('b = ["2", "0"]', 'b = ["2"]'), "b must"),
    (lambda t: t + "\n[sampling]\npoints = 0\n", "sample counts"),
    (lambda t: t + "\n[sampling.tolerances]\nbogus = 1\n", "unknown tolerance"),
    (lambda t: t.replace("[chart]", "[chart"), "malformed"),
])
def test_validation_errors(mutate, fragment):
    with pytest.raises(SpecError, match=fragment):
        loads(mutate(FLAT))


def test_one_dimensional_chart_rejected():
    text = '[chart]\ndimension = 1\ndomain = [[0, 1]]\n[kropina]\na = [["1"]]\nb = ["1"]\n'
    with pytest.raises(SpecError, match="n >= 2"):
        loads(text)


def test_navigation_block():
    text = """\
[chart]
dimension = 2
domain = [[-1, 1], [-1, 1]]
[navigation]
h = [["1", "0"], ["", "1"]]
W = ["cos(x2)", "sin(x2)"]
kappa = "ln(4)"
[sampling]
points = 3
directions = 2
seed = 9
[sampling.tolerances]
killing = 1e-9
"""
    spec = loads(text)
    assert isinstance(spec.data, NavigationData)
    assert spec.data.kappa([0, 0]) == pytest.approx(math.log(4))
    assert spec.sampling.seed == 9 and spec.sampling.tol_killing == 1e-9


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_specs_load(name):
    spec = load(name)
    assert spec.name == name
    assert spec.navigation.check_unit_length([np.zeros(spec.chart.dim)]) <= 1e-12
    assert load(name.replace("_", "-")).digest == spec.digest


def test_missing_file():
    with pytest.raises(SpecError, match="cannot read"):
        load("/nonexistent/spec.toml")


def test_overrides():
    spec = with_overrides(load("flat_constant"), seed=4, points=None, eps_dir=1e-3)
    assert spec.sampling.seed == 4 and spec.sampling.points == 20
    assert spec.eps_dir == 1e-3 and spec.sampling.eps_dir == 1e-3
