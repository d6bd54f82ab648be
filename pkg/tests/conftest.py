import sys

import numpy as np
import pytest

from kropinakit.geom import Chart, MetricField, covector, vector
from kropinakit.kropina import KropinaData, NavigationData

S3_FACTOR = "4/(1 + x1^2 + x2^2 + x3^2)^2"
HOPF = ["x1*x3 - x2", "x2*x3 + x1", "(1 - x1^2 - x2^2 + x3^2)/2"]


@pytest.fixture(scope="session")
def chart2():
    return Chart.standard(2)


@pytest.fixture(scope="session")
def chart3():
    return Chart.standard(3, [(-2.0, 2.0)] * 3)


@pytest.fixture(scope="session")
def flat_kropina(chart2):
    return KropinaData(MetricField.diagonal([1, 1], chart2), covector([2, 0], chart2))


@pytest.fixture(scope="session")
def flat_nav(chart2):
    return NavigationData(MetricField.diagonal([1, 1], chart2), vector([1, 0], chart2))


@pytest.fixture(scope="session")
def rotating_nav(chart2):
    return NavigationData(MetricField.diagonal([1, 1], chart2), vector(["cos(x2)", "sin(x2)"], chart2))


@pytest.fixture(scope="session")
def s3_metric(chart3):
    return MetricField.diagonal([S3_FACTOR] * 3, chart3)


@pytest.fixture(scope="session")
def hopf_nav(s3_metric, chart3):
    return NavigationData(s3_metric, vector(HOPF, chart3))


@pytest.fixture(scope="session")
def poly_kropina(chart2):
    """Non-trivial polynomial data, positive definite with b^2 > 0 on [-1, 1]^2."""
    a = MetricField.from_upper([["1 + 0.3*x1^2 + 0.1*x2", "0.2*x1*x2"],
                                [None, "1.5 + 0.2*x2^2 - 0.1*x1"]], chart2)
    b = covector(["2 + 0.3*x1*x2 + 0.1*x2^2", "0.5*x1 - 0.2*x2^3"], chart2)
    return KropinaData(a, b)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("tests.test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
