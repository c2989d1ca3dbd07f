import numpy as np
import pytest

from marginmi.survey import StratifiedPopulation, SurveySample


def pytest_addoption(parser):
    parser.addoption("--quick", action="store_true", default=False,
                     help="skip the full-scale acceptance scenarios")


def make_population(stratum, y, x):
    stratum = np.asarray(stratum, dtype=np.int64)
    sizes = {int(s): int((stratum == s).sum()) for s in np.unique(stratum)}
    return StratifiedPopulation(stratum=stratum,
                                y=np.asarray(y, dtype=np.int64),
                                x=np.asarray(x, dtype=np.int64),
                                stratum_sizes=sizes)


def make_sample(stratum, weight, y, x, r=None):
    stratum = np.asarray(stratum, dtype=np.int64)
    x = np.asarray(x, dtype=float)
    if r is None:
        r = np.isnan(x).astype(np.int64)
    draws = {int(s): int((stratum == s).sum()) for s in np.unique(stratum)}
    return SurveySample(stratum=stratum,
                        weight=np.asarray(weight, dtype=float),
                        y=np.asarray(y, dtype=np.int64),
                        x=x,
                        r=np.asarray(r, dtype=np.int64),
                        stratum_draws=draws)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
