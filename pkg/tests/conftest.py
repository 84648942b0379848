import numpy as np
import pytest

from battmpc import market, params


@pytest.fixture(scope="session")
def cell():
    return params.default()


@pytest.fixture(scope="session")
def inert(cell):
    # side reaction switched off
    return cell.without_fade()


@pytest.fixture(scope="session")
def day():
    return market.synthetic(11, 24)


def hour_of(value, S=1800):
    return np.full(S, float(value))
