import copy

import pytest
from hypothesis import HealthCheck, settings

from glevy.config import JUMP, QUADRATIC, TWO_MEASURE, RunConfig

settings.register_profile("glevy", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("glevy")


def _load(cfg):
    return RunConfig.from_dict(copy.deepcopy(cfg))


@pytest.fixture(scope="session")
def quadratic():
    rc = _load(QUADRATIC)
    return rc.model(), rc.grid(), rc.terminal()


@pytest.fixture(scope="session")
def jump():
    rc = _load(JUMP)
    return rc.model(), rc.grid(), rc.terminal()


@pytest.fixture(scope="session")
def two_measure():
    rc = _load(TWO_MEASURE)
    return rc.model(), rc.grid(), rc.terminal()
