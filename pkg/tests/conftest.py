from fractions import Fraction

import pytest
from hypothesis import HealthCheck, settings

from timely_pir.model import SystemConfig

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def make_config(mu, sigma2=None, *, L=8, r_min=Fraction(1, 3), M=3):
    return SystemConfig.build(mu, sigma2, L=L, r_min=Fraction(r_min), M=M)


@pytest.fixture
def two_server():
    return make_config([1, 2], [4, 1], r_min=Fraction(4, 7))
