import math

import pytest
from hypothesis import HealthCheck, settings

from wentropy import NumericConfig

settings.register_profile(
    "wentropy",
    deadline=None,
    max_examples=25,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("wentropy")

SDE_N01 = 0.5 * math.log(2 * math.pi * math.e)


@pytest.fixture
def cfg():
    return NumericConfig(rng_seed=42)
