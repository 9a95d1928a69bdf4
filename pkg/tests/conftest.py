import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gazeattn.gaze_metrics import FixationSet

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_fixations(image_id, points, dims=(8, 8)):
    return FixationSet(image_id, np.array(points, dtype=np.int64).reshape(-1, 2), *dims)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
