import numpy as np
import pytest

from quadloco.dynamics import GeneralizedState, default_stand_q, desk_model


@pytest.fixture(scope="session")
def model():
    return desk_model()


def make_state(model, rng=None, q_j=None, zero_vel=False):
    """Random in-limit state, or a stand state when q_j is given."""
    from quadloco.so3 import random_rotation

    if q_j is None:
        assert rng is not None
        lo = model.q_min_full
        hi = model.q_max_full
        q_j = rng.uniform(lo, hi)
        R = random_rotation(rng)
        pos = rng.uniform(-1.0, 1.0, size=3) + np.array([0.0, 0.0, 0.6])
        twist = np.zeros(6) if zero_vel else rng.uniform(-1.0, 1.0, size=6)
        qd = np.zeros(12) if zero_vel else rng.uniform(-2.0, 2.0, size=12)
    else:
        R = np.eye(3)
        pos = np.array([0.0, 0.0, 0.55])
        twist = np.zeros(6)
        qd = np.zeros(12)
    return GeneralizedState(pos, R, twist, np.asarray(q_j, float), qd)


@pytest.fixture
def stand_state(model):
    return make_state(model, q_j=default_stand_q(model, 0.55))
