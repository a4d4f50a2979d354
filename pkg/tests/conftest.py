import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from redres.kinematics import default_model
from redres.path_model import PathSpec, build_param_grid, sample_path

settings.register_profile("repo", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def model():
    return default_model()


@pytest.fixture(scope="session")
def limits(model):
    return model.limits


@pytest.fixture(scope="session")
def smoke_paths():
    """Both circle paths at 10 samples/s."""
    return {name: sample_path(PathSpec(name, 0.1, 10.0)) for name in ("test1", "test2")}


@pytest.fixture(scope="session")
def smoke_grids(smoke_paths, model):
    return {name: build_param_grid(p, 400, model) for name, p in smoke_paths.items()}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def dh_oracle(q, dh):
    """Textbook modified-DH chain written out entry by entry."""
    T = np.eye(4)
    qq = list(q) + [0.0]
    for i in range(8):
        th = qq[i] + dh.offset[i]
        a, d, al = dh.a[i], dh.d[i], dh.alpha[i]
        ct, st, ca, sa = np.cos(th), np.sin(th), np.cos(al), np.sin(al)
        A = np.array([
            [ct, -st, 0.0, a],
            [st * ca, ct * ca, -sa, -sa * d],
            [st * sa, ct * sa, ca, ca * d],
            [0.0, 0.0, 0.0, 1.0],
        ])
        T = T @ A
    return T
