import numpy as np
import pytest
from hypothesis import settings

from innovrefine.synth import PoseSampler, box_model, default_intrinsics, generate_scene
from innovrefine.vectorfield import PixelGrid

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def model():
    return box_model()


@pytest.fixture(scope="session")
def scene(model):
    return generate_scene(model, PoseSampler(), default_intrinsics(32), PixelGrid(32, 32), 7)


def random_rotation(rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
