import numpy as np
import pytest

from headfit import synth_model


@pytest.fixture(scope="session")
def small_model():
    return synth_model(7, k=120, s=4, e=3)


@pytest.fixture(scope="session")
def desk_model():
    return synth_model(42, k=500, s=10, e=5)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish random rotation via QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 2] *= -1
    return q
