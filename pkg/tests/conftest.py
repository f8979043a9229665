import numpy as np
import pytest

from decaymap import Ray2, SpectralMap


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_map(rng, L=3, M=3, X=10.0, Y=10.0, scale=0.5, base=0.8):
    """A random spectral map with a dominant constant term, so decay rates
    stay in a physically plausible band."""
    A = rng.normal(0.0, scale, size=(L, M))
    A[0, 0] = base + 0.2 * rng.standard_normal()
    return SpectralMap(A, X, Y)


def random_interior_ray(rng, X=10.0, Y=10.0, margin=0.2):
    origin = rng.uniform((margin * X, margin * Y), ((1 - margin) * X, (1 - margin) * Y))
    return Ray2.from_angle(origin, rng.uniform(0.0, 2.0 * np.pi))
