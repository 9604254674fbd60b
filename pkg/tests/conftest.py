import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from resonant_transport.spectral import SpaceTimeField, TorusField

settings.register_profile(
    "default", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_torus_field(rng, K, decay=0.3):
    k = np.arange(-K, K + 1)
    c = (rng.normal(size=2 * K + 1) + 1j * rng.normal(size=2 * K + 1)) * np.exp(-decay * np.abs(k))
    c = 0.5 * (c + np.conj(c[::-1]))
    return TorusField(c, is_real=True)


def random_spacetime_field(rng, Kx, Kt, decay=0.3):
    k = np.arange(-Kx, Kx + 1)[:, None]
    l = np.arange(-Kt, Kt + 1)[None, :]
    shape = (2 * Kx + 1, 2 * Kt + 1)
    c = (rng.normal(size=shape) + 1j * rng.normal(size=shape)) * np.exp(-decay * (np.abs(k) + np.abs(l)))
    c = 0.5 * (c + np.conj(c[::-1, ::-1]))
    return SpaceTimeField(c, is_real=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
