import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from beamforge.dataset import synthesize_scene

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")


def random_hpd(rng, m, n_snap=None):
    """Well-conditioned Hermitian positive-definite matrix from complex snapshots."""
    n_snap = n_snap or 4 * m
    a = rng.standard_normal((m, n_snap)) + 1j * rng.standard_normal((m, n_snap))
    return a @ a.conj().T / n_snap + 0.1 * np.eye(m)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def static_scene():
    """Static anechoic 5 dB scene, 64 STFT frames long."""
    return synthesize_scene(0, "anechoic", "test", 0, 15360, moving=False, snr_db=5.0)
