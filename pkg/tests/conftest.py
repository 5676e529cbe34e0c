import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from relaysoft.plant import AudioModel, SimConfig
from relaysoft.relay_core import default_relay

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def relay():
    return default_relay()


@pytest.fixture
def quiet_cfg():
    """Simulation config with a silent microphone (no noise)."""
    return SimConfig(audio=AudioModel(noise_sigma=0.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
