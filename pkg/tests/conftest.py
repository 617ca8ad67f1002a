import numpy as np
import pytest

from mdiqkd.model import analytic_gain_table
from mdiqkd.params import paper_200km


@pytest.fixture(scope="session")
def preset():
    return paper_200km()


@pytest.fixture(scope="session")
def preset_200km_table(preset):
    return analytic_gain_table(preset)


@pytest.fixture(scope="session")
def preset_50km(preset):
    return preset.with_total_loss_db(9.9)


@pytest.fixture(scope="session")
def preset_50km_table(preset_50km):
    return analytic_gain_table(preset_50km)


def random_valid_params(rng: np.random.Generator, max_loss_db=50.0):
    """Draw a random valid SystemParams for property sweeps."""
    from dataclasses import replace

    from mdiqkd.params import ChannelParams, DetectorParams, SourceParams, SystemParams

    mu = rng.uniform(0.2, 0.7)
    nu = rng.uniform(0.01, mu / 3.0)
    p_s = rng.uniform(0.15, 0.5)
    p_d = rng.uniform(0.15, min(0.6, 0.95 - p_s))
    src = SourceParams(
        intensity_signal=mu, intensity_decoy=nu,
        prob_signal=p_s, prob_decoy=p_d, prob_vacuum=1.0 - p_s - p_d,
        basis_prob_z=rng.uniform(0.2, 0.8),
    )
    total = rng.uniform(0.0, max_loss_db)
    split = rng.uniform(0.3, 0.7)
    channel = ChannelParams(
        loss_db_alice=total * split,
        loss_db_bob=total * (1.0 - split),
        insertion_loss_db=rng.uniform(0.0, 2.0),
        misalignment_x=rng.uniform(0.0, 0.1),
        extinction_ratio_db=rng.uniform(20.0, 60.0),
    )
    detectors = DetectorParams(
        efficiency_d0=rng.uniform(0.2, 0.9),
        efficiency_d1=rng.uniform(0.2, 0.9),
        dark_rate_hz=10.0 ** rng.uniform(0.0, 4.0),
        window_ns=rng.uniform(0.5, 3.0),
    )
    params = SystemParams(source_alice=src, source_bob=replace(src), channel=channel,
                          detectors=detectors)
    return params
