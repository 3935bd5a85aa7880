import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make oracles importable

from patchformer.config import ModelConfig
from patchformer.rng import Rng
from patchformer.synth import SynthEffect, synth_generate


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """Smallest valid full pipeline; cheap enough for per-test builds."""
    return ModelConfig(
        c=4, l=64, f_s=16.0, k=4, local_graphs=[[0, 1], [2], [3]],
        l_t=4, l_step=2, l_token=8, n_head=2, n_layers=1, dropout_p=0.0,
    )


@pytest.fixture
def small_loso_config():
    """6-channel config matched to the small synthetic datasets."""
    return ModelConfig(
        c=6, l=160, f_s=40.0, k=8, local_graphs=[[0, 1], [2, 3], [4, 5]],
        l_t=8, l_step=4, l_token=16, n_head=4, n_layers=1, dropout_p=0.25,
    )


@pytest.fixture(scope="session")
def high_snr_dataset():
    return synth_generate(3, 12, 6, 160, 40.0, SynthEffect(amplitude=3.0), Rng(21))
