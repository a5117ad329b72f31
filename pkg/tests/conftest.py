import numpy as np
import pytest

from delaycvr import SynthConfig, generate


@pytest.fixture(scope="session")
def small_dataset():
    """Shared small exponential-delay dataset (n=2000, p=5)."""
    return generate(SynthConfig(n=2000, p=5, training_period_days=1.0, seed=7))


@pytest.fixture()
def rng():
    return np.random.default_rng(20240901)
