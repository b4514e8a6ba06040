import numpy as np
import pytest
import torch

# Single-core box: keep torch from oversubscribing during tests.
torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(42)
