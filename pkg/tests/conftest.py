"""Shared fixtures: tiny datasets and model sizes that train in seconds."""

import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.data.preprocessing import normalize_dataset  # noqa: E402
from src.data.synthetic import SyntheticConfig, generate_synthetic  # noqa: E402
from src.models.anchors import AnchorConfig  # noqa: E402
from src.models.networks import ModelConfig  # noqa: E402
from src.models.ode import SolverConfig  # noqa: E402
from src.models.train import TrainConfig  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_synthetic_config():
    return SyntheticConfig(pattern_count=2, samples_per_pattern=6, t_obs=4, t_pred=5, joints=3,
                           frame_rate=10.0, jitter_scale=0.05, seed=3)


@pytest.fixture
def tiny_dataset(tiny_synthetic_config):
    (train,) = normalize_dataset(generate_synthetic(tiny_synthetic_config))
    return train


@pytest.fixture
def tiny_model_config():
    return ModelConfig(d_model=8, latent_rows=2, latent_dim=4, codebook_size=8, dynamics_hidden=8,
                       beta=0.25, refine_hidden=8, init_log_var=-2.0)


@pytest.fixture
def tiny_solver():
    return SolverConfig(method="euler", step_size=0.1, adaptive=False)


@pytest.fixture
def tiny_anchor_config():
    return AnchorConfig(count=2, restarts=2, max_iters=20)


@pytest.fixture
def tiny_train_config():
    return TrainConfig(batch_size=6, epochs=3, lr=1e-2, decay_every=10, pseudo_threshold=0.1, progress=False)
