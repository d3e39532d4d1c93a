"""
Shared pytest fixtures.
"""
import numpy as np
import pytest

from src.data.datasets import load_dataset
from src.schemas.configs import AttackConfig, DataConfig, LossConfig, TrainConfig
from tests.doubles import LinearModel


@pytest.fixture
def rng():
    """Seeded generator, fresh per test."""
    return np.random.default_rng(1234)


@pytest.fixture
def linear_model(rng):
    """Three-class linear model on 2 x 4 x 4 inputs."""
    return LinearModel(rng.normal(size=(32, 3)), rng.normal(size=3) * 0.1)


@pytest.fixture
def small_data_config():
    """Synthetic 2-class data on 8 x 8 images."""
    return DataConfig(dataset="synth", n_train=48, n_test=24, class_count=2, side=8, channels=3, seed=3)


@pytest.fixture
def small_datasets(small_data_config):
    """(train, eval) pair for fast training tests."""
    return load_dataset(small_data_config)


@pytest.fixture
def small_train_config():
    """Two short epochs with a two-step attack."""
    attack = AttackConfig(steps=2, step_size=2.0 / 255.0, seed=5)
    return TrainConfig(
        epochs=2,
        batch_size=16,
        seed=5,
        k=2,
        attack=attack,
        eval_attack=attack.model_copy(update={"steps": 3}),
        loss=LossConfig(),
        probe_size=16,
    )
