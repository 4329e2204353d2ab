"""Общие фикстуры тестов."""

import numpy as np
import pytest

from eqf.vins_model import VinsState, random_state
from experiments.simulator import TrajectorySpec, WorldSettings
from utils.config import ExperimentConfig


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def state(rng: np.random.Generator) -> VinsState:
    """Случайная оценка с тремя ориентирами перед камерой."""
    return random_state(rng, m=3)


@pytest.fixture
def state_pair(rng: np.random.Generator):
    return random_state(rng, m=3), random_state(rng, m=3)


@pytest.fixture
def small_config(tmp_path) -> ExperimentConfig:
    """Короткий прогон: 2 с полета, 100 Гц ИНС, камера 10 Гц."""
    return ExperimentConfig(
        output_dir=str(tmp_path),
        trajectory=TrajectorySpec(duration=2.0),
        world=WorldSettings(imu_rate=100, camera_rate=10, max_landmarks=12),
    )
