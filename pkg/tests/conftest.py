import math

import numpy as np
import pytest

from fallback_strategies.models.schemas import (
    EnvConfig, LearnerConfig, RunConfig, ShapingParams, TrainConfig,
)

# accelerations of the action set: -4, -2, -1, 0, +1, +2
BRAKE_HARD, COAST, FULL_THROTTLE = 0, 3, 5


def discounted_steps(n: int, gamma: float = 0.99) -> float:
    """Discounted return of n collision-free steps at -0.1 each"""
    return -0.1 * (1 - gamma ** n) / (1 - gamma)


@pytest.fixture
def env_cfg() -> EnvConfig:
    return EnvConfig()


@pytest.fixture
def short_env_cfg() -> EnvConfig:
    """Default scene with a horizon just long enough for the fast crossing"""
    return EnvConfig(max_steps=35)


@pytest.fixture
def empty_env_cfg() -> EnvConfig:
    return EnvConfig(target_offsets=(), radius_multipliers=())


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def small_learner() -> LearnerConfig:
    return LearnerConfig(
        hidden_sizes=(16,),
        batch_size=8,
        warmup_transitions=16,
        target_sync_period=20,
        epsilon_decay_steps=200,
        replay_capacity=2000,
        feature_episodes=100,
    )


@pytest.fixture
def tiny_train_cfg(small_learner) -> TrainConfig:
    return TrainConfig(
        learner=small_learner,
        shaping=ShapingParams(alpha=1.0, delta=0.1),
        run=RunConfig(pseudo_agents=1, total_steps=200, base_seed=7, log_every=5, checkpoint_every=100),
    )


@pytest.fixture
def trained_run(tiny_train_cfg, tmp_path):
    from fallback_strategies.tools.trainer import run_training
    return run_training(tiny_train_cfg, tmp_path / "run")


def assert_close(a: float, b: float, tol: float = 1e-9) -> None:
    assert math.isclose(a, b, rel_tol=0.0, abs_tol=tol), f"{a} != {b} (tol {tol})"
