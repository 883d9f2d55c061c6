"""
Full-length training checked against the exact oracle. Hours of CPU time;
enable with FALLBACK_RUN_ACCEPTANCE=1.
"""

import os
from pathlib import Path

import pytest

from fallback_strategies.core.divergence import metric
from fallback_strategies.tools.dp_oracle import solve_strategies
from fallback_strategies.tools.evaluation import (
    GreedyQPolicy, alpha_sweep, certify_fallback, evaluate_policy, final_metrics, perturbation_compare,
    policy_distribution, qlandscape,
)
from fallback_strategies.tools.trainer import run_training
from fallback_strategies.utils.config_io import load_train_config

pytestmark = [
    pytest.mark.acceptance,
    pytest.mark.skipif(os.getenv("FALLBACK_RUN_ACCEPTANCE") != "1", reason="set FALLBACK_RUN_ACCEPTANCE=1"),
]

DESK_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "desk.toml"
EVAL_EPISODES = 100


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    cfg = load_train_config(DESK_CONFIG)
    return cfg, run_training(cfg, tmp_path_factory.mktemp("desk"))


@pytest.fixture(scope="module")
def oracle(desk_run):
    cfg, _ = desk_run
    return solve_strategies(cfg.environment, cfg.learner.gamma)


def greedy(artifacts, agent_id, name, gamma):
    return GreedyQPolicy(artifacts.agents[agent_id].learner.online, name, gamma)


def test_optimal_agent_reaches_oracle_value(desk_run, oracle):
    cfg, artifacts = desk_run
    gamma = cfg.learner.gamma
    report = evaluate_policy(greedy(artifacts, 0, "optimal", gamma), cfg.environment, EVAL_EPISODES, gamma=gamma)
    assert report.collision_rate == 0.0
    assert report.mean_return >= oracle.unconstrained.value - 0.5
    assert report.mean_discounted_return >= oracle.unconstrained.value - 0.5


def test_pseudo_agent_is_a_fallback(desk_run, oracle):
    cfg, artifacts = desk_run
    env, gamma = cfg.environment, cfg.learner.gamma
    optimal = greedy(artifacts, 0, "optimal", gamma)
    fallback = greedy(artifacts, 1, "fallback", gamma)
    opt_report = evaluate_policy(optimal, env, EVAL_EPISODES, gamma=gamma)
    sub_report = evaluate_policy(fallback, env, EVAL_EPISODES, gamma=gamma)

    assert sub_report.collision_rate == 0.0
    assert sub_report.mean_discounted_return >= oracle.constrained.value - 0.5

    per_episode, _ = final_metrics(artifacts)
    assert per_episode >= 0.8

    m = metric(
        policy_distribution(fallback, env, shaping=cfg.shaping).histogram,
        policy_distribution(optimal, env, shaping=cfg.shaping).histogram,
    )
    cert = certify_fallback(opt_report, sub_report, m, cfg.shaping, epsilon=1.5)
    assert cert.valid and cert.suboptimal


@pytest.mark.xfail(
    reason="the oracle value is discounted; a 42-step goal run returns -4.2 undiscounted against -3.44 discounted",
    strict=False,
)
def test_pseudo_agent_base_return_against_constrained_oracle(desk_run, oracle):
    cfg, artifacts = desk_run
    gamma = cfg.learner.gamma
    report = evaluate_policy(greedy(artifacts, 1, "fallback", gamma), cfg.environment, EVAL_EPISODES, gamma=gamma)
    assert report.mean_return >= oracle.constrained.value - 0.5


def test_optimal_landscape_sits_at_higher_speeds(desk_run):
    cfg, artifacts = desk_run
    optimal = qlandscape(artifacts.agents[0].learner.online, cfg.environment, n_traj=10)
    fallback = qlandscape(artifacts.agents[1].learner.online, cfg.environment, n_traj=10)
    assert optimal.centroid_speed() > fallback.centroid_speed()


def test_fallback_survives_larger_radius(desk_run):
    cfg, artifacts = desk_run
    comparison = perturbation_compare(
        artifacts.agents[0].learner.online, artifacts.agents[1].learner.online,
        cfg.environment, factor=1.5, target=1, episodes=EVAL_EPISODES,
    )
    assert comparison.optimal_return_delta <= -2.0
    assert abs(comparison.fallback_return_delta) < 0.2


def test_alpha_threshold(tmp_path_factory):
    cfg = load_train_config(DESK_CONFIG)
    result = alpha_sweep(cfg, [0.0, 0.25, 0.5, 0.75, 1.0, 1.5], sweep_dir=tmp_path_factory.mktemp("sweep"))
    by_alpha = {row.alpha: row.mean_metric_episodes for row in result.rows}
    assert by_alpha[0.0] < 0.4
    assert by_alpha[1.0] >= 0.8
    assert result.max_adjacent_jump("episodes") > 0.4
