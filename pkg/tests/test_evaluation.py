import numpy as np
import pandas as pd
import pytest

from conftest import BRAKE_HARD, FULL_THROTTLE, assert_close, discounted_steps
from fallback_strategies.core.divergence import metric
from fallback_strategies.core.intersection_env import perturb
from fallback_strategies.core.mdp import OBS_SIZE
from fallback_strategies.core.neural_q import CheckpointError, QNetwork, save_checkpoint
from fallback_strategies.models.schemas import ShapingParams
from fallback_strategies.tools.dp_oracle import BEFORE_TARGET_1, BETWEEN_1_AND_2
from fallback_strategies.tools.evaluation import (
    GreedyQPolicy, ScriptedPolicy, alpha_sweep, certify_fallback, evaluate, evaluate_policy,
    export_curves, final_metrics, perturbation_compare, policy_distribution, qlandscape,
    read_episode_log, run_episode,
)

FAST = ScriptedPolicy([FULL_THROTTLE] * 150, "fast")
SLOW = ScriptedPolicy([BRAKE_HARD] * 15, "slow")


@pytest.fixture
def untrained(rng) -> QNetwork:
    return QNetwork.initialize([OBS_SIZE, 16, 6], rng)


def test_scripted_fast_crossing_matches_oracle_value(env_cfg):
    report = evaluate_policy(FAST, env_cfg, episodes=2)
    assert report.goal_rate == 1.0
    assert report.mean_length == 28
    assert_close(report.mean_discounted_return, discounted_steps(28))
    assert report.crossing_classes == {BEFORE_TARGET_1: 2}
    assert report.min_clearance == pytest.approx(0.4786, abs=5e-3)


def test_slow_script_crosses_between_targets(env_cfg):
    report = evaluate_policy(SLOW, env_cfg)
    assert report.outcomes == ["goal"]
    assert report.mean_length == 42
    assert report.crossing_classes == {BETWEEN_1_AND_2: 1}


def test_collision_rate_grows_with_radius(env_cfg):
    rates = [
        evaluate_policy(FAST, perturb(env_cfg, 1, factor)).collision_rate
        for factor in (1.0, 1.1, 1.2, 1.5, 2.0)
    ]
    assert rates == sorted(rates)
    assert rates[0] == 0.0 and rates[-1] == 1.0


def test_untrained_network_smoke(env_cfg, untrained, tmp_path):
    path = save_checkpoint(tmp_path / "net.ckpt", untrained, 0.99, 0)
    report = evaluate(path, env_cfg, episodes=3, seed=5)
    assert report.episodes == 3
    assert report.policy_id == str(path)
    assert report.collision_rate + report.goal_rate + report.timeout_rate == pytest.approx(1.0)
    assert report.min_return <= report.mean_return <= report.max_return

    record = run_episode(GreedyQPolicy(untrained), env_cfg)
    assert len(record.q_max) == len(record.rewards)


def test_greedy_policy_checks_network_shape(rng):
    with pytest.raises(CheckpointError):
        GreedyQPolicy(QNetwork.initialize([OBS_SIZE + 1, 4, 6], rng))
    with pytest.raises(CheckpointError):
        GreedyQPolicy(QNetwork.initialize([OBS_SIZE, 4, 5], rng))


def test_evaluate_rejects_zero_episodes(env_cfg):
    with pytest.raises(ValueError):
        evaluate_policy(FAST, env_cfg, episodes=0)


def test_reference_metrics_in_report(env_cfg):
    refs = {
        "fast": policy_distribution(FAST, env_cfg),
        "slow": policy_distribution(SLOW, env_cfg),
    }
    report = evaluate_policy(FAST, env_cfg, references=refs)
    assert report.reference_metrics["fast"] == 0.0
    assert report.reference_metrics["slow"] > 1.9


def test_neutral_perturbation_changes_nothing(env_cfg, untrained, rng):
    other = QNetwork.initialize([OBS_SIZE, 16, 6], rng)
    comparison = perturbation_compare(untrained, other, env_cfg, factor=1.0, episodes=2, seed=3)
    assert comparison.deltas() == {
        "optimal_return_delta": 0.0,
        "fallback_return_delta": 0.0,
        "optimal_collision_delta": 0.0,
        "fallback_collision_delta": 0.0,
    }
    assert comparison.optimal_base.policy_id == "optimal"


def test_qlandscape_is_deterministic(env_cfg, untrained, rng):
    other = QNetwork.initialize([OBS_SIZE, 16, 6], rng)
    a = qlandscape([untrained, other], env_cfg, n_traj=4, seed=2)
    b = qlandscape([untrained, other], env_cfg, n_traj=4, seed=2)
    np.testing.assert_array_equal(a.mean_q, b.mean_q)
    np.testing.assert_array_equal(a.visits, b.visits)

    assert a.mean_q.shape == (env_cfg.max_steps, 30)
    assert len(a.outcomes) == 4
    assert np.isnan(a.mean_q[~a.present]).all()
    assert np.isfinite(a.mean_q[a.present]).all()
    # every trajectory visits step 0 at the initial speed
    assert a.visits[0, 20] == 4
    assert 0 <= a.centroid_speed() <= 30

    frame = a.to_frame()
    assert frame["visits"].sum() == a.visits.sum()
    with pytest.raises(ValueError):
        qlandscape(untrained, env_cfg, n_traj=0)


def test_certify_fallback(env_cfg):
    optimal = evaluate_policy(FAST, env_cfg)
    fallback = evaluate_policy(SLOW, env_cfg)
    m = metric(policy_distribution(FAST, env_cfg).histogram, policy_distribution(SLOW, env_cfg).histogram)
    gap = discounted_steps(28) - discounted_steps(42)

    cert = certify_fallback(optimal, fallback, m, ShapingParams(), epsilon=1.0)
    assert cert.valid and cert.suboptimal and cert.sufficiently_different
    assert_close(cert.value_gap, gap)

    strict = certify_fallback(optimal, fallback, m, ShapingParams(), epsilon=0.5)
    assert not strict.suboptimal
    assert not strict.adjusted_suboptimal
    relaxed = certify_fallback(optimal, fallback, m, ShapingParams(), epsilon=0.5, pseudo_terms=[0.6])
    assert relaxed.adjusted_suboptimal

    same = certify_fallback(optimal, optimal, 0.0, ShapingParams(), epsilon=0.1)
    assert not same.sufficiently_different


def test_final_metrics(trained_run):
    per_episode, pooled = final_metrics(trained_run)
    assert 0 <= per_episode <= 2
    assert 0 <= pooled <= 2


def test_export_curves(trained_run):
    paths = export_curves(trained_run.run_dir, window=3)
    assert sorted(paths) == [0, 1]

    log = read_episode_log(trained_run.episode_logs[1])
    curves = pd.read_csv(paths[1], float_precision="round_trip")
    assert len(curves) == len(log)
    for column in ("global_step", "base_return_smoothed", "metric_ref0", "r_sub_ref0", "epsilon"):
        assert column in curves.columns
    assert curves["base_return_smoothed"].iloc[0] == log["base_return"].iloc[0]
    assert curves["base_return_smoothed"].iloc[2] == pytest.approx(log["base_return"].iloc[:3].mean())
    assert "comparison_r_sub" in pd.read_csv(paths[0]).columns


def test_export_curves_missing_logs(trained_run, tmp_path):
    trained_run.episode_logs[1].unlink()
    assert sorted(export_curves(trained_run.run_dir)) == [0]

    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(FileNotFoundError):
        export_curves(empty)


def test_alpha_sweep(tiny_train_cfg, tmp_path):
    result = alpha_sweep(tiny_train_cfg, [1.0, 0.0, 1.0], eval_episodes=1, sweep_dir=tmp_path)
    assert result.alphas == [0.0, 1.0]
    assert all(row.error is None for row in result.rows)
    assert all(0 <= row.mean_metric_episodes <= 2 for row in result.rows)
    assert (tmp_path / "alpha-0" / "episodes.csv").exists()

    table = pd.read_csv(tmp_path / "sweep.csv")
    assert list(table["alpha"]) == [0.0, 1.0]

    with pytest.raises(ValueError):
        alpha_sweep(tiny_train_cfg, [], sweep_dir=tmp_path)
