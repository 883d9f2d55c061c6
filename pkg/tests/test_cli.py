import argparse

import pandas as pd
import pytest

from fallback_strategies.cli import EXIT_CONFIG_ERROR, main, parse_perturb
from fallback_strategies.core.mdp import OBS_SIZE
from fallback_strategies.core.neural_q import QNetwork, save_checkpoint
from fallback_strategies.models.schemas import EnvConfig
from fallback_strategies.utils.config_io import dumps_env_config, save_train_config


@pytest.fixture
def short_config(tmp_path):
    path = tmp_path / "short.toml"
    path.write_text(dumps_env_config(EnvConfig(max_steps=35)))
    return path


def test_parse_perturb():
    assert parse_perturb("target=1,factor=1.5") == (1, 1.5)
    assert parse_perturb("factor=2, target=3") == (3, 2.0)
    assert parse_perturb("1.25") == (1, 1.25)
    for bad in ("target=1", "target=1,factor=x", "radius=2,factor=1"):
        with pytest.raises(argparse.ArgumentTypeError):
            parse_perturb(bad)


def test_oracle_command(short_config, tmp_path, capsys):
    out = tmp_path / "reports"
    assert main(["oracle", str(short_config), "--constraint", "none", "--out", str(out)]) == 0
    table = pd.read_csv(out / "oracle_short.csv")
    assert list(table["strategy"]) == ["unconstrained"]
    assert table["steps"].iloc[0] == 28
    assert "[unconstrained]" in capsys.readouterr().out


def test_invalid_config_exit_code(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[environment]\ndt = -1.0\n")
    assert main(["oracle", str(path), "--out", str(tmp_path)]) == EXIT_CONFIG_ERROR
    assert main(["oracle", str(tmp_path / "missing.toml")]) == EXIT_CONFIG_ERROR

    jittered = tmp_path / "jitter.toml"
    jittered.write_text(dumps_env_config(EnvConfig(target_jitter=0.5)))
    assert main(["oracle", str(jittered), "--out", str(tmp_path)]) == EXIT_CONFIG_ERROR


def test_bad_perturb_is_a_usage_error(short_config):
    with pytest.raises(SystemExit) as exc:
        main(["eval", "net.ckpt", str(short_config), "--perturb", "target=1"])
    assert exc.value.code == 2


def test_train_eval_curves_compare(tiny_train_cfg, tmp_path, capsys):
    config = save_train_config(tiny_train_cfg, tmp_path / "tiny.toml")
    run_dir = tmp_path / "run"
    reports = tmp_path / "reports"

    assert main(["--log-level", "WARNING", "train", str(config), "--run-dir", str(run_dir)]) == 0
    final = sorted((run_dir / "1").glob("*.ckpt"))[-1]
    optimal = sorted((run_dir / "0").glob("*.ckpt"))[-1]

    assert main(["eval", str(final), str(config), "--perturb", "target=1,factor=1.5",
                 "--out", str(reports)]) == 0
    assert main(["curves", str(run_dir), "--window", "3"]) == 0
    assert (run_dir / "0" / "curves.csv").exists()
    assert main(["compare", str(optimal), str(final), str(config), "--out", str(reports)]) == 0
    assert main(["qmap", str(optimal), str(final), str(config), "--trajectories", "2",
                 "--out", str(reports)]) == 0
    output = capsys.readouterr().out
    assert "fallback certificate" in output
    assert "speed centroid" in output


def test_eval_rejects_mismatched_checkpoint(tmp_path, short_config, rng):
    ckpt = save_checkpoint(tmp_path / "wide.ckpt", QNetwork.initialize([OBS_SIZE + 2, 4, 6], rng), 0.99, 0)
    assert main(["eval", str(ckpt), str(short_config), "--out", str(tmp_path)]) == EXIT_CONFIG_ERROR


def test_zero_network_brakes_to_a_timeout(short_config, tmp_path, capsys):
    # all Q-values tie, so the greedy action is the first one: hard braking
    ckpt = save_checkpoint(tmp_path / "zero.ckpt", QNetwork.zeros([OBS_SIZE, 4, 6]), 0.99, 0)
    assert main(["--seed", "3", "eval", str(ckpt), str(short_config), "--episodes", "2",
                 "--out", str(tmp_path)]) == 0
    assert "0.0% / 0.0% / 100.0%" in capsys.readouterr().out
