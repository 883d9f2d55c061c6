import pytest

from conftest import assert_close, discounted_steps
from fallback_strategies.core.mdp import OBS_SIZE
from fallback_strategies.core.neural_q import QNetwork, save_checkpoint
from fallback_strategies.models.results import SweepResult, SweepRow
from fallback_strategies.models.schemas import EnvConfig
from fallback_strategies.tools import mcp_tools
from fallback_strategies.tools.dp_oracle import solve
from fallback_strategies.tools.evaluation import ScriptedPolicy, evaluate_policy
from fallback_strategies.tools.report_generator import TextReportGenerator
from fallback_strategies.utils.config_io import dumps_env_config


@pytest.fixture
def output_root(tmp_path, monkeypatch):
    root = tmp_path / "out"
    monkeypatch.setitem(mcp_tools.config, "output_root", str(root))
    return root


@pytest.fixture
def short_config_file(tmp_path):
    path = tmp_path / "short.toml"
    path.write_text(dumps_env_config(EnvConfig(max_steps=35)))
    return path


async def test_solve_oracle_tool(output_root, short_config_file):
    response = await mcp_tools.solve_oracle_tool(str(short_config_file), scan=True)
    assert response["success"]
    data = response["data"]
    assert_close(data["strategy_values"]["unconstrained"], discounted_steps(28))
    assert [row["strategy"] for row in data["strategies"]] == ["unconstrained", "cross-after-target-1"]
    assert "before-target-1" in data["class_members"]

    report = output_root / "reports"
    assert report.is_dir()
    text = next(report.glob("oracle_short_*.txt")).read_text()
    assert "value gap" in text and "Feasibility scan" in text


async def test_solve_oracle_tool_errors(output_root, tmp_path):
    jittered = tmp_path / "jitter.toml"
    jittered.write_text(dumps_env_config(EnvConfig(target_jitter=1.0)))
    response = await mcp_tools.solve_oracle_tool(str(jittered))
    assert not response["success"]
    assert response["error"]["type"] == "OracleConfigError"
    assert response["error"]["details"]["config_path"] == str(jittered)

    response = await mcp_tools.solve_oracle_tool(str(tmp_path / "missing.toml"))
    assert response["error"]["type"] == "FileNotFoundError"


async def test_evaluate_policy_tool(output_root, short_config_file, tmp_path, rng):
    ckpt = save_checkpoint(tmp_path / "net.ckpt", QNetwork.initialize([OBS_SIZE, 8, 6], rng), 0.99, 0)
    response = await mcp_tools.evaluate_policy_tool(
        str(ckpt), str(short_config_file), episodes=2, perturb_target=1, perturb_factor=1.5,
    )
    assert response["success"]
    assert response["data"]["episodes"] == 2
    assert response["metadata"]["perturbation"] == {"target": 1, "factor": 1.5}
    assert response["metadata"]["summary"]["policy_id"] == str(ckpt)
    assert any((output_root / "reports").glob("eval_net_*.txt"))

    bad = tmp_path / "bad.ckpt"
    bad.write_text("nope\n")
    response = await mcp_tools.evaluate_policy_tool(str(bad), str(short_config_file))
    assert response["error"]["type"] == "CheckpointError"


async def test_curves_and_runs_tools(output_root, trained_run, monkeypatch):
    monkeypatch.setitem(mcp_tools.config, "output_root", str(trained_run.run_dir.parent))

    response = await mcp_tools.export_training_curves_tool(trained_run.run_dir.name, window=5)
    assert response["success"]
    assert sorted(response["data"]["curves"]) == ["0", "1"]

    response = await mcp_tools.list_runs_tool()
    assert response["data"]["total"] == 1
    run = response["data"]["runs"][0]
    assert run["agents"] == 2 and run["alpha"] == 1.0
    assert "1/step-100.ckpt" in run["checkpoints"]

    response = await mcp_tools.export_training_curves_tool("no-such-run")
    assert response["error"]["type"] == "FileNotFoundError"


async def test_list_runs_without_output_root(output_root):
    response = await mcp_tools.list_runs_tool()
    assert response["success"]
    assert response["data"]["total"] == 0


def test_report_rendering(env_cfg, short_env_cfg):
    generator = TextReportGenerator()

    report = evaluate_policy(ScriptedPolicy([5] * 150, "fast"), env_cfg)
    text = generator.render_eval(report)
    assert text.startswith("Evaluation: fast")
    assert "100.0%" in text
    assert "crossing before-target-1: 1" in text

    single = generator.render_oracle([solve(short_env_cfg)])
    assert "[unconstrained]" in single
    assert "value gap" not in single

    sweep = SweepResult(rows=[
        SweepRow(alpha=0.0, mean_metric_episodes=0.2, mean_metric_pooled=0.1, eval_return=-3.0,
                 eval_collision_rate=0.0),
        SweepRow(alpha=1.0, error="diverged"),
    ])
    text = generator.render_sweep(sweep)
    assert "FAILED: diverged" in text
    assert "n/a" in text


async def test_save_report_sanitizes_name(tmp_path):
    path = await TextReportGenerator().save_report("hello\n", tmp_path / "r", "eval a/b")
    assert path.parent == tmp_path / "r"
    assert path.name.startswith("eval_a_b_")
    assert path.read_text() == "hello\n"
