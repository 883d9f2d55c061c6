"""
MCP Tools 实现模块
包含所有 MCP 工具的具体实现逻辑
"""

import asyncio
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional

from pydantic import ValidationError

from ..core.intersection_env import perturb
from ..core.neural_q import CheckpointError
from ..utils.config_io import load_env_config, load_train_config
from ..utils.helpers import (
    create_error_response, create_success_response, load_config_from_env, resolve_output_path,
    setup_logging,
)
from .dp_oracle import OracleConfigError, feasibility_scan, oracle_frame, solve_strategies
from .evaluation import evaluate, export_curves
from .report_generator import TextReportGenerator

# Load configuration
config = load_config_from_env()
logger = setup_logging(config["log_level"])

report_generator = TextReportGenerator()

# 输入错误与运行错误分开报告
INPUT_ERRORS = (ValidationError, ValueError, FileNotFoundError, CheckpointError)


def _reports_dir() -> Path:
    return resolve_output_path("reports", config["output_root"])


def _error(kind: str, e: Exception) -> Dict[str, Any]:
    error_type = type(e).__name__ if isinstance(e, INPUT_ERRORS) else kind
    return create_error_response(error_type, f"{kind}: {e}")


async def solve_oracle_tool(config_path: str, gamma: float = 0.99, scan: bool = False) -> Dict[str, Any]:
    """
    Solve both strategies of an environment config exactly

    Args:
        config_path: TOML file with an [environment] table
        gamma: Discount factor
        scan: Also run the piecewise-constant feasibility scan

    Returns:
        Strategy values, crossing times and the path of the saved text report
    """
    try:
        logger.info(f"Solving oracle for {config_path} (gamma={gamma})")
        cfg = load_env_config(config_path)
        report = await asyncio.to_thread(solve_strategies, cfg, gamma)
        feasibility = await asyncio.to_thread(feasibility_scan, cfg, 5, gamma) if scan else None

        text = report_generator.render_oracle(report, feasibility)
        report_path = await report_generator.save_report(text, _reports_dir(), f"oracle_{Path(config_path).stem}")

        data = {
            "strategy_values": report.strategy_values,
            "strategies": oracle_frame(report).to_dict(orient="records"),
            "report_path": str(report_path),
        }
        if feasibility is not None:
            data["class_members"] = feasibility.class_members

        return create_success_response(data, {
            "generation_timestamp": datetime.now().isoformat(),
            "config_path": config_path,
        })

    except OracleConfigError as e:
        logger.error(f"Oracle rejected config {config_path}: {e}")
        return create_error_response("OracleConfigError", str(e), {"config_path": config_path})
    except Exception as e:
        logger.error(f"Oracle solve failed: {str(e)}")
        return _error("OracleError", e)


async def evaluate_policy_tool(checkpoint: str, config_path: str, episodes: int = 1, seed: int = 0,
                               perturb_target: Optional[int] = None,
                               perturb_factor: Optional[float] = None) -> Dict[str, Any]:
    """
    Greedy evaluation of a saved Q-network checkpoint

    Args:
        checkpoint: Checkpoint file written during training
        config_path: TOML file with an [environment] table
        episodes: Number of greedy episodes
        seed: Seed of the environment randomization
        perturb_target: 1-based target whose collision radius is scaled
        perturb_factor: Radius multiplier for ``perturb_target``

    Returns:
        EvalReport fields and the path of the saved text report
    """
    try:
        cfg = load_env_config(config_path)
        if perturb_factor is not None:
            cfg = perturb(cfg, perturb_target or 1, perturb_factor)
        logger.info(f"Evaluating {checkpoint} for {episodes} episodes")

        report = await asyncio.to_thread(evaluate, checkpoint, cfg, episodes, seed)
        text = report_generator.render_eval(report)
        report_path = await report_generator.save_report(text, _reports_dir(), f"eval_{Path(checkpoint).stem}")

        return create_success_response(
            {**report.model_dump(), "report_path": str(report_path)},
            {
                "perturbation": None if perturb_factor is None else {
                    "target": perturb_target or 1, "factor": perturb_factor,
                },
                "summary": report_generator.summary(report),
            },
        )

    except Exception as e:
        logger.error(f"Evaluation failed: {str(e)}")
        return _error("EvaluationError", e)


async def export_training_curves_tool(run_dir: str, window: int = 100) -> Dict[str, Any]:
    """
    Write smoothed per-agent training curves of a run

    Args:
        run_dir: Run directory (relative paths resolve under the output root)
        window: Smoothing window in episodes

    Returns:
        Curve file per agent id
    """
    try:
        path = resolve_output_path(run_dir, config["output_root"])
        files = await asyncio.to_thread(export_curves, path, window)
        return create_success_response({
            "run_dir": str(path),
            "curves": {str(agent_id): str(p) for agent_id, p in files.items()},
        })

    except Exception as e:
        logger.error(f"Curve export failed: {str(e)}")
        return _error("ExportError", e)


async def list_runs_tool() -> Dict[str, Any]:
    """
    List training runs under the output root

    Returns:
        One entry per run directory holding a config.toml
    """
    try:
        root = Path(config["output_root"])
        runs = []
        if root.exists():
            for config_file in sorted(root.glob("**/config.toml")):
                run_dir = config_file.parent
                entry: Dict[str, Any] = {
                    "run_dir": str(run_dir),
                    "modified": datetime.fromtimestamp(config_file.stat().st_mtime).isoformat(),
                }
                try:
                    cfg = load_train_config(config_file)
                    entry["agents"] = cfg.n_agents
                    entry["total_steps"] = cfg.run.total_steps
                    entry["alpha"] = cfg.shaping.alpha
                except Exception as e:
                    entry["config_error"] = str(e)
                entry["checkpoints"] = sorted(str(p.relative_to(run_dir)) for p in run_dir.glob("*/*.ckpt"))
                runs.append(entry)

        # 按修改时间降序排序(最新的在前面)
        runs.sort(key=lambda x: x["modified"], reverse=True)
        return create_success_response({"total": len(runs), "runs": runs, "output_root": str(root)})

    except Exception as e:
        logger.error(f"Failed to list runs: {str(e)}")
        return create_error_response("ListError", f"Failed to list runs: {str(e)}")
