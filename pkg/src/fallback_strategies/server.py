"""
Fallback Strategies MCP Server

A FastMCP 2.0 based MCP server exposing the exact oracle, greedy checkpoint
evaluation and training-curve export of the fallback strategies toolkit.
"""
from typing import Dict, Any, Optional
import sys

from fastmcp import FastMCP

# Import our modules
from .utils.helpers import setup_logging, load_config_from_env
from .tools.mcp_tools import (
    solve_oracle_tool, evaluate_policy_tool, export_training_curves_tool, list_runs_tool
)

# Load configuration
config = load_config_from_env()
logger = setup_logging(config["log_level"])

# Create MCP server
mcp = FastMCP(
    name=config["server_name"],
    version=config["server_version"]
)

# ==================== MCP Tools ====================

@mcp.tool()
async def solve_oracle(config_path: str, gamma: float = 0.99, scan: bool = False) -> Dict[str, Any]:
    """
    Solve the intersection task exactly for both strategies

    Runs finite-horizon backward induction twice: once unconstrained and once
    with the ego forced to cross the conflict point after target 1.

    Args:
        config_path: TOML config file with an [environment] table
        gamma: Discount factor
        scan: Also tally piecewise-constant acceleration scripts per strategy class

    Returns:
        Per-strategy optimal values, outcomes and crossing times
    """
    return await solve_oracle_tool(config_path, gamma, scan)


@mcp.tool()
async def evaluate_policy(checkpoint: str, config_path: str, episodes: int = 1, seed: int = 0,
                          perturb_target: Optional[int] = None,
                          perturb_factor: Optional[float] = None) -> Dict[str, Any]:
    """
    Evaluate a trained Q-network greedily

    Args:
        checkpoint: Checkpoint file (<run>/<agent>/step-<n>.ckpt)
        config_path: TOML config file with an [environment] table
        episodes: Number of evaluation episodes
        seed: Seed for environment randomization
        perturb_target: Target (1-based) whose collision radius is scaled
        perturb_factor: Collision radius multiplier, e.g. 1.5

    Returns:
        Returns, outcome rates, crossing classes and minimum clearance
    """
    return await evaluate_policy_tool(checkpoint, config_path, episodes, seed, perturb_target, perturb_factor)


@mcp.tool()
async def export_training_curves(run_dir: str, window: int = 100) -> Dict[str, Any]:
    """
    Export smoothed score and pseudo-reward curves of a training run

    Args:
        run_dir: Run directory
        window: Smoothing window in episodes

    Returns:
        Curve CSV file per agent
    """
    return await export_training_curves_tool(run_dir, window)


@mcp.tool()
async def list_runs() -> Dict[str, Any]:
    """
    List training runs under the output root

    Returns:
        Run directories with agent count, step budget and checkpoints
    """
    return await list_runs_tool()

# ==================== MCP Resources ====================

@mcp.resource("server://info")
async def server_info():
    """Provide server information and capabilities"""
    return {
        "uri": "server://info",
        "name": "Fallback Strategies MCP Server Info",
        "content": {
            "name": config["server_name"],
            "version": config["server_version"],
            "description": "Exact oracle and evaluation tools for learned fallback driving strategies",
            "tools": ["solve_oracle", "evaluate_policy", "export_training_curves", "list_runs"],
            "output_root": config["output_root"],
            "report_formats": ["text", "csv"]
        },
        "mimeType": "application/json"
    }


def main():
    """Main entry point for the MCP server"""
    logger.info(f"Starting {config['server_name']} v{config['server_version']}")
    logger.info(f"Configuration: Output root={config['output_root']}, Log Level={config['log_level']}")

    transport_mode = config["mcp_transport"]
    try:
        if transport_mode.lower() == "streamable-http":
            logger.info(f"MCP endpoint available at: http://{config['mcp_host']}:{config['mcp_port']}/mcp")
            mcp.run(transport="streamable-http", host=config["mcp_host"], port=config["mcp_port"])
        else:
            # Default to stdio transport mode
            mcp.run(transport="stdio")
    except KeyboardInterrupt:
        logger.info("Server shutdown requested")
    except Exception as e:
        logger.error(f"Server error: {str(e)}")
        sys.exit(1)


if __name__ == "__main__":
    main()
