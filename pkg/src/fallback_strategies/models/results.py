"""
Pydantic result models: episode logs, evaluation reports, sweeps and oracle output
"""

import math
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field, model_validator

Constraint = Literal["none", "cross-after-target-1"]
CrossingClass = Literal["before-target-1", "between-1-and-2", "after-target-2", "no-crossing"]


class EpisodeLog(BaseModel):
    """One training episode of one agent"""
    agent_id: int = Field(..., ge=0)
    episode: int = Field(..., ge=0, description="Episode index of this agent")
    global_step: int = Field(..., ge=0, description="Agent env steps after the episode")
    base_return: float = Field(..., description="Undiscounted return of the raw step rewards")
    shaped_return: float = Field(..., description="base_return + pseudo_total")
    pseudo_total: float = Field(0.0, description="Sum of pseudo-reward terms added to the final transition")
    length: int = Field(..., ge=1)
    outcome: str = Field(..., description="goal, collision or timeout")
    epsilon: float = Field(..., ge=0, le=1)
    reference_metrics: Dict[int, Optional[float]] = Field(
        default_factory=dict, description="Metric vs each reference (None when skipped)"
    )
    reference_rewards: Dict[int, float] = Field(
        default_factory=dict, description="Pseudo-reward term per reference (0 when skipped)"
    )
    comparison_reward: Optional[float] = Field(
        None, description="Comparison-only pseudo-reward of agent 0 against its own pool"
    )

    def to_row(self) -> Dict[str, object]:
        """Flatten into a CSV row"""
        row: Dict[str, object] = {
            "agent_id": self.agent_id,
            "episode": self.episode,
            "global_step": self.global_step,
            "base_return": self.base_return,
            "shaped_return": self.shaped_return,
            "pseudo_total": self.pseudo_total,
            "length": self.length,
            "outcome": self.outcome,
            "epsilon": self.epsilon,
        }
        for ref_id in sorted(self.reference_metrics):
            metric = self.reference_metrics[ref_id]
            row[f"metric_ref{ref_id}"] = math.nan if metric is None else metric
            row[f"r_sub_ref{ref_id}"] = self.reference_rewards.get(ref_id, 0.0)
        if self.agent_id == 0:
            row["comparison_r_sub"] = math.nan if self.comparison_reward is None else self.comparison_reward
        return row


class EvalReport(BaseModel):
    """Greedy evaluation of one policy on one environment config"""
    policy_id: str
    episodes: int = Field(..., gt=0)
    mean_return: float
    min_return: float
    max_return: float
    mean_discounted_return: float
    collision_rate: float = Field(..., ge=0, le=1)
    goal_rate: float = Field(..., ge=0, le=1)
    timeout_rate: float = Field(..., ge=0, le=1)
    mean_length: float
    min_clearance: float = Field(..., description="Smallest distance minus effective radius over all steps")
    reference_metrics: Dict[str, float] = Field(
        default_factory=dict, description="Mean metric of evaluated episodes vs each named reference"
    )
    crossing_classes: Dict[str, int] = Field(default_factory=dict)
    outcomes: List[str] = Field(default_factory=list)


class PerturbationComparison(BaseModel):
    """Paired evaluations of an optimal and a fallback policy on base and perturbed configs"""
    target: int
    factor: float
    optimal_base: EvalReport
    optimal_perturbed: EvalReport
    fallback_base: EvalReport
    fallback_perturbed: EvalReport

    @property
    def optimal_return_delta(self) -> float:
        return self.optimal_perturbed.mean_return - self.optimal_base.mean_return

    @property
    def fallback_return_delta(self) -> float:
        return self.fallback_perturbed.mean_return - self.fallback_base.mean_return

    @property
    def optimal_collision_delta(self) -> float:
        return self.optimal_perturbed.collision_rate - self.optimal_base.collision_rate

    @property
    def fallback_collision_delta(self) -> float:
        return self.fallback_perturbed.collision_rate - self.fallback_base.collision_rate

    def deltas(self) -> Dict[str, float]:
        return {
            "optimal_return_delta": self.optimal_return_delta,
            "fallback_return_delta": self.fallback_return_delta,
            "optimal_collision_delta": self.optimal_collision_delta,
            "fallback_collision_delta": self.fallback_collision_delta,
        }


class SweepRow(BaseModel):
    alpha: float = Field(..., ge=0)
    mean_metric_episodes: Optional[float] = Field(
        None, description="Mean of per-episode metrics over the last 100 episodes"
    )
    mean_metric_pooled: Optional[float] = Field(
        None, description="Metric between pooled last-100-episode histograms"
    )
    eval_return: Optional[float] = None
    eval_collision_rate: Optional[float] = None
    run_dir: Optional[str] = None
    error: Optional[str] = None


class SweepResult(BaseModel):
    """Alpha sweep, one row per alpha in increasing order"""
    rows: List[SweepRow]

    @model_validator(mode="after")
    def _check_order(self) -> "SweepResult":
        alphas = [row.alpha for row in self.rows]
        if any(b <= a for a, b in zip(alphas, alphas[1:])):
            raise ValueError(f"sweep alphas must be strictly increasing: {alphas}")
        return self

    @property
    def alphas(self) -> List[float]:
        return [row.alpha for row in self.rows]

    def max_adjacent_jump(self, variant: Literal["episodes", "pooled"] = "episodes") -> float:
        """Largest metric increase between adjacent alphas (failed cells are skipped)"""
        attr = "mean_metric_episodes" if variant == "episodes" else "mean_metric_pooled"
        values = [getattr(row, attr) for row in self.rows]
        jumps = [
            b - a for a, b in zip(values, values[1:])
            if a is not None and b is not None
        ]
        return max(jumps, default=0.0)


class OracleResult(BaseModel):
    """Exact optimum of one strategy (unconstrained or crossing after target 1)"""
    constraint: Constraint
    gamma: float
    value: float = Field(..., description="Optimal discounted return from the initial state")
    actions: List[int] = Field(..., description="One optimal action index sequence")
    start_q_values: List[float] = Field(..., description="Optimal action values at the initial state")
    outcome: str
    steps: int
    ego_crossing_step: Optional[int] = None
    ego_crossing_time: Optional[float] = None
    target_crossing_times: List[float] = Field(default_factory=list)
    crossing_class: str = "no-crossing"


class OracleReport(BaseModel):
    """Both strategies of one config"""
    unconstrained: OracleResult
    constrained: OracleResult

    @property
    def strategy_values(self) -> Dict[str, float]:
        return {
            "unconstrained": self.unconstrained.value,
            "cross-after-target-1": self.constrained.value,
        }


class ScriptResult(BaseModel):
    """Rollout of one piecewise-constant acceleration script"""
    accel: float
    hold_steps: int
    outcome: str
    steps: int
    discounted_return: float
    crossing_class: str


class FeasibilityReport(BaseModel):
    scripts: List[ScriptResult]
    class_members: Dict[str, int] = Field(
        ..., description="Collision-free goal-reaching scripts per strategy class"
    )

    def has_class(self, name: str) -> bool:
        return self.class_members.get(name, 0) > 0


class FallbackCertificate(BaseModel):
    """Checks a candidate fallback policy against the optimal one"""
    valid: bool = Field(..., description="Goal reached without collision in every evaluated episode")
    suboptimal: bool = Field(..., description="Value gap below epsilon")
    adjusted_suboptimal: bool = Field(..., description="Value gap below epsilon plus the pseudo-reward terms")
    sufficiently_different: bool
    metric: float
    value_gap: float
    epsilon: float
    difference_threshold: float
