"""
Pydantic configuration schemas for environments, learners, shaping and runs
"""

import math
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class EnvConfig(BaseModel):
    """Intersection left-turn scenario: geometry, kinematics, targets, normalization"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    dt: float = Field(0.1, gt=0, description="Simulation time step (s)")
    max_steps: int = Field(150, ge=1, description="Episode horizon (steps)")

    # ego path: straight approach heading north, left quarter turn, straight exit heading west
    path_start: Tuple[float, float] = Field((1.75, -30.0), description="Start point of the ego path (m)")
    approach_length: float = Field(30.0, gt=0, description="Length of the straight approach segment (m)")
    turn_radius: float = Field(7.75, gt=0, description="Radius of the left quarter turn (m)")
    exit_length: float = Field(20.0, ge=0, description="Length of the straight exit segment (m)")

    ego_initial_position: float = Field(0.0, ge=0, description="Ego initial arc length (m)")
    ego_initial_speed: float = Field(20.0, ge=0, description="Ego initial speed (m/s)")
    ego_speed_min: float = Field(0.0, ge=0, description="Lower ego speed bound (m/s)")
    ego_speed_max: float = Field(30.0, gt=0, description="Upper ego speed bound (m/s)")

    # oncoming lane: vertical line x = target_lane_x
    target_lane_x: float = Field(-3.0, description="x coordinate of the oncoming lane (m)")
    target_heading: Literal["south", "north"] = Field("south", description="Travel direction of the targets")
    target_speed: float = Field(20.0, description="Common constant target speed (m/s)")
    target_offsets: Tuple[float, ...] = Field(
        (40.0, 70.0, 100.0), description="Initial signed distance of each target to the conflict point (m)"
    )
    target_jitter: float = Field(
        0.0, ge=0, description="Half-width of the uniform per-episode jitter on target offsets (m)"
    )

    collision_radius: float = Field(2.5, gt=0, description="Base collision radius r_col (m)")
    radius_multipliers: Tuple[float, ...] = Field(
        (1.0, 1.0, 1.0), description="Per-target multiplier on the collision radius"
    )

    pos_max: float = Field(100.0, gt=0, description="Position normalization constant (m)")
    speed_norm: float = Field(30.0, gt=0, description="Speed normalization constant (m/s)")
    ttc_max: float = Field(10.0, gt=0, description="Time-to-collision clamp (s)")

    @model_validator(mode="after")
    def _check_consistency(self) -> "EnvConfig":
        if self.target_speed != 20.0:
            raise ValueError(f"target_speed must be 20 m/s, got {self.target_speed}")
        if len(self.radius_multipliers) != len(self.target_offsets):
            raise ValueError(
                f"radius_multipliers has {len(self.radius_multipliers)} entries "
                f"but there are {len(self.target_offsets)} targets"
            )
        if any(not (m > 0 and math.isfinite(m)) for m in self.radius_multipliers):
            raise ValueError(f"radius multipliers must be positive and finite: {self.radius_multipliers}")
        if any(not math.isfinite(d) for d in self.target_offsets):
            raise ValueError(f"target offsets must be finite: {self.target_offsets}")
        if self.ego_speed_min > self.ego_speed_max:
            raise ValueError("ego_speed_min must not exceed ego_speed_max")
        if not self.ego_speed_min <= self.ego_initial_speed <= self.ego_speed_max:
            raise ValueError(
                f"ego_initial_speed {self.ego_initial_speed} outside "
                f"[{self.ego_speed_min}, {self.ego_speed_max}]"
            )
        if self.ego_initial_position >= self.path_length:
            raise ValueError(
                f"ego_initial_position {self.ego_initial_position} must lie before the path end {self.path_length}"
            )
        # the oncoming lane must cut the turn arc once, away from its end points
        arc_center_x = self.path_start[0] - self.turn_radius
        if not arc_center_x < self.target_lane_x < self.path_start[0]:
            raise ValueError(
                f"target lane x={self.target_lane_x} does not cross the turn arc "
                f"(needs {arc_center_x} < x < {self.path_start[0]})"
            )
        return self

    @property
    def path_length(self) -> float:
        return self.approach_length + self.turn_radius * math.pi / 2 + self.exit_length

    @property
    def n_targets(self) -> int:
        return len(self.target_offsets)


class LearnerConfig(BaseModel):
    """Double-DQN hyperparameters"""
    model_config = ConfigDict(extra="forbid")

    hidden_sizes: Tuple[int, ...] = Field((64, 64), description="Hidden layer widths")
    learning_rate: float = Field(1e-3, gt=0, description="Adam learning rate")
    adam_beta1: float = Field(0.9, ge=0, lt=1, description="First moment decay")
    adam_beta2: float = Field(0.999, ge=0, lt=1, description="Second moment decay")
    adam_epsilon: float = Field(1e-8, gt=0, description="Adam stabilizer")
    gamma: float = Field(0.99, gt=0, le=1, description="Discount factor")
    batch_size: int = Field(32, ge=1, description="Minibatch size")
    warmup_transitions: int = Field(1000, ge=1, description="Transitions stored before training starts")
    target_sync_period: int = Field(1000, ge=1, description="Gradient steps between target network syncs")
    epsilon_start: float = Field(1.0, ge=0, le=1, description="Initial exploration rate")
    epsilon_end: float = Field(0.05, ge=0, le=1, description="Final exploration rate")
    epsilon_decay_steps: int = Field(50_000, ge=1, description="Env steps of linear epsilon decay")
    replay_capacity: int = Field(50_000, ge=1, description="Replay buffer capacity (transitions)")
    feature_episodes: int = Field(100, ge=1, description="Episodes kept in the feature side store")

    @model_validator(mode="after")
    def _check_schedule(self) -> "LearnerConfig":
        if self.epsilon_end > self.epsilon_start:
            raise ValueError("epsilon_end must not exceed epsilon_start")
        if self.warmup_transitions < self.batch_size:
            raise ValueError("warmup_transitions must be at least batch_size")
        if self.replay_capacity < self.batch_size:
            raise ValueError("replay_capacity must be at least batch_size")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError(f"hidden sizes must be positive: {self.hidden_sizes}")
        return self


class ShapingParams(BaseModel):
    """Pseudo-reward scale/offset and the behaviour difference threshold"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha: float = Field(1.0, ge=0, description="Pseudo-reward scale (reward units)")
    delta: float = Field(0.1, gt=0, lt=1, description="Pseudo-reward offset")
    difference_threshold: float = Field(1.1, ge=0, description="Metric threshold d for distinct behaviours")
    histogram_bins: int = Field(30, ge=1, description="Feature histogram bins")
    feature_max: float = Field(30.0, gt=0, description="Upper end of the feature range (m/s)")


class AgentSeeds(BaseModel):
    """Seeds of one agent: environment jitter, network init, exploration/sampling"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    env: int = Field(..., ge=0)
    network: int = Field(..., ge=0)
    exploration: int = Field(..., ge=0)


class RunConfig(BaseModel):
    """Run layout: agent count, budgets, seeds, cadences and output"""
    model_config = ConfigDict(extra="forbid")

    pseudo_agents: int = Field(1, ge=0, description="Number N of pseudo-agents")
    total_steps: int = Field(300_000, gt=0, description="Environment steps per agent")
    base_seed: int = Field(0, ge=0, description="Seed used to derive per-agent seeds")
    seeds: Optional[List[AgentSeeds]] = Field(None, description="Explicit per-agent seeds (N+1 entries)")
    log_every: int = Field(10, ge=1, description="Progress log cadence (episodes)")
    checkpoint_every: int = Field(50_000, ge=1, description="Checkpoint cadence (env steps per agent)")
    output_dir: str = Field("default", description="Run directory, relative to the output root")
    comparison_logging: bool = Field(True, description="Log agent 0's comparison-only pseudo-reward")
    comparison_alpha: Optional[float] = Field(
        None, ge=0, description="Alpha of the comparison channel (defaults to shaping alpha)"
    )


class TrainConfig(BaseModel):
    """Complete training configuration ([environment], [learner], [shaping], [run])"""
    model_config = ConfigDict(extra="forbid")

    environment: EnvConfig = Field(default_factory=EnvConfig)
    learner: LearnerConfig = Field(default_factory=LearnerConfig)
    shaping: ShapingParams = Field(default_factory=ShapingParams)
    run: RunConfig = Field(default_factory=RunConfig)

    @model_validator(mode="after")
    def _check_seeds(self) -> "TrainConfig":
        if self.run.seeds is not None and len(self.run.seeds) != self.n_agents:
            raise ValueError(
                f"run.seeds lists {len(self.run.seeds)} agents, expected {self.n_agents} (N + 1)"
            )
        return self

    @property
    def n_agents(self) -> int:
        return self.run.pseudo_agents + 1

    def seeds_for(self, agent_id: int) -> AgentSeeds:
        """Explicit seeds when configured, else derived from (base_seed, agent_id)"""
        if not 0 <= agent_id < self.n_agents:
            raise ValueError(f"agent id {agent_id} out of range [0, {self.n_agents})")
        if self.run.seeds is not None:
            return self.run.seeds[agent_id]
        env, network, exploration = np.random.SeedSequence([self.run.base_seed, agent_id]).generate_state(3)
        return AgentSeeds(env=int(env), network=int(network), exploration=int(exploration))

    def with_seed(self, seed: int) -> "TrainConfig":
        """Copy with a new base seed and derived per-agent seeds"""
        run = self.run.model_copy(update={"base_seed": seed, "seeds": None})
        return self.model_copy(update={"run": run})

    def with_alpha(self, alpha: float) -> "TrainConfig":
        shaping = ShapingParams.model_validate({**self.shaping.model_dump(), "alpha": alpha})
        return self.model_copy(update={"shaping": shaping})
