"""
Deterministic two-way intersection: the ego turns left along a fixed path while
constant-speed targets on the oncoming lane cross the conflict point.

Stepping is a pure function of (state, action, config). Geometry and collision
tests are vectorized so the exact DP solver can evaluate whole position grids
with the same code.
"""

import logging
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from ..models.schemas import EnvConfig
from .mdp import (
    ACCELERATIONS, COLLISION_REWARD, OBS_SIZE, STEP_REWARD, Action, Outcome, Trajectory,
    validate_state_vector,
)

logger = logging.getLogger("fallback-strategies")

OBSERVED_TARGETS = (OBS_SIZE - 2) // 2


@dataclass(frozen=True)
class PathGeometry:
    start: Tuple[float, float]
    center: Tuple[float, float]
    radius: float
    approach_length: float
    arc_length: float
    length: float
    conflict_angle: float
    conflict_arc_length: float
    conflict_point: Tuple[float, float]
    target_lane_x: float
    target_dir_y: float


@lru_cache(maxsize=64)
def path_geometry(cfg: EnvConfig) -> PathGeometry:
    x0, y0 = cfg.path_start
    radius = cfg.turn_radius
    cx, cy = x0 - radius, y0 + cfg.approach_length
    arc_length = radius * math.pi / 2
    # angle on the arc, measured from the +x axis about the center, where x = target_lane_x
    conflict_angle = math.acos((cfg.target_lane_x - cx) / radius)
    conflict_point = (cfg.target_lane_x, cy + radius * math.sin(conflict_angle))
    return PathGeometry(
        start=(x0, y0),
        center=(cx, cy),
        radius=radius,
        approach_length=cfg.approach_length,
        arc_length=arc_length,
        length=cfg.path_length,
        conflict_angle=conflict_angle,
        conflict_arc_length=cfg.approach_length + radius * conflict_angle,
        conflict_point=conflict_point,
        target_lane_x=cfg.target_lane_x,
        target_dir_y=-1.0 if cfg.target_heading == "south" else 1.0,
    )


def path_points(arc_lengths: np.ndarray, geometry: PathGeometry) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized path map; arc lengths beyond either end are clamped to it"""
    s = np.clip(np.asarray(arc_lengths, dtype=np.float64), 0.0, geometry.length)
    x0, y0 = geometry.start
    cx, cy = geometry.center
    r = geometry.radius
    a = geometry.approach_length

    theta = np.clip((s - a) / r, 0.0, math.pi / 2)
    along_exit = s - a - geometry.arc_length

    x = np.where(s <= a, x0, np.where(along_exit <= 0, cx + r * np.cos(theta), cx - along_exit))
    y = np.where(s <= a, y0 + s, np.where(along_exit <= 0, cy + r * np.sin(theta), cy + r))
    return x, y


def path_point(arc_length: float, cfg: EnvConfig) -> Tuple[float, float]:
    geometry = path_geometry(cfg)
    if not 0.0 <= arc_length <= geometry.length:
        raise ValueError(f"arc length {arc_length} outside the path [0, {geometry.length}]")
    x, y = path_points(np.array([arc_length]), geometry)
    return float(x[0]), float(y[0])


def target_points(distances: np.ndarray, geometry: PathGeometry) -> Tuple[np.ndarray, np.ndarray]:
    """Lane points of targets at signed distance-to-conflict (positive = approaching)"""
    d = np.asarray(distances, dtype=np.float64)
    x = np.full_like(d, geometry.target_lane_x)
    y = geometry.conflict_point[1] - geometry.target_dir_y * d
    return x, y


def effective_radii(cfg: EnvConfig) -> np.ndarray:
    return cfg.collision_radius * np.asarray(cfg.radius_multipliers, dtype=np.float64)


def pairwise_distances(positions: np.ndarray, target_distances: np.ndarray, cfg: EnvConfig) -> np.ndarray:
    """Euclidean ego/target distances, shape (len(positions), n_targets)"""
    geometry = path_geometry(cfg)
    px, py = path_points(positions, geometry)
    tx, ty = target_points(target_distances, geometry)
    return np.hypot(px[:, None] - tx[None, :], py[:, None] - ty[None, :])


def collision_mask(positions: np.ndarray, target_distances: np.ndarray, cfg: EnvConfig) -> np.ndarray:
    """Collision flag per ego position against one configuration of targets"""
    positions = np.atleast_1d(np.asarray(positions, dtype=np.float64))
    if cfg.n_targets == 0:
        return np.zeros(positions.shape, dtype=bool)
    dist = pairwise_distances(positions, np.asarray(target_distances, dtype=np.float64), cfg)
    return np.any(dist < effective_radii(cfg)[None, :], axis=1)


@dataclass(frozen=True)
class WorldState:
    step: int
    ego_position: float
    ego_speed: float
    target_distances: Tuple[float, ...]
    outcome: Optional[Outcome] = None

    @property
    def terminal(self) -> bool:
        return self.outcome is not None


class StepResult(NamedTuple):
    next: WorldState
    reward: float
    terminal: bool
    outcome: Optional[Outcome]


def reset(cfg: EnvConfig, rng: Optional[np.random.Generator] = None) -> WorldState:
    """Initial state; target offsets are jittered only when configured and ``rng`` is given"""
    offsets = np.asarray(cfg.target_offsets, dtype=np.float64)
    if cfg.target_jitter > 0 and rng is not None and offsets.size:
        offsets = offsets + rng.uniform(-cfg.target_jitter, cfg.target_jitter, size=offsets.size)
    return WorldState(
        step=0,
        ego_position=cfg.ego_initial_position,
        ego_speed=cfg.ego_initial_speed,
        target_distances=tuple(float(d) for d in offsets),
    )


@lru_cache(maxsize=64)
def grid_resolution(cfg: EnvConfig) -> Optional[Tuple[int, int]]:
    """Ticks per unit of (speed, position) when every reachable ego state is a grid point, else None"""
    per_unit = round(1.0 / cfg.dt)
    if per_unit < 1 or abs(per_unit * cfg.dt - 1.0) > 1e-9:
        return None
    speed_ticks, position_ticks = per_unit, per_unit * per_unit
    anchors = (
        (cfg.ego_initial_speed, speed_ticks),
        (cfg.ego_speed_min, speed_ticks),
        (cfg.ego_speed_max, speed_ticks),
        (cfg.ego_initial_position, position_ticks),
    )
    if any(abs(value * ticks - round(value * ticks)) > 1e-6 for value, ticks in anchors):
        return None
    return speed_ticks, position_ticks


def snap(value: float, ticks_per_unit: int) -> float:
    # integer division by the tick count gives the correctly rounded decimal
    return round(value * ticks_per_unit) / ticks_per_unit


def advance_targets(distances: Sequence[float], cfg: EnvConfig) -> Tuple[float, ...]:
    travel = cfg.target_speed * cfg.dt
    return tuple(d - travel for d in distances)


def collision(w: WorldState, cfg: EnvConfig) -> bool:
    return bool(collision_mask(np.array([w.ego_position]), np.array(w.target_distances), cfg)[0])


def ego_target_distances(w: WorldState, cfg: EnvConfig) -> np.ndarray:
    if cfg.n_targets == 0:
        return np.zeros(0)
    return pairwise_distances(np.array([w.ego_position]), np.array(w.target_distances), cfg)[0]


def min_clearance(w: WorldState, cfg: EnvConfig) -> float:
    """Smallest ego/target distance minus that target's effective radius"""
    if cfg.n_targets == 0:
        return math.inf
    return float(np.min(ego_target_distances(w, cfg) - effective_radii(cfg)))


def step(w: WorldState, action: Union[Action, int], cfg: EnvConfig) -> StepResult:
    if w.terminal:
        raise RuntimeError(f"cannot step a terminal state (step {w.step}, outcome {w.outcome.value})")
    accel = action.accel if isinstance(action, Action) else ACCELERATIONS[int(action)]

    resolution = grid_resolution(cfg)
    speed = min(max(w.ego_speed + accel * cfg.dt, cfg.ego_speed_min), cfg.ego_speed_max)
    if resolution is not None:
        speed = snap(speed, resolution[0])
    position = w.ego_position + speed * cfg.dt
    if resolution is not None:
        position = snap(position, resolution[1])
    distances = advance_targets(w.target_distances, cfg)
    next_step = w.step + 1

    candidate = WorldState(next_step, position, speed, distances)
    if collision(candidate, cfg):
        outcome, reward = Outcome.COLLISION, COLLISION_REWARD
    elif position >= cfg.path_length:
        outcome, reward = Outcome.GOAL, STEP_REWARD
    elif next_step >= cfg.max_steps:
        outcome, reward = Outcome.TIMEOUT, STEP_REWARD
    else:
        outcome, reward = None, STEP_REWARD

    next_state = replace(candidate, outcome=outcome)
    return StepResult(next_state, reward, outcome is not None, outcome)


def observe(w: WorldState, cfg: EnvConfig) -> np.ndarray:
    """Normalized 8-component observation; targets ordered by ascending time-to-conflict"""
    obs = np.empty(OBS_SIZE, dtype=np.float64)
    obs[0] = np.clip(w.ego_position / cfg.pos_max, -1.0, 1.0)
    obs[1] = np.clip(w.ego_speed / cfg.speed_norm, 0.0, 1.0)

    d = np.asarray(w.target_distances, dtype=np.float64)
    # passed targets (signed distance < 0) get the ttc sentinel
    ttc = np.where(d >= 0, np.clip(d / cfg.target_speed, 0.0, cfg.ttc_max), cfg.ttc_max) / cfg.ttc_max
    x = np.clip(d / cfg.pos_max, -1.0, 1.0)
    order = np.argsort(ttc, kind="stable")[:OBSERVED_TARGETS]

    slots = np.tile([-1.0, 1.0], OBSERVED_TARGETS)
    slots[0:2 * len(order):2] = x[order]
    slots[1:2 * len(order):2] = ttc[order]
    obs[2:] = slots
    return obs


def perturb(cfg: EnvConfig, target: int, factor: float) -> EnvConfig:
    """Copy of ``cfg`` whose ``target`` (1-based) radius multiplier is set to ``factor``"""
    if not 1 <= target <= cfg.n_targets:
        raise ValueError(f"target index {target} outside [1, {cfg.n_targets}]")
    if not (factor > 0 and math.isfinite(factor)):
        raise ValueError(f"perturbation factor must be positive and finite, got {factor}")
    multipliers = list(cfg.radius_multipliers)
    multipliers[target - 1] = float(factor)
    return EnvConfig.model_validate({**cfg.model_dump(), "radius_multipliers": tuple(multipliers)})


class IntersectionEnv:
    """Stateful episode wrapper used by training and evaluation loops"""

    def __init__(self, cfg: EnvConfig, rng: Optional[np.random.Generator] = None):
        self.cfg = cfg
        self.rng = rng
        self.state: Optional[WorldState] = None
        self.trajectory: Optional[Trajectory] = None

    def reset(self) -> np.ndarray:
        self.state = reset(self.cfg, self.rng)
        self.trajectory = Trajectory(dt=self.cfg.dt)
        self.trajectory.append(self.state.step, self.state.ego_position, self.state.ego_speed)
        return validate_state_vector(observe(self.state, self.cfg))

    def step(self, action: Union[Action, int]) -> Tuple[np.ndarray, float, bool, Optional[Outcome]]:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        result = step(self.state, action, self.cfg)
        self.state = result.next
        self.trajectory.append(self.state.step, self.state.ego_position, self.state.ego_speed)
        if result.terminal:
            self.trajectory.outcome = result.outcome
        return validate_state_vector(observe(self.state, self.cfg)), result.reward, result.terminal, result.outcome
