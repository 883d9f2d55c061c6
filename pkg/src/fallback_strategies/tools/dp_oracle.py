"""
Exact finite-horizon backward induction over the intersection environment.

Speeds live on a 0.1 m/s grid and positions on a 0.01 m grid, so with
dt = 0.1 s and integer accelerations every reachable simulator state is a grid
cell and no interpolation is needed. Values are computed only inside the
forward-reachable (position, speed) box of each step.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..core.intersection_env import (
    WorldState, collision_mask, path_geometry, reset, step, advance_targets,
)
from ..core.mdp import (
    ACCELERATIONS, COLLISION_REWARD, N_ACTIONS, STEP_REWARD, Action, Outcome, discounted_return,
)
from ..models.results import (
    Constraint, FeasibilityReport, OracleReport, OracleResult, ScriptResult,
)
from ..models.schemas import EnvConfig

logger = logging.getLogger("fallback-strategies")

SPEED_QUANTUM = 0.1
POSITION_QUANTUM = 0.01
# tick -> metres by division, as the simulator snaps
POSITION_TICKS = 100
GRID_TOLERANCE = 1e-9

BEFORE_TARGET_1 = "before-target-1"
BETWEEN_1_AND_2 = "between-1-and-2"
AFTER_TARGET_2 = "after-target-2"
NO_CROSSING = "no-crossing"


class OracleConfigError(ValueError):
    pass


def _to_ticks(value: float, quantum: float, name: str) -> int:
    ticks = round(value / quantum)
    if abs(ticks * quantum - value) > GRID_TOLERANCE:
        raise OracleConfigError(f"{name}={value} is not a multiple of {quantum}")
    return int(ticks)


def _first_tick_at_or_beyond(length: float) -> int:
    """Smallest position tick p with p / POSITION_TICKS >= length"""
    p = math.ceil(length * POSITION_TICKS)
    while p / POSITION_TICKS < length:
        p += 1
    while p > 0 and (p - 1) / POSITION_TICKS >= length:
        p -= 1
    return p


@dataclass(frozen=True)
class GridSpec:
    speed_min: int
    speed_max: int
    accel: np.ndarray
    start_position: int
    start_speed: int
    goal: int
    conflict: int
    horizon: int


def grid_spec(cfg: EnvConfig) -> GridSpec:
    """Integer grid of ``cfg``; rejects configs whose dynamics leave the grid"""
    if abs(cfg.dt - 0.1) > 1e-12:
        raise OracleConfigError(f"exact grid needs dt = 0.1 s, got {cfg.dt}")
    if cfg.target_jitter > 0:
        raise OracleConfigError("jittered target offsets are not deterministic")
    accel = np.array([_to_ticks(a * cfg.dt, SPEED_QUANTUM, "acceleration") for a in ACCELERATIONS])
    geometry = path_geometry(cfg)
    return GridSpec(
        speed_min=_to_ticks(cfg.ego_speed_min, SPEED_QUANTUM, "ego_speed_min"),
        speed_max=_to_ticks(cfg.ego_speed_max, SPEED_QUANTUM, "ego_speed_max"),
        accel=accel,
        start_position=_to_ticks(cfg.ego_initial_position, POSITION_QUANTUM, "ego_initial_position"),
        start_speed=_to_ticks(cfg.ego_initial_speed, SPEED_QUANTUM, "ego_initial_speed"),
        goal=_first_tick_at_or_beyond(cfg.path_length),
        conflict=_first_tick_at_or_beyond(geometry.conflict_arc_length),
        horizon=cfg.max_steps,
    )


def target_schedule(cfg: EnvConfig) -> List[Tuple[float, ...]]:
    """Target distances at every step 0..max_steps, advanced exactly as the simulator does"""
    distances = reset(cfg).target_distances
    schedule = [distances]
    for _ in range(cfg.max_steps):
        distances = advance_targets(distances, cfg)
        schedule.append(distances)
    return schedule


@dataclass(frozen=True)
class _Box:
    p_lo: int
    p_hi: int  # last non-terminal row (may be < p_lo when the step is unreachable)
    v_lo: int
    v_hi: int

    @property
    def empty(self) -> bool:
        return self.p_hi < self.p_lo


def _reachable_boxes(grid: GridSpec) -> List[_Box]:
    boxes = []
    p_lo = p_hi = grid.start_position
    v_lo = v_hi = grid.start_speed
    da_min, da_max = int(grid.accel.min()), int(grid.accel.max())
    for t in range(grid.horizon + 1):
        boxes.append(_Box(p_lo, min(p_hi, grid.goal - 1), v_lo, v_hi))
        v_lo = max(grid.speed_min, v_lo + da_min)
        v_hi = min(grid.speed_max, v_hi + da_max)
        p_lo, p_hi = p_lo + v_lo, p_hi + v_hi
    return boxes


def _collision_table(cfg: EnvConfig, grid: GridSpec, schedule: Sequence[Tuple[float, ...]]) -> np.ndarray:
    """col[t, p]: collision at step t with the ego at position tick p"""
    width = grid.goal + grid.speed_max + 1
    positions = np.arange(width) / POSITION_TICKS
    table = np.zeros((grid.horizon + 1, width), dtype=bool)
    for t in range(1, grid.horizon + 1):
        table[t] = collision_mask(positions, np.array(schedule[t]), cfg)
    return table


def solve(cfg: EnvConfig, gamma: float = 0.99, constraint: Constraint = "none") -> OracleResult:
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    if constraint not in ("none", "cross-after-target-1"):
        raise ValueError(f"unknown constraint {constraint!r}")
    grid = grid_spec(cfg)
    schedule = target_schedule(cfg)
    col = _collision_table(cfg, grid, schedule)
    boxes = _reachable_boxes(grid)
    constrained = constraint == "cross-after-target-1" and cfg.n_targets > 0

    T = grid.horizon
    policy: List[Optional[np.ndarray]] = [None] * T
    v_next: Optional[np.ndarray] = None
    start_q = np.zeros(N_ACTIONS)

    for t in range(T - 1, -1, -1):
        box, nbox = boxes[t], boxes[t + 1]
        if box.empty:
            v_next = None
            continue
        rows = np.arange(box.p_lo, box.p_hi + 1)[:, None]
        speeds = np.arange(box.v_lo, box.v_hi + 1)[None, :]
        last_step = t + 1 >= T
        # target 1 still at or before the conflict point after this step
        forbid_crossing = constrained and schedule[t + 1][0] >= 0

        q = np.empty((N_ACTIONS, rows.shape[0], speeds.shape[1]))
        for k, da in enumerate(grid.accel):
            v2 = np.clip(speeds + da, grid.speed_min, grid.speed_max)
            p2 = rows + v2
            hit = col[t + 1][p2]
            reward = np.where(hit, COLLISION_REWARD, STEP_REWARD)
            terminal = hit | (p2 >= grid.goal)
            if last_step or v_next is None:
                q[k] = reward
            else:
                ri = np.clip(p2 - nbox.p_lo, 0, v_next.shape[0] - 1)
                cont = v_next[ri, v2 - nbox.v_lo]
                q[k] = np.where(terminal, reward, reward + gamma * cont)
            if forbid_crossing:
                q[k][(rows < grid.conflict) & (p2 >= grid.conflict)] = -np.inf

        policy[t] = np.argmax(q, axis=0).astype(np.int8)
        v_next = q.max(axis=0)
        if t == 0:
            start_q = q[:, 0, 0].copy()

    value = float(start_q.max())
    actions = _extract_actions(grid, boxes, policy, col)
    rollout = simulate_script(cfg, actions)
    crossing = crossing_step(rollout.states, cfg)
    logger.info(
        f"Oracle ({constraint}): V*={value:.6f}, {len(actions)} steps, "
        f"outcome={rollout.outcome.value}, crossing step={crossing}"
    )
    return OracleResult(
        constraint=constraint,
        gamma=gamma,
        value=value,
        actions=actions,
        start_q_values=[float(x) for x in start_q],
        outcome=rollout.outcome.value,
        steps=len(actions),
        ego_crossing_step=crossing,
        ego_crossing_time=None if crossing is None else crossing * cfg.dt,
        target_crossing_times=target_crossing_times(cfg),
        crossing_class=crossing_class(rollout.states, cfg),
    )


def _extract_actions(grid: GridSpec, boxes: List[_Box], policy: List[Optional[np.ndarray]],
                     col: np.ndarray) -> List[int]:
    actions: List[int] = []
    p, v = grid.start_position, grid.start_speed
    for t in range(grid.horizon):
        box = boxes[t]
        a = int(policy[t][p - box.p_lo, v - box.v_lo])
        actions.append(a)
        v = min(max(v + int(grid.accel[a]), grid.speed_min), grid.speed_max)
        p += v
        if col[t + 1][p] or p >= grid.goal:
            break
    return actions


def solve_strategies(cfg: EnvConfig, gamma: float = 0.99) -> OracleReport:
    return OracleReport(
        unconstrained=solve(cfg, gamma, "none"),
        constrained=solve(cfg, gamma, "cross-after-target-1"),
    )


@dataclass
class ScriptRollout:
    rewards: List[float]
    states: List[WorldState]
    outcome: Outcome
    actions: List[int]


def simulate_script(cfg: EnvConfig, actions: Sequence[int | Action]) -> ScriptRollout:
    """Play ``actions`` through the simulator; zero acceleration once the script runs out"""
    zero = Action.from_accel(0.0).index
    w = reset(cfg)
    states, rewards, played = [w], [], []
    while not w.terminal:
        i = len(played)
        a = actions[i] if i < len(actions) else zero
        a = a.index if isinstance(a, Action) else int(a)
        result = step(w, a, cfg)
        w = result.next
        states.append(w)
        rewards.append(result.reward)
        played.append(a)
    return ScriptRollout(rewards=rewards, states=states, outcome=w.outcome, actions=played)


def rollout_value(cfg: EnvConfig, actions: Sequence[int | Action], gamma: float = 0.99) -> Tuple[float, Outcome]:
    rollout = simulate_script(cfg, actions)
    return discounted_return(rollout.rewards, gamma), rollout.outcome


def crossing_step(states: Sequence[WorldState], cfg: EnvConfig) -> Optional[int]:
    """First step at which the ego is at or beyond the conflict point"""
    conflict = path_geometry(cfg).conflict_arc_length
    for w in states:
        if w.ego_position >= conflict:
            return w.step
    return None


def crossing_class(states: Sequence[WorldState], cfg: EnvConfig) -> str:
    k = crossing_step(states, cfg)
    if k is None:
        return NO_CROSSING
    distances = next(w.target_distances for w in states if w.step == k)
    if not distances or distances[0] >= 0:
        return BEFORE_TARGET_1
    if len(distances) == 1 or distances[1] >= 0:
        return BETWEEN_1_AND_2
    return AFTER_TARGET_2


def target_crossing_times(cfg: EnvConfig) -> List[float]:
    """Time at which each target reaches the conflict point (negative if already past)"""
    return [d / cfg.target_speed for d in cfg.target_offsets]


def feasibility_scan(cfg: EnvConfig, lattice: int = 5, gamma: float = 0.99) -> FeasibilityReport:
    """Hold one acceleration for k steps (k on a lattice), then coast; tally clean scripts per class"""
    zero = Action.from_accel(0.0)
    scripts: List[ScriptResult] = []
    for action in (Action(i) for i in range(N_ACTIONS)):
        for hold in range(0, cfg.max_steps + 1, lattice):
            # zero-length and zero-acceleration scripts all coast; keep one of them
            if (hold == 0) != (action == zero):
                continue
            rollout = simulate_script(cfg, [action.index] * hold)
            scripts.append(ScriptResult(
                accel=action.accel,
                hold_steps=hold,
                outcome=rollout.outcome.value,
                steps=len(rollout.rewards),
                discounted_return=discounted_return(rollout.rewards, gamma),
                crossing_class=crossing_class(rollout.states, cfg),
            ))

    clean = [s for s in scripts if s.outcome == Outcome.GOAL.value]
    if cfg.n_targets == 0:
        members = {BEFORE_TARGET_1: len(clean), BETWEEN_1_AND_2: len(clean)}
    else:
        members = {
            name: sum(1 for s in clean if s.crossing_class == name)
            for name in (BEFORE_TARGET_1, BETWEEN_1_AND_2, AFTER_TARGET_2)
        }
    logger.info(f"Feasibility scan: {len(scripts)} scripts, clean members per class {members}")
    return FeasibilityReport(scripts=scripts, class_members=members)


def oracle_frame(report: Union[OracleReport, Sequence[OracleResult]]) -> pd.DataFrame:
    """Per-strategy table for CSV export"""
    results = (report.unconstrained, report.constrained) if isinstance(report, OracleReport) else report
    rows: List[Dict[str, object]] = []
    for result in results:
        row: Dict[str, object] = {
            "strategy": "unconstrained" if result.constraint == "none" else result.constraint,
            "value": result.value,
            "outcome": result.outcome,
            "steps": result.steps,
            "crossing_class": result.crossing_class,
            "ego_crossing_time": result.ego_crossing_time,
        }
        for i, t in enumerate(result.target_crossing_times, start=1):
            row[f"target_{i}_crossing_time"] = t
        rows.append(row)
    return pd.DataFrame(rows)
