"""
MDP vocabulary shared by the environment, learners and evaluation:
actions, observations, transitions, trajectories, returns and the replay buffer.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger("fallback-strategies")

ACCELERATIONS: Tuple[float, ...] = (-4.0, -2.0, -1.0, 0.0, 1.0, 2.0)
N_ACTIONS = len(ACCELERATIONS)
OBS_SIZE = 8

# step rewards before shaping
STEP_REWARD = -0.1
COLLISION_REWARD = -5.0


class Outcome(str, Enum):
    GOAL = "goal"
    COLLISION = "collision"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class Action:
    """One of the six longitudinal accelerations"""
    index: int

    def __post_init__(self):
        if not 0 <= self.index < N_ACTIONS:
            raise ValueError(f"action index {self.index} outside [0, {N_ACTIONS - 1}]")

    @property
    def accel(self) -> float:
        return ACCELERATIONS[self.index]

    @classmethod
    def from_accel(cls, accel: float) -> "Action":
        try:
            return cls(ACCELERATIONS.index(float(accel)))
        except ValueError:
            raise ValueError(f"acceleration {accel} is not one of {ACCELERATIONS}") from None


ACTIONS: Tuple[Action, ...] = tuple(Action(i) for i in range(N_ACTIONS))


def validate_state_vector(s: np.ndarray) -> np.ndarray:
    """Return ``s`` as a float64 observation, rejecting bad shapes and values"""
    arr = np.asarray(s, dtype=np.float64)
    if arr.shape != (OBS_SIZE,):
        raise ValueError(f"state vector must have shape ({OBS_SIZE},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"state vector has non-finite components: {arr}")
    if np.any(np.abs(arr) > 1.0):
        raise ValueError(f"state vector components must lie in [-1, 1]: {arr}")
    return arr


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool
    shaped: bool = False

    def __post_init__(self):
        if not np.isfinite(self.reward):
            raise ValueError(f"transition reward must be finite, got {self.reward}")
        if self.shaped and not self.terminal:
            raise ValueError("only terminal transitions may carry a pseudo-reward")

    def with_pseudo_reward(self, pseudo: float) -> "Transition":
        return Transition(
            state=self.state,
            action=self.action,
            reward=self.reward + pseudo,
            next_state=self.next_state,
            terminal=self.terminal,
            shaped=True,
        )


@dataclass(frozen=True)
class TransitionBatch:
    """Column-wise minibatch; iterates as ``Transition`` records"""
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)

    def __iter__(self) -> Iterator[Transition]:
        for i in range(len(self)):
            yield Transition(
                state=self.states[i],
                action=int(self.actions[i]),
                reward=float(self.rewards[i]),
                next_state=self.next_states[i],
                terminal=bool(self.terminals[i]),
            )

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition]) -> "TransitionBatch":
        if isinstance(transitions, TransitionBatch):
            return transitions
        if len(transitions) == 0:
            raise ValueError("batch must not be empty")
        return cls(
            states=np.stack([t.state for t in transitions]).astype(np.float64),
            actions=np.array([t.action for t in transitions], dtype=np.int64),
            rewards=np.array([t.reward for t in transitions], dtype=np.float64),
            next_states=np.stack([t.next_state for t in transitions]).astype(np.float64),
            terminals=np.array([t.terminal for t in transitions], dtype=bool),
        )


@dataclass(frozen=True)
class Snapshot:
    time: float
    position: float
    speed: float


@dataclass
class Trajectory:
    """Raw per-step history of one episode (the initial state included)"""
    dt: float
    times: List[float] = field(default_factory=list)
    positions: List[float] = field(default_factory=list)
    speeds: List[float] = field(default_factory=list)
    outcome: Optional[Outcome] = None

    def append(self, step: int, position: float, speed: float) -> None:
        time = step * self.dt
        if self.times and time <= self.times[-1]:
            raise ValueError(f"trajectory times must be strictly increasing ({time} after {self.times[-1]})")
        self.times.append(time)
        self.positions.append(position)
        self.speeds.append(speed)

    def __len__(self) -> int:
        return len(self.times)

    def __getitem__(self, i: int) -> Snapshot:
        return Snapshot(self.times[i], self.positions[i], self.speeds[i])

    def __iter__(self) -> Iterator[Snapshot]:
        for i in range(len(self)):
            yield self[i]

    def speed_array(self) -> np.ndarray:
        return np.asarray(self.speeds, dtype=np.float64)


@dataclass(frozen=True)
class EpisodeOutcome:
    reason: Outcome
    undiscounted_return: float
    discounted_return: float
    length: int

    @classmethod
    def from_rewards(cls, rewards: Sequence[float], reason: Outcome, gamma: float) -> "EpisodeOutcome":
        return cls(
            reason=reason,
            undiscounted_return=float(np.sum(rewards)) if len(rewards) else 0.0,
            discounted_return=discounted_return(rewards, gamma),
            length=len(rewards),
        )


def discounted_return(rewards: Sequence[float], gamma: float) -> float:
    """Sum of gamma**t * r_t"""
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    if len(rewards) == 0:
        return 0.0
    r = np.asarray(rewards, dtype=np.float64)
    return float(np.sum(r * gamma ** np.arange(len(r))))


class BufferUnderfullError(RuntimeError):
    pass


class ReplayBuffer:
    """
    Uniform ring-buffer experience replay with a side store of the speed
    sequences of the last ``episode_capacity`` completed episodes.
    """

    def __init__(self, capacity: int, episode_capacity: int = 100, obs_size: int = OBS_SIZE):
        if capacity < 1:
            raise ValueError("replay capacity must be positive")
        self.capacity = capacity
        self.episode_capacity = episode_capacity

        self.states = np.zeros((capacity, obs_size), dtype=np.float64)
        self.next_states = np.zeros((capacity, obs_size), dtype=np.float64)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float64)
        self.terminals = np.zeros(capacity, dtype=bool)
        self.shaped = np.zeros(capacity, dtype=bool)

        self.ptr, self.size, self.inserted = 0, 0, 0
        self._episodes: deque = deque(maxlen=episode_capacity)

    def __len__(self) -> int:
        return self.size

    def push(self, t: Transition) -> None:
        self.states[self.ptr] = t.state
        self.next_states[self.ptr] = t.next_state
        self.actions[self.ptr] = t.action
        self.rewards[self.ptr] = t.reward
        self.terminals[self.ptr] = t.terminal
        self.shaped[self.ptr] = t.shaped

        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.inserted += 1

    def sample_minibatch(self, n: int, rng: np.random.Generator) -> TransitionBatch:
        """Draw ``n`` distinct stored transitions uniformly at random"""
        if n > self.size:
            raise BufferUnderfullError(f"buffer holds {self.size} transitions, cannot sample {n}")
        idx = rng.choice(self.size, size=n, replace=False)
        return TransitionBatch(
            states=self.states[idx],
            actions=self.actions[idx],
            rewards=self.rewards[idx],
            next_states=self.next_states[idx],
            terminals=self.terminals[idx],
        )

    def ordered_indices(self) -> np.ndarray:
        """Storage indices from oldest to newest"""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.capacity) + self.ptr) % self.capacity

    def contents(self) -> List[Transition]:
        """Stored transitions in insertion order (oldest first)"""
        return [
            Transition(
                state=self.states[i].copy(),
                action=int(self.actions[i]),
                reward=float(self.rewards[i]),
                next_state=self.next_states[i].copy(),
                terminal=bool(self.terminals[i]),
                shaped=bool(self.shaped[i]),
            )
            for i in self.ordered_indices()
        ]

    def push_episode_features(self, features: Sequence[float]) -> None:
        self._episodes.append(np.array(features, dtype=np.float64))

    def episode_features(self) -> Tuple[np.ndarray, ...]:
        """Read-only snapshot of the stored episode feature sequences"""
        return tuple(self._episodes)

    @property
    def completed_episodes(self) -> int:
        return len(self._episodes)
