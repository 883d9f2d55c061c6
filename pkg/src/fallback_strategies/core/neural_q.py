"""
From-scratch Q-network (ReLU MLP), Adam optimizer, double-DQN learner and the
text checkpoint format.
"""

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from ..models.schemas import LearnerConfig
from .mdp import N_ACTIONS, OBS_SIZE, Action, Transition, TransitionBatch

logger = logging.getLogger("fallback-strategies")

Gradients = List[Tuple[np.ndarray, np.ndarray]]

CHECKPOINT_MAGIC = "fallback-q-checkpoint"
CHECKPOINT_VERSION = 1


class NonFiniteLossError(FloatingPointError):
    pass


class CheckpointError(RuntimeError):
    pass


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, 1.0, 0.0)


class QNetwork:
    """Fully connected network: ReLU hidden layers, linear output; weights are (out, in)"""

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]):
        if len(weights) != len(biases) or not weights:
            raise ValueError("need one bias vector per weight matrix and at least one layer")
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i} input {w.shape[1]} != previous output {self.weights[i - 1].shape[0]}")

    @classmethod
    def initialize(cls, layer_sizes: Sequence[int], rng: np.random.Generator) -> "QNetwork":
        """Uniform fan-in initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in))"""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(weights, biases)

    @classmethod
    def zeros(cls, layer_sizes: Sequence[int]) -> "QNetwork":
        return cls(
            [np.zeros((o, i)) for i, o in zip(layer_sizes[:-1], layer_sizes[1:])],
            [np.zeros(o) for o in layer_sizes[1:]],
        )

    @property
    def layer_sizes(self) -> List[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def parameters(self) -> List[np.ndarray]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend((w, b))
        return params

    def copy(self) -> "QNetwork":
        return QNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for p in self.parameters():
            digest.update(np.ascontiguousarray(p).tobytes())
        return digest.hexdigest()

    def forward_with_memory(self, x: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
        """Batched forward pass over rows of ``x``; memory = [a0, z1, a1, ..., z_{L-1}, a_{L-1}]"""
        a = np.asarray(x, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] != self.weights[0].shape[1]:
            raise ValueError(f"expected input of shape (n, {self.weights[0].shape[1]}), got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("network input contains non-finite values")
        memory = [a]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            if i == last:
                return memory, z
            a = relu(z)
            memory.extend((z, a))
        raise AssertionError("unreachable")

    def forward_batch(self, x: np.ndarray) -> np.ndarray:
        return self.forward_with_memory(x)[1]

    def forward(self, s: np.ndarray) -> np.ndarray:
        return self.forward_batch(np.asarray(s, dtype=np.float64)[None, :])[0]

    def backward(self, memory: List[np.ndarray], grad_out: np.ndarray) -> Gradients:
        """Gradients of sum(outputs * grad_out) w.r.t. every (W, b), summed over the batch"""
        grads: Gradients = []
        dz = np.asarray(grad_out, dtype=np.float64)
        for i in range(len(self.weights) - 1, -1, -1):
            a_prev = memory[2 * i]
            grads.append((dz.T @ a_prev, dz.sum(axis=0)))
            if i:
                da = dz @ self.weights[i]
                dz = relu_grad(memory[2 * i - 1]) * da
        grads.reverse()
        return grads


def forward(net: QNetwork, s: np.ndarray) -> np.ndarray:
    return net.forward(s)


def backward(net: QNetwork, s: np.ndarray, grad_out: np.ndarray) -> Gradients:
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != (net.layer_sizes[-1],):
        raise ValueError(f"grad_out must have shape ({net.layer_sizes[-1]},), got {grad_out.shape}")
    memory, _ = net.forward_with_memory(np.asarray(s, dtype=np.float64)[None, :])
    return net.backward(memory, grad_out[None, :])


class AdamOptimizer:
    """Adaptive-moment optimizer; moments mirror the parameter shapes"""

    def __init__(self, params: Sequence[np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: Sequence[np.ndarray], grads: Gradients) -> None:
        flat = [g for pair in grads for g in pair]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, flat, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass(frozen=True)
class EpsilonSchedule:
    start: float
    end: float
    decay_steps: int

    def value(self, step: int) -> float:
        frac = min(max(step, 0) / self.decay_steps, 1.0)
        return self.start + (self.end - self.start) * frac


class DoubleDQNLearner:
    """Online/target networks, optimizer, exploration schedule and step counters"""

    def __init__(self, config: LearnerConfig, rng: np.random.Generator,
                 obs_size: int = OBS_SIZE, n_actions: int = N_ACTIONS):
        self.config = config
        sizes = [obs_size, *config.hidden_sizes, n_actions]
        self.online = QNetwork.initialize(sizes, rng)
        self.target = self.online.copy()
        self.optimizer = AdamOptimizer(
            self.online.parameters(), config.learning_rate,
            config.adam_beta1, config.adam_beta2, config.adam_epsilon,
        )
        self.gamma = config.gamma
        self.batch_size = config.batch_size
        self.sync_period = config.target_sync_period
        self.warmup = config.warmup_transitions
        self.schedule = EpsilonSchedule(config.epsilon_start, config.epsilon_end, config.epsilon_decay_steps)
        self.env_steps = 0
        self.updates = 0

    @property
    def epsilon(self) -> float:
        return self.schedule.value(self.env_steps)

    def greedy_action(self, s: np.ndarray) -> Action:
        # np.argmax returns the lowest index among ties
        return Action(int(np.argmax(self.online.forward(s))))

    def act(self, s: np.ndarray, rng: np.random.Generator, epsilon: Optional[float] = None) -> Action:
        eps = self.epsilon if epsilon is None else epsilon
        if rng.random() < eps:
            return Action(int(rng.integers(self.online.layer_sizes[-1])))
        return self.greedy_action(s)

    def td_targets(self, batch: Union[TransitionBatch, Sequence[Transition]]) -> np.ndarray:
        batch = TransitionBatch.from_transitions(batch)
        # online network selects, target network evaluates
        best = np.argmax(self.online.forward_batch(batch.next_states), axis=1)
        evaluated = self.target.forward_batch(batch.next_states)[np.arange(len(batch)), best]
        return np.where(batch.terminals, batch.rewards, batch.rewards + self.gamma * evaluated)

    def train_step(self, batch: Union[TransitionBatch, Sequence[Transition]]) -> float:
        batch = TransitionBatch.from_transitions(batch)
        n = len(batch)
        if n != self.batch_size:
            raise ValueError(f"batch has {n} transitions, learner expects {self.batch_size}")

        targets = self.td_targets(batch)
        memory, q = self.online.forward_with_memory(batch.states)
        rows = np.arange(n)
        diff = q[rows, batch.actions] - targets
        loss = float(np.mean(diff * diff))
        if not np.isfinite(loss):
            raise NonFiniteLossError(f"non-finite TD loss {loss} at update {self.updates}")

        grad_out = np.zeros_like(q)
        grad_out[rows, batch.actions] = 2.0 * diff / n
        self.optimizer.step(self.online.parameters(), self.online.backward(memory, grad_out))

        self.updates += 1
        if self.updates % self.sync_period == 0:
            self.sync_target()
        return loss

    def sync_target(self) -> None:
        self.target = self.online.copy()


@dataclass
class Checkpoint:
    network: QNetwork
    gamma: float
    step: int


def save_checkpoint(path: Union[str, Path], network: QNetwork, gamma: float, step: int) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{CHECKPOINT_MAGIC}\n")
        fh.write(f"format_version = {CHECKPOINT_VERSION}\n")
        fh.write(f"layer_sizes = {','.join(str(n) for n in network.layer_sizes)}\n")
        fh.write(f"gamma = {gamma!r}\n")
        fh.write(f"step = {step}\n")
        for i, (w, b) in enumerate(zip(network.weights, network.biases)):
            fh.write(f"tensor W{i} {w.shape[0]} {w.shape[1]}\n")
            np.savetxt(fh, w, fmt="%.17g")
            fh.write(f"tensor b{i} 1 {b.shape[0]}\n")
            np.savetxt(fh, b[None, :], fmt="%.17g")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if not lines or lines[0].strip() != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a Q-network checkpoint")

    header = {}
    pos = 1
    while pos < len(lines) and not lines[pos].startswith("tensor "):
        key, _, value = lines[pos].partition("=")
        header[key.strip()] = value.strip()
        pos += 1

    try:
        version = int(header["format_version"])
        layer_sizes = [int(n) for n in header["layer_sizes"].split(",")]
        gamma = float(header["gamma"])
        step = int(header["step"])
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"malformed checkpoint header in {path}: {e}") from e
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} unsupported (expected {CHECKPOINT_VERSION})")

    tensors = {}
    while pos < len(lines):
        parts = lines[pos].split()
        if len(parts) != 4 or parts[0] != "tensor":
            raise CheckpointError(f"unexpected line {pos + 1} in {path}: {lines[pos]!r}")
        name, rows, cols = parts[1], int(parts[2]), int(parts[3])
        block = lines[pos + 1:pos + 1 + rows]
        values = np.loadtxt(block, dtype=np.float64, ndmin=2) if rows else np.zeros((0, cols))
        if values.shape != (rows, cols):
            raise CheckpointError(f"tensor {name} has shape {values.shape}, header says {(rows, cols)}")
        tensors[name] = values
        pos += 1 + rows

    n_layers = len(layer_sizes) - 1
    try:
        weights = [tensors[f"W{i}"] for i in range(n_layers)]
        biases = [tensors[f"b{i}"][0] for i in range(n_layers)]
        network = QNetwork(weights, biases)
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"checkpoint {path} tensors do not match layer sizes {layer_sizes}: {e}") from e
    if network.layer_sizes != layer_sizes:
        raise CheckpointError(f"checkpoint {path} layer sizes {network.layer_sizes} != header {layer_sizes}")
    return Checkpoint(network=network, gamma=gamma, step=step)
