"""
Evaluation harness: greedy evaluation of checkpoints, Q-value landscapes over
(step, speed), the alpha sweep, collision-radius perturbation comparisons and
training-curve export.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..core.divergence import (
    ReferenceDistribution, histogram, is_suboptimal, metric, satisfies_adjusted_value,
    sufficiently_different,
)
from ..core.intersection_env import WorldState, min_clearance, observe, perturb, reset, step
from ..core.mdp import N_ACTIONS, OBS_SIZE, Action, Outcome, discounted_return
from ..core.neural_q import CheckpointError, QNetwork, load_checkpoint
from ..models.results import (
    EvalReport, FallbackCertificate, PerturbationComparison, SweepResult, SweepRow,
)
from ..models.schemas import EnvConfig, ShapingParams, TrainConfig
from ..utils.config_io import load_train_config
from ..utils.helpers import resolve_output_path, safe_divide, sanitize_filename
from .dp_oracle import crossing_class
from .trainer import SMOOTHING_WINDOW, RunArtifacts, reference_distribution, run_training

logger = logging.getLogger("fallback-strategies")

DEFAULT_ALPHAS = (0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0)
SPEED_BIN_WIDTH = 1.0

CheckpointLike = Union[str, Path, QNetwork]


class Policy(Protocol):
    policy_id: str

    def action(self, obs: np.ndarray, state: WorldState) -> int:
        ...


class GreedyQPolicy:
    """epsilon = 0 policy over a private copy of a Q-network"""

    def __init__(self, network: QNetwork, policy_id: str = "q-network", gamma: float = 0.99):
        sizes = network.layer_sizes
        if sizes[0] != OBS_SIZE or sizes[-1] != N_ACTIONS:
            raise CheckpointError(
                f"network maps {sizes[0]} inputs to {sizes[-1]} outputs, "
                f"environment needs {OBS_SIZE} -> {N_ACTIONS}"
            )
        self.network = network.copy()
        self.policy_id = policy_id
        self.gamma = gamma

    def q_values(self, obs: np.ndarray) -> np.ndarray:
        return self.network.forward(obs)

    def action(self, obs: np.ndarray, state: WorldState) -> int:
        return int(np.argmax(self.q_values(obs)))


class ScriptedPolicy:
    """Replays an action script by step index; zero acceleration after it ends"""

    def __init__(self, actions: Sequence[int], policy_id: str = "script"):
        self.actions = [int(a) for a in actions]
        self.policy_id = policy_id
        self._coast = Action.from_accel(0.0).index

    def action(self, obs: np.ndarray, state: WorldState) -> int:
        return self.actions[state.step] if state.step < len(self.actions) else self._coast


def load_policy(checkpoint: CheckpointLike, policy_id: Optional[str] = None) -> GreedyQPolicy:
    if isinstance(checkpoint, QNetwork):
        return GreedyQPolicy(checkpoint, policy_id or "q-network")
    ckpt = load_checkpoint(checkpoint)
    return GreedyQPolicy(ckpt.network, policy_id or str(checkpoint), ckpt.gamma)


@dataclass
class EpisodeRecord:
    states: List[WorldState]
    rewards: List[float]
    outcome: Outcome
    q_max: List[float] = field(default_factory=list)

    @property
    def speeds(self) -> np.ndarray:
        return np.array([w.ego_speed for w in self.states])


def run_episode(policy: Policy, cfg: EnvConfig, rng: Optional[np.random.Generator] = None) -> EpisodeRecord:
    w = reset(cfg, rng)
    states, rewards, q_max = [w], [], []
    while not w.terminal:
        obs = observe(w, cfg)
        if isinstance(policy, GreedyQPolicy):
            q = policy.q_values(obs)
            q_max.append(float(q.max()))
            a = int(np.argmax(q))
        else:
            a = policy.action(obs, w)
        result = step(w, a, cfg)
        w = result.next
        states.append(w)
        rewards.append(result.reward)
    return EpisodeRecord(states=states, rewards=rewards, outcome=w.outcome, q_max=q_max)


def evaluate_policy(policy: Policy, cfg: EnvConfig, episodes: int = 1, seed: int = 0,
                    gamma: float = 0.99,
                    references: Optional[Mapping[str, ReferenceDistribution]] = None,
                    shaping: Optional[ShapingParams] = None) -> EvalReport:
    if episodes < 1:
        raise ValueError(f"episodes must be at least 1, got {episodes}")
    shaping = shaping or ShapingParams()
    rng = np.random.default_rng(seed)
    records = [run_episode(policy, cfg, rng) for _ in range(episodes)]

    returns = np.array([sum(r.rewards) for r in records])
    outcomes = [r.outcome.value for r in records]
    counts = Counter(outcomes)

    ref_metrics: Dict[str, float] = {}
    for name, ref in (references or {}).items():
        if ref.empty:
            logger.warning(f"Reference {name} is empty, metric not reported")
            continue
        values = [
            metric(histogram(r.speeds, shaping.histogram_bins, shaping.feature_max), ref.histogram)
            for r in records
        ]
        ref_metrics[name] = float(np.mean(values))

    report = EvalReport(
        policy_id=policy.policy_id,
        episodes=episodes,
        mean_return=float(returns.mean()),
        min_return=float(returns.min()),
        max_return=float(returns.max()),
        mean_discounted_return=float(np.mean([discounted_return(r.rewards, gamma) for r in records])),
        collision_rate=safe_divide(counts[Outcome.COLLISION.value], episodes),
        goal_rate=safe_divide(counts[Outcome.GOAL.value], episodes),
        timeout_rate=safe_divide(counts[Outcome.TIMEOUT.value], episodes),
        mean_length=float(np.mean([len(r.rewards) for r in records])),
        min_clearance=min(min_clearance(w, cfg) for r in records for w in r.states[1:]),
        reference_metrics=ref_metrics,
        crossing_classes=dict(Counter(crossing_class(r.states, cfg) for r in records)),
        outcomes=outcomes,
    )
    logger.info(
        f"Evaluated {policy.policy_id} over {episodes} episodes: mean return {report.mean_return:.3f}, "
        f"collision rate {report.collision_rate:.2f}"
    )
    return report


def evaluate(checkpoint: CheckpointLike, cfg: EnvConfig, episodes: int = 1, seed: int = 0,
             references: Optional[Mapping[str, ReferenceDistribution]] = None) -> EvalReport:
    policy = load_policy(checkpoint)
    return evaluate_policy(policy, cfg, episodes, seed, policy.gamma, references)


def policy_distribution(policy: Policy, cfg: EnvConfig, episodes: int = 1, seed: int = 0,
                        shaping: Optional[ShapingParams] = None) -> ReferenceDistribution:
    """Pooled speed histogram of a policy's greedy episodes"""
    shaping = shaping or ShapingParams()
    rng = np.random.default_rng(seed)
    return ReferenceDistribution.from_episodes(
        (run_episode(policy, cfg, rng).speeds for _ in range(episodes)),
        shaping.histogram_bins, shaping.feature_max, limit=max(episodes, 1),
    )


@dataclass
class QLandscape:
    """Mean greedy Q-value per (step, speed bin); NaN marks cells never visited"""
    mean_q: np.ndarray
    visits: np.ndarray
    speed_edges: np.ndarray
    outcomes: List[str]

    @property
    def present(self) -> np.ndarray:
        return self.visits > 0

    @property
    def speed_centers(self) -> np.ndarray:
        return 0.5 * (self.speed_edges[:-1] + self.speed_edges[1:])

    def centroid_speed(self) -> float:
        """Visit-weighted mean speed of the visited cells"""
        per_bin = self.visits.sum(axis=0)
        return safe_divide(float(per_bin @ self.speed_centers), float(per_bin.sum()), math.nan)

    def to_frame(self) -> pd.DataFrame:
        t_idx, v_idx = np.nonzero(self.present)
        return pd.DataFrame({
            "step": t_idx,
            "speed_lo": self.speed_edges[v_idx],
            "speed_hi": self.speed_edges[v_idx + 1],
            "mean_q": self.mean_q[t_idx, v_idx],
            "visits": self.visits[t_idx, v_idx],
        })


def qlandscape(checkpoints: Union[CheckpointLike, Sequence[CheckpointLike]], cfg: EnvConfig,
               n_traj: int = 10, seed: int = 0) -> QLandscape:
    """Pools ``n_traj`` greedy rollouts, cycling over the given checkpoints"""
    if n_traj < 1:
        raise ValueError(f"n_traj must be at least 1, got {n_traj}")
    if isinstance(checkpoints, (str, Path, QNetwork)):
        checkpoints = [checkpoints]
    policies = [load_policy(c) for c in checkpoints]
    if not policies:
        raise ValueError("need at least one checkpoint")

    n_bins = max(1, math.ceil(cfg.ego_speed_max / SPEED_BIN_WIDTH))
    edges = np.arange(n_bins + 1) * SPEED_BIN_WIDTH
    sums = np.zeros((cfg.max_steps, n_bins))
    visits = np.zeros((cfg.max_steps, n_bins), dtype=np.int64)
    rng = np.random.default_rng(seed)
    outcomes = []

    for i in range(n_traj):
        record = run_episode(policies[i % len(policies)], cfg, rng)
        outcomes.append(record.outcome.value)
        for w, q in zip(record.states, record.q_max):
            b = min(int(w.ego_speed // SPEED_BIN_WIDTH), n_bins - 1)
            sums[w.step, b] += q
            visits[w.step, b] += 1

    with np.errstate(invalid="ignore", divide="ignore"):
        mean_q = np.where(visits > 0, sums / visits, np.nan)
    return QLandscape(mean_q=mean_q, visits=visits, speed_edges=edges, outcomes=outcomes)


def perturbation_compare(ckpt_opt: CheckpointLike, ckpt_sub: CheckpointLike, cfg: EnvConfig,
                         factor: float = 1.5, target: int = 1, episodes: int = 1,
                         seed: int = 0) -> PerturbationComparison:
    optimal = load_policy(ckpt_opt, "optimal")
    fallback = load_policy(ckpt_sub, "fallback")
    perturbed = perturb(cfg, target, factor)
    return PerturbationComparison(
        target=target,
        factor=factor,
        optimal_base=evaluate_policy(optimal, cfg, episodes, seed, optimal.gamma),
        optimal_perturbed=evaluate_policy(optimal, perturbed, episodes, seed, optimal.gamma),
        fallback_base=evaluate_policy(fallback, cfg, episodes, seed, fallback.gamma),
        fallback_perturbed=evaluate_policy(fallback, perturbed, episodes, seed, fallback.gamma),
    )


def certify_fallback(optimal: EvalReport, fallback: EvalReport, metric_value: float,
                     shaping: ShapingParams, epsilon: float,
                     pseudo_terms: Sequence[float] = ()) -> FallbackCertificate:
    gap = optimal.mean_discounted_return - fallback.mean_discounted_return
    return FallbackCertificate(
        valid=fallback.goal_rate == 1.0,
        suboptimal=is_suboptimal(optimal.mean_discounted_return, fallback.mean_discounted_return, epsilon),
        adjusted_suboptimal=satisfies_adjusted_value(
            optimal.mean_discounted_return, fallback.mean_discounted_return, epsilon, pseudo_terms
        ),
        sufficiently_different=sufficiently_different(metric_value, shaping.difference_threshold),
        metric=metric_value,
        value_gap=gap,
        epsilon=epsilon,
        difference_threshold=shaping.difference_threshold,
    )


def final_metrics(artifacts: RunArtifacts, agent_id: int = 1, reference_id: int = 0,
                  window: int = SMOOTHING_WINDOW) -> Tuple[Optional[float], Optional[float]]:
    """(mean per-episode metric, pooled metric) of ``agent_id`` vs ``reference_id`` over the last episodes"""
    agent = artifacts.agents[agent_id]
    recent = [
        log.reference_metrics.get(reference_id) for log in agent.logs[-window:]
    ]
    recent = [m for m in recent if m is not None]
    per_episode = float(np.mean(recent)) if recent else None

    own = reference_distribution(agent, agent.shaping)
    ref = reference_distribution(artifacts.agents[reference_id], agent.shaping)
    pooled = None if own.empty or ref.empty else metric(own.histogram, ref.histogram)
    return per_episode, pooled


def alpha_sweep(base: TrainConfig, alphas: Sequence[float] = DEFAULT_ALPHAS,
                eval_episodes: int = 1, sweep_dir: Optional[Path] = None) -> SweepResult:
    """Trains the optimal/pseudo pair from scratch per alpha, seeds held fixed"""
    if not alphas:
        raise ValueError("alpha list must not be empty")
    values = sorted({float(a) for a in alphas})
    seeds = base.run.seeds if base.run.seeds is not None and len(base.run.seeds) == 2 else None
    pair = base.model_copy(update={"run": base.run.model_copy(update={"pseudo_agents": 1, "seeds": seeds})})
    root = Path(sweep_dir) if sweep_dir is not None else resolve_output_path(f"{base.run.output_dir}-alpha-sweep")

    rows = []
    for alpha in values:
        run_dir = root / sanitize_filename(f"alpha-{alpha:g}")
        try:
            artifacts = run_training(pair.with_alpha(alpha), run_dir)
            per_episode, pooled = final_metrics(artifacts)
            report = evaluate_policy(
                GreedyQPolicy(artifacts.agents[1].learner.online, f"alpha-{alpha:g}"),
                pair.environment, eval_episodes, base.run.base_seed, base.learner.gamma,
            )
            rows.append(SweepRow(
                alpha=alpha,
                mean_metric_episodes=per_episode,
                mean_metric_pooled=pooled,
                eval_return=report.mean_return,
                eval_collision_rate=report.collision_rate,
                run_dir=str(run_dir),
            ))
            logger.info(f"Sweep alpha={alpha:g}: M episodes={per_episode}, M pooled={pooled}")
        except Exception as e:
            logger.error(f"Sweep alpha={alpha:g} failed: {e}")
            rows.append(SweepRow(alpha=alpha, run_dir=str(run_dir), error=str(e)))

    result = SweepResult(rows=rows)
    root.mkdir(parents=True, exist_ok=True)
    pd.DataFrame([row.model_dump() for row in rows]).to_csv(root / "sweep.csv", index=False)
    return result


def read_episode_log(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def curve_frame(log: pd.DataFrame, window: int = SMOOTHING_WINDOW) -> pd.DataFrame:
    columns = {
        "global_step": log["global_step"],
        "base_return_smoothed": log["base_return"].rolling(window, min_periods=1).mean(),
    }
    for name in log.columns:
        if name.startswith(("metric_ref", "r_sub_ref")) or name == "comparison_r_sub":
            columns[name] = log[name]
    columns["epsilon"] = log["epsilon"]
    return pd.DataFrame(columns)


def export_curves(run_dir: Union[str, Path], window: int = SMOOTHING_WINDOW) -> Dict[int, Path]:
    """Writes <run>/<agent>/curves.csv for every agent of the run"""
    run_dir = Path(run_dir)
    config_path = run_dir / "config.toml"
    if config_path.exists():
        agent_ids = list(range(load_train_config(config_path).n_agents))
    else:
        agent_ids = sorted(int(p.name) for p in run_dir.iterdir() if p.is_dir() and p.name.isdigit())

    exported: Dict[int, Path] = {}
    missing = []
    for agent_id in agent_ids:
        log_path = run_dir / str(agent_id) / "episodes.csv"
        if not log_path.exists():
            logger.error(f"Agent {agent_id}: episode log missing at {log_path}")
            missing.append(agent_id)
            continue
        out = run_dir / str(agent_id) / "curves.csv"
        curve_frame(read_episode_log(log_path), window).to_csv(out, index=False)
        exported[agent_id] = out
    if not exported:
        raise FileNotFoundError(f"no episode logs under {run_dir} (missing agents: {missing})")
    return exported
