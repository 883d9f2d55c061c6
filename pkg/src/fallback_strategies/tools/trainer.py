"""
Round-robin training of the optimal agent and its pseudo-agents.

Agent 0 learns from the raw step rewards. Agent i > 0 receives, on the final
transition of every episode, the sum of pseudo-rewards measuring how close its
trajectory is to the recent episodes of each agent j < i.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..core.divergence import ReferenceDistribution, phi_trajectory, shaping_terms
from ..core.intersection_env import IntersectionEnv
from ..core.mdp import ReplayBuffer, Trajectory, Transition
from ..core.neural_q import DoubleDQNLearner, NonFiniteLossError, save_checkpoint
from ..models.results import EpisodeLog
from ..models.schemas import ShapingParams, TrainConfig
from ..utils.config_io import save_train_config
from ..utils.helpers import format_duration, resolve_output_path

logger = logging.getLogger("fallback-strategies")

SMOOTHING_WINDOW = 100


class TrainingDivergedError(RuntimeError):
    def __init__(self, agent_id: int, episode: int, detail: str):
        super().__init__(f"agent {agent_id}, episode {episode}: {detail}")
        self.agent_id = agent_id
        self.episode = episode


@dataclass
class AgentSlot:
    agent_id: int
    learner: DoubleDQNLearner
    buffer: ReplayBuffer
    references: Tuple[int, ...]
    shaping: ShapingParams
    env: IntersectionEnv
    rng: np.random.Generator
    episodes: int = 0
    logs: List[EpisodeLog] = field(default_factory=list)

    @property
    def env_steps(self) -> int:
        return self.learner.env_steps


@dataclass(frozen=True)
class ReferenceTerm:
    ref_id: int
    metric: Optional[float]
    reward: float
    skipped: bool = False


@dataclass
class RunArtifacts:
    run_dir: Path
    episode_logs: Dict[int, Path]
    merged_log: Path
    checkpoints: Dict[int, List[Path]]
    rounds: int
    reference_computations: List[int]
    agents: List[AgentSlot]

    def final_checkpoint(self, agent_id: int) -> Path:
        return self.checkpoints[agent_id][-1]


def build_agents(cfg: TrainConfig) -> List[AgentSlot]:
    agents = []
    for agent_id in range(cfg.n_agents):
        seeds = cfg.seeds_for(agent_id)
        # the optimal agent never shapes its own rewards
        shaping = cfg.shaping if agent_id else cfg.shaping.model_copy(update={"alpha": 0.0})
        agents.append(AgentSlot(
            agent_id=agent_id,
            learner=DoubleDQNLearner(cfg.learner, np.random.default_rng(seeds.network)),
            buffer=ReplayBuffer(cfg.learner.replay_capacity, cfg.learner.feature_episodes),
            references=tuple(range(agent_id)),
            shaping=shaping,
            env=IntersectionEnv(cfg.environment, np.random.default_rng(seeds.env)),
            rng=np.random.default_rng(seeds.exploration),
        ))
    return agents


def reference_distribution(slot: AgentSlot, params: ShapingParams) -> ReferenceDistribution:
    return ReferenceDistribution.from_episodes(
        slot.buffer.episode_features(), params.histogram_bins, params.feature_max,
        limit=slot.buffer.episode_capacity,
    )


def reference_metrics(agent: AgentSlot, traj: Trajectory, all_agents: Sequence[AgentSlot]) -> List[ReferenceTerm]:
    """One (metric, pseudo-reward) entry per reference agent of ``agent``"""
    for ref_id in agent.references:
        if not 0 <= ref_id < agent.agent_id or ref_id >= len(all_agents):
            raise ValueError(f"agent {agent.agent_id} cannot reference agent {ref_id}")
    refs = [reference_distribution(all_agents[ref_id], agent.shaping) for ref_id in agent.references]
    terms = shaping_terms(traj, refs, agent.shaping)
    return [
        ReferenceTerm(ref_id, term.metric, term.reward, term.skipped)
        for ref_id, term in zip(agent.references, terms)
    ]


def comparison_shaping(agent0: AgentSlot, traj: Trajectory, all_agents: Sequence[AgentSlot],
                       params: ShapingParams) -> Optional[float]:
    """Pseudo-reward of the optimal agent against its own pool; logged only"""
    if agent0.agent_id != 0 or all_agents[0] is not agent0:
        raise ValueError("comparison shaping applies to agent 0 only")
    (term,) = shaping_terms(traj, [reference_distribution(agent0, params)], params)
    return None if term.skipped else term.reward


class FallbackTrainer:
    """Plays one episode per agent per round until every agent used its step budget"""

    def __init__(self, cfg: TrainConfig, run_dir: Optional[Path] = None):
        self.cfg = cfg
        self.run_dir = Path(run_dir) if run_dir is not None else resolve_output_path(cfg.run.output_dir)
        self.agents = build_agents(cfg)
        self.rounds = 0
        self.reference_computations: List[int] = []
        self.checkpoints: Dict[int, List[Path]] = {a.agent_id: [] for a in self.agents}

        alpha = cfg.run.comparison_alpha if cfg.run.comparison_alpha is not None else cfg.shaping.alpha
        self.comparison_params = cfg.shaping.model_copy(update={"alpha": alpha})

    def run(self) -> RunArtifacts:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        save_train_config(self.cfg, self.run_dir / "config.toml")
        total = self.cfg.run.total_steps
        logger.info(
            f"Training {len(self.agents)} agents for {total} steps each, output {self.run_dir}"
        )

        started = time.perf_counter()
        while min(agent.env_steps for agent in self.agents) < total:
            computations = 0
            for agent in self.agents:
                _, n_terms = self.play_episode(agent)
                computations += n_terms
            self.reference_computations.append(computations)
            self.rounds += 1

        for agent in self.agents:
            self._checkpoint(agent)
        log_paths, merged = self.write_logs()
        logger.info(
            f"Training finished after {self.rounds} rounds in {format_duration(time.perf_counter() - started)}"
        )
        return RunArtifacts(
            run_dir=self.run_dir,
            episode_logs=log_paths,
            merged_log=merged,
            checkpoints=self.checkpoints,
            rounds=self.rounds,
            reference_computations=self.reference_computations,
            agents=self.agents,
        )

    def play_episode(self, agent: AgentSlot) -> Tuple[EpisodeLog, int]:
        learner = agent.learner
        obs = agent.env.reset()
        transitions: List[Transition] = []
        rewards: List[float] = []
        done = False

        while not done:
            action = learner.act(obs, agent.rng)
            next_obs, reward, done, outcome = agent.env.step(action)
            if not math.isfinite(reward):
                raise TrainingDivergedError(agent.agent_id, agent.episodes, f"non-finite reward {reward}")
            transitions.append(Transition(obs, action.index, reward, next_obs, done))
            rewards.append(reward)
            learner.env_steps += 1

            # only transitions of finished episodes are in the buffer
            if len(agent.buffer) >= learner.warmup:
                batch = agent.buffer.sample_minibatch(learner.batch_size, agent.rng)
                try:
                    learner.train_step(batch)
                except NonFiniteLossError as e:
                    raise TrainingDivergedError(agent.agent_id, agent.episodes, str(e)) from e
            if learner.env_steps % self.cfg.run.checkpoint_every == 0:
                self._checkpoint(agent)
            obs = next_obs

        traj = agent.env.trajectory
        terms = reference_metrics(agent, traj, self.agents)
        pseudo = float(sum(term.reward for term in terms))
        if not math.isfinite(pseudo):
            raise TrainingDivergedError(agent.agent_id, agent.episodes, f"non-finite pseudo-reward {pseudo}")
        if terms:
            transitions[-1] = transitions[-1].with_pseudo_reward(pseudo)

        comparison = None
        if agent.agent_id == 0 and self.cfg.run.comparison_logging:
            comparison = comparison_shaping(agent, traj, self.agents, self.comparison_params)

        for t in transitions:
            agent.buffer.push(t)
        agent.buffer.push_episode_features(phi_trajectory(traj))

        base_return = float(sum(rewards))
        log = EpisodeLog(
            agent_id=agent.agent_id,
            episode=agent.episodes,
            global_step=learner.env_steps,
            base_return=base_return,
            shaped_return=base_return + pseudo,
            pseudo_total=pseudo,
            length=len(rewards),
            outcome=outcome.value,
            epsilon=learner.epsilon,
            reference_metrics={t.ref_id: t.metric for t in terms},
            reference_rewards={t.ref_id: t.reward for t in terms},
            comparison_reward=comparison,
        )
        agent.logs.append(log)
        agent.episodes += 1

        if agent.episodes % self.cfg.run.log_every == 0:
            recent = [entry.base_return for entry in agent.logs[-SMOOTHING_WINDOW:]]
            metrics = ", ".join(
                f"M_{t.ref_id}={t.metric:.3f}" if t.metric is not None else f"M_{t.ref_id}=n/a" for t in terms
            )
            logger.info(
                f"Agent {agent.agent_id} episode {agent.episodes} step {learner.env_steps}: "
                f"mean return {np.mean(recent):.3f}, eps {learner.epsilon:.3f}"
                + (f", {metrics}" if metrics else "")
            )
        return log, len(terms)

    def _checkpoint(self, agent: AgentSlot) -> None:
        path = self.run_dir / str(agent.agent_id) / f"step-{agent.env_steps}.ckpt"
        if self.checkpoints[agent.agent_id] and self.checkpoints[agent.agent_id][-1] == path:
            return
        save_checkpoint(path, agent.learner.online, agent.learner.gamma, agent.env_steps)
        self.checkpoints[agent.agent_id].append(path)
        logger.debug(f"Saved checkpoint {path}")

    def write_logs(self) -> Tuple[Dict[int, Path], Path]:
        paths: Dict[int, Path] = {}
        frames = []
        for agent in self.agents:
            frame = episode_frame(agent.logs)
            path = self.run_dir / str(agent.agent_id) / "episodes.csv"
            path.parent.mkdir(parents=True, exist_ok=True)
            frame.to_csv(path, index=False)
            paths[agent.agent_id] = path
            frames.append(frame)
        merged = pd.concat(frames, ignore_index=True).sort_values(["episode", "agent_id"], kind="stable")
        merged_path = self.run_dir / "episodes.csv"
        merged.to_csv(merged_path, index=False)
        return paths, merged_path


def episode_frame(logs: Sequence[EpisodeLog]) -> pd.DataFrame:
    return pd.DataFrame([log.to_row() for log in logs])


def run_training(cfg: TrainConfig, run_dir: Optional[Path] = None) -> RunArtifacts:
    return FallbackTrainer(cfg, run_dir).run()
