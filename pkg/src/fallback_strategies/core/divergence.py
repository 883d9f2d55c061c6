"""
Trajectory divergence: speed feature map, feature histograms, the integrated
absolute density difference between trajectories, and the pseudo-reward
built on it.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from ..models.schemas import ShapingParams
from .mdp import EpisodeOutcome, Outcome, Snapshot, Trajectory

logger = logging.getLogger("fallback-strategies")


def phi(snapshot: Snapshot) -> float:
    """Feature of a state: the ego speed (m/s)"""
    return float(snapshot.speed)


def phi_trajectory(traj: Trajectory) -> np.ndarray:
    return traj.speed_array()


@dataclass(frozen=True)
class FeatureHistogram:
    counts: np.ndarray
    feature_max: float

    @property
    def bins(self) -> int:
        return len(self.counts)

    @property
    def bin_width(self) -> float:
        return self.feature_max / self.bins

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def empty(self) -> bool:
        return self.total == 0

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, self.feature_max, self.bins + 1)

    @property
    def density(self) -> np.ndarray:
        if self.empty:
            raise ValueError("density of an empty histogram is undefined")
        return self.counts / (self.total * self.bin_width)

    def same_binning(self, other: "FeatureHistogram") -> bool:
        return self.bins == other.bins and self.feature_max == other.feature_max

    def to_frame(self) -> pd.DataFrame:
        edges = self.edges
        density = np.zeros(self.bins) if self.empty else self.density
        return pd.DataFrame({
            "bin_lo": edges[:-1],
            "bin_hi": edges[1:],
            "count": self.counts,
            "density": density,
        })

    def export_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path


def histogram(features: Sequence[float], bins: int = 30, feature_max: float = 30.0) -> FeatureHistogram:
    """Counts over half-open bins [lo, hi) on [0, feature_max], the top bin closed; values clamped"""
    values = np.clip(np.asarray(features, dtype=np.float64), 0.0, feature_max)
    counts, _ = np.histogram(values, bins=bins, range=(0.0, feature_max))
    return FeatureHistogram(counts=counts.astype(np.int64), feature_max=float(feature_max))


def metric(h1: FeatureHistogram, h2: FeatureHistogram) -> float:
    """Integrated absolute density difference, in [0, 2]"""
    if not h1.same_binning(h2):
        raise ValueError(
            f"histograms have different binning ({h1.bins} bins over [0, {h1.feature_max}] "
            f"vs {h2.bins} bins over [0, {h2.feature_max}])"
        )
    if h1.empty or h2.empty:
        raise ValueError("metric is undefined for an empty histogram")
    return float(np.sum(np.abs(h1.density - h2.density)) * h1.bin_width)


def pseudo_reward(m: float, params: ShapingParams) -> float:
    if m < 0:
        raise ValueError(f"metric must be non-negative, got {m}")
    if params.alpha == 0:
        return 0.0
    return -params.alpha / (m + params.delta)


@dataclass(frozen=True)
class ReferenceDistribution:
    """Pooled histogram of a reference agent's recent episodes"""
    histogram: FeatureHistogram
    episodes: int

    @property
    def empty(self) -> bool:
        return self.episodes == 0 or self.histogram.empty

    @classmethod
    def from_episodes(cls, episodes: Iterable[Sequence[float]], bins: int = 30,
                      feature_max: float = 30.0, limit: int = 100) -> "ReferenceDistribution":
        episodes = list(episodes)[-limit:]
        counts = np.zeros(bins, dtype=np.int64)
        for features in episodes:
            counts += histogram(features, bins, feature_max).counts
        return cls(FeatureHistogram(counts=counts, feature_max=float(feature_max)), len(episodes))


@dataclass(frozen=True)
class ShapingTerm:
    metric: Optional[float]
    reward: float
    skipped: bool = False


def shaping_terms(traj: Union[Trajectory, Sequence[float]], refs: Sequence[ReferenceDistribution],
                  params: ShapingParams) -> List[ShapingTerm]:
    features = phi_trajectory(traj) if isinstance(traj, Trajectory) else np.asarray(traj, dtype=np.float64)
    if len(features) == 0:
        raise ValueError("cannot shape an empty trajectory")
    own = histogram(features, params.histogram_bins, params.feature_max)
    terms = []
    for i, ref in enumerate(refs):
        if ref.empty:
            logger.warning(f"Reference {i} has no pooled episodes, shaping term skipped")
            terms.append(ShapingTerm(metric=None, reward=0.0, skipped=True))
            continue
        m = metric(own, ref.histogram)
        terms.append(ShapingTerm(metric=m, reward=pseudo_reward(m, params)))
    return terms


def shaping_total(traj: Union[Trajectory, Sequence[float]], refs: Sequence[ReferenceDistribution],
                  params: ShapingParams) -> float:
    return float(sum(term.reward for term in shaping_terms(traj, refs, params)))


def sufficiently_different(m: float, d: float) -> bool:
    if m < 0 or d < 0:
        raise ValueError(f"metric and threshold must be non-negative (m={m}, d={d})")
    return m >= d


def is_valid_strategy(outcome: EpisodeOutcome, g_min: Optional[float] = None) -> bool:
    """Goal reached without collision, or return above ``g_min`` when one is given"""
    if outcome.reason == Outcome.GOAL:
        return True
    return g_min is not None and outcome.undiscounted_return > g_min


def is_suboptimal(v_opt: float, v_sub: float, epsilon: float) -> bool:
    return v_opt - v_sub < epsilon


def satisfies_adjusted_value(v_opt: float, v_sub: float, epsilon: float,
                             pseudo_terms: Sequence[float]) -> bool:
    """Value gap below epsilon plus the sum of the pseudo-reward terms earned by the sub-optimal policy"""
    return v_opt - v_sub < epsilon + float(sum(pseudo_terms))
