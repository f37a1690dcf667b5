"""Task economics: queue index, difficulties, ranking score and reward split.

Lower ranking score is better. Every node must pick the same task, so
ties are broken by higher reward and then by task id bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .chain import Task, task_id

__all__ = [
    "RankingParams", "NetworkStats", "ScoredTask", "queue_index", "network_difficulty",
    "compute_difficulty", "ranking_score", "reward_split", "score_tasks", "select_task",
]


@dataclass(frozen=True)
class RankingParams:
    k: float
    L: int

    def __post_init__(self):
        if not (self.k > 0 and math.isfinite(self.k)):
            raise ValueError("k must be positive")
        if int(self.L) != self.L or self.L < 2:
            raise ValueError("L must be an integer >= 2")


@dataclass(frozen=True)
class NetworkStats:
    median_bandwidth: float  # bytes/s
    median_compute: float  # FLOP/s

    def __post_init__(self):
        if not (self.median_bandwidth > 0 and self.median_compute > 0):
            raise ValueError("network stats must be positive")


@dataclass(frozen=True)
class ScoredTask:
    task: bytes
    reward: int
    d_n: float
    d_c: float
    q: float
    score: float

    def sort_key(self):
        return (self.score, -self.reward, self.task)


def queue_index(params: RankingParams, l: int) -> float:
    if l < 1:
        raise ValueError("queue length must be a positive integer")
    return math.log(params.k * l) / math.log(params.L)


def network_difficulty(task: Task, stats: NetworkStats) -> float:
    return (task.model_size + task.data_size) / stats.median_bandwidth


def compute_difficulty(task: Task, stats: NetworkStats) -> float:
    return task.flops / stats.median_compute


def ranking_score(d_n: float, d_c: float, q: float, reward) -> float:
    if reward <= 0:
        raise ValueError("reward must be positive")
    if d_c < 0 or (d_c == 0 and q <= 0):
        raise ValueError("compute difficulty out of domain")
    return (d_n + d_c ** q) / reward


def reward_split(params: RankingParams, l: int) -> tuple:
    """(publisher_frac, miner_frac); the publisher share vanishes once k*l >= L."""
    if l < 1:
        raise ValueError("queue length must be a positive integer")
    pub = max(0.0, 1.0 - (params.k * l / params.L) ** 2)
    return pub, 1.0 - pub


def score_tasks(tasks, params: RankingParams, stats: NetworkStats) -> list:
    """Score every task with l = len(tasks) and return them best first."""
    tasks = list(tasks)
    if not tasks:
        return []
    q = queue_index(params, len(tasks))
    out = []
    for t in tasks:
        d_n = network_difficulty(t, stats)
        d_c = compute_difficulty(t, stats)
        out.append(ScoredTask(task_id(t), t.reward, d_n, d_c, q, ranking_score(d_n, d_c, q, t.reward)))
    out.sort(key=ScoredTask.sort_key)
    return out


def select_task(tasks, params: RankingParams, stats: NetworkStats):
    """Id of the task to train next, or None when there is nothing to train."""
    scored = score_tasks(tasks, params, stats)
    return scored[0].task if scored else None
