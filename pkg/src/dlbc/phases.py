"""Block interval timing: three phases per block, half-open boundaries."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class Phase(Enum):
    P1 = 1  # task submission, data download
    P2 = 2  # training, commitments due before it ends
    P3 = 3  # test release, candidate validation


@dataclass(frozen=True)
class PhaseSchedule:
    """Absolute times for one block interval."""

    t_a: float
    t_b: float
    t_c: float
    t_next_a: float

    def __post_init__(self):
        if not (self.t_a < self.t_b < self.t_c < self.t_next_a):
            raise ValueError("phase boundaries must be increasing")
        p1, p2, p3 = self.t_b - self.t_a, self.t_c - self.t_b, self.t_next_a - self.t_c
        if not (p2 > p1 and p2 > p3):
            raise ValueError("the training phase must be the longest")


@dataclass(frozen=True)
class Timing:
    """Protocol-wide phase durations. Block h occupies [(h-1)*I, h*I)."""

    p1: float = 10.0
    p2: float = 100.0
    p3: float = 20.0

    def __post_init__(self):
        PhaseSchedule(0.0, self.p1, self.p1 + self.p2, self.interval_length)

    @property
    def interval_length(self) -> float:
        return self.p1 + self.p2 + self.p3

    def interval(self, height: int) -> PhaseSchedule:
        if height < 1:
            raise ValueError("genesis has no mining interval")
        t_a = (height - 1) * self.interval_length
        return PhaseSchedule(t_a, t_a + self.p1, t_a + self.p1 + self.p2, height * self.interval_length)

    def height_at(self, now: float) -> int:
        return int(now // self.interval_length) + 1


def phase_of(now: float, schedule: PhaseSchedule) -> Phase:
    if now < schedule.t_a or now >= schedule.t_next_a:
        raise ValueError(f"time {now} outside interval [{schedule.t_a}, {schedule.t_next_a})")
    if now < schedule.t_b:
        return Phase.P1
    if now < schedule.t_c:
        return Phase.P2
    return Phase.P3
