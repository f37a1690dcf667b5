"""Full-node memory pool extended with confirmed-but-unselected tasks."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

from .chain import ZERO32, Block, Task, task_id
from .phases import Phase
from .ranking import NetworkStats, RankingParams, score_tasks

log = logging.getLogger(__name__)

SUBMISSION_PHASES = (Phase.P1, Phase.P2)


class Reject(Enum):
    DUPLICATE = "duplicate"
    INVALID = "invalid"
    PHASE = "phase"
    FULL = "full"


class MempoolError(Exception):
    pass


@dataclass
class Mempool:
    max_tasks: int = 256
    unconfirmed: dict = field(default_factory=dict)
    unselected: dict = field(default_factory=dict)
    transactions: list = field(default_factory=list)
    selected: set = field(default_factory=set)

    def submit_task(self, task: Task, now: float, phase: Phase):
        """Returns None on acceptance, otherwise a Reject reason."""
        if not task.is_valid():
            return Reject.INVALID
        tid = task_id(task)
        if tid in self.unconfirmed or tid in self.unselected or tid in self.selected:
            return Reject.DUPLICATE
        if phase not in SUBMISSION_PHASES:
            return Reject.PHASE
        if len(self.unconfirmed) + len(self.unselected) >= self.max_tasks:
            return Reject.FULL
        self.unconfirmed[tid] = task
        log.debug("task %s pooled at t=%.2f", tid.hex()[:8], now)
        return None

    def add_transaction(self, payload: bytes, phase: Phase) -> bool:
        if phase is Phase.P3:
            return False
        self.transactions.append(bytes(payload))
        return True

    def pending_block_body(self):
        """Confirmed tasks and transactions for the block being built now."""
        return tuple(self.unconfirmed.values()), tuple(self.transactions)

    def confirm_tasks(self, block: Block) -> None:
        incoming = {}
        for t in block.confirmed_tasks:
            tid = task_id(t)
            if tid not in self.unconfirmed:
                raise MempoolError(f"block confirms unknown task {tid.hex()[:12]}")
            incoming[tid] = t
        sel = block.header.selected_task
        if sel != ZERO32 and sel not in self.unselected and sel not in incoming:
            raise MempoolError(f"selected task {sel.hex()[:12]} not in pool")
        for tid, t in incoming.items():
            del self.unconfirmed[tid]
            self.unselected[tid] = t
        if sel != ZERO32:
            del self.unselected[sel]
            self.selected.add(sel)
        n = len(block.transactions)
        if self.transactions[:n] == list(block.transactions):
            del self.transactions[:n]
        else:
            included = set(block.transactions)
            self.transactions = [t for t in self.transactions if t not in included]

    def snapshot(self, params: RankingParams, stats: NetworkStats) -> list:
        return score_tasks(self.unselected.values(), params, stats)

    def fingerprint(self) -> tuple:
        """Comparable view of the pool for cross-node consistency checks."""
        return (tuple(self.unconfirmed), tuple(sorted(self.unselected)), tuple(self.transactions),
                tuple(sorted(self.selected)))
