"""Block protocol: commitments, candidate validation, block acceptance,
fork choice and full-chain revalidation.

Validation returns the first failing clause as a short reason string so
callers (and tests) can tell attacks apart.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .chain import (ZERO32, Block, BlockHeader, Coinbase, MiningProof, ModelCommitment, SerializationError,
                    block_digest, body_digest, check_coinbase, commitment_digest, model_signature, sha256, task_id,
                    watermark_seed)
from .mempool import Mempool
from .phases import Phase, PhaseSchedule, Timing, phase_of
from .ranking import NetworkStats, RankingParams, reward_split, score_tasks, select_task
from .store import CorruptEntry, MissingEntry, Store, parse_link
from .toytrain import DataSpec, ModelSpec, evaluate_accuracy, replay_segment
from .watermark import detect, projection_from_block, watermark_from_block

log = logging.getLogger(__name__)

__all__ = [
    "Reason", "ProtocolParams", "Candidate", "ChainView", "NodeState", "ValidationResult", "make_genesis",
    "params_from_genesis", "record_commitment", "validate_candidate", "accept_block", "fork_choice",
    "confirmations", "validate_chain", "phase_of", "PhaseSchedule", "Phase",
]


class Reason(str, Enum):
    LINK = "link"
    STRUCTURE = "structure"
    DIGEST = "digest"
    TASK_LIST = "task_list"
    RANKING = "ranking"
    MISSING_MODEL = "missing_model"
    MODEL_SIGNATURE = "model_signature"
    COMMITMENT = "commitment"
    ACCURACY = "accuracy"
    WATERMARK = "watermark"
    CHECKPOINT = "checkpoint"

    def __str__(self):
        return self.value


# --- protocol parameters ----------------------------------------------------

@dataclass(frozen=True)
class ProtocolParams:
    ranking: RankingParams = RankingParams(1.0, 100)
    stats: NetworkStats = NetworkStats(1.0e6, 6.0e5)
    timing: Timing = Timing()
    wm_bits: int = 64
    wm_rows: int = 2
    lam: float = 0.1
    gain: float = 3000.0
    threshold: float = 0.9999
    fork_threshold: float = 0.85
    subsidy: float = 100.0
    max_tasks: int = 256

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "ProtocolParams":
        d = dict(d)
        return cls(ranking=RankingParams(**d.pop("ranking")), stats=NetworkStats(**d.pop("stats")),
                   timing=Timing(**d.pop("timing")), **d)

    def canonical(self) -> bytes:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":")).encode()

    def interval(self, height: int) -> PhaseSchedule:
        return self.timing.interval(height)


def ordered_ids(tasks, params: ProtocolParams) -> tuple:
    return tuple(s.task for s in score_tasks(tasks, params.ranking, params.stats))


def make_genesis(params: ProtocolParams, tasks=()) -> Block:
    tasks = tuple(tasks)
    txs = (params.canonical(),)
    cb = Coinbase(0.0, 1.0)
    header = BlockHeader(0, ZERO32, body_digest(txs, tasks, cb, None), 0.0, ZERO32, ZERO32,
                         ordered_ids(tasks, params), 0.0, ZERO32, "")
    return Block(header, txs, tasks, cb, None)


def params_from_genesis(block: Block) -> ProtocolParams:
    if block.height != 0 or not block.transactions:
        raise ValueError("not a genesis block")
    return ProtocolParams.from_json(json.loads(block.transactions[0]))


# --- candidates and chain views ---------------------------------------------

@dataclass(frozen=True)
class Candidate:
    miner_id: bytes
    task: bytes
    claimed_accuracy: float
    model_link: str
    proof: MiningProof


@dataclass
class ChainView:
    blocks: list

    def high_accuracy_count(self, threshold: float) -> int:
        return sum(1 for b in self.blocks[1:] if b.header.claimed_accuracy >= threshold)

    def cumulative_accuracy(self) -> float:
        return float(sum(b.header.claimed_accuracy for b in self.blocks[1:]))

    @property
    def tip(self) -> Block:
        return self.blocks[-1]


def fork_choice(chains, threshold: float):
    """Most blocks at or above threshold; ties by cumulative accuracy, then first seen."""
    chains = list(chains)
    if not chains:
        raise ValueError("fork_choice needs at least one chain")
    best = chains[0]
    for c in chains[1:]:
        if (c.high_accuracy_count(threshold), c.cumulative_accuracy()) > \
                (best.high_accuracy_count(threshold), best.cumulative_accuracy()):
            best = c
    return best


def confirmations(chain, block_index: int, threshold: float) -> int:
    blocks = chain.blocks if isinstance(chain, ChainView) else chain
    if not 0 <= block_index < len(blocks):
        raise IndexError(block_index)
    return sum(1 for b in blocks[block_index + 1:] if b.header.claimed_accuracy >= threshold)


# --- validation context -----------------------------------------------------

class Context:
    """What a validator needs besides the chain: params, task records, stores."""

    def __init__(self, params: ProtocolParams, store: Store, datasets: Optional[dict] = None):
        self.params = params
        self.store = store
        self.registry = {}
        self.datasets = {} if datasets is None else datasets

    def dataset(self, link: str):
        if link not in self.datasets:
            self.datasets[link] = DataSpec.parse(link).build()
        return self.datasets[link]

    def register(self, block: Block) -> None:
        for t in block.confirmed_tasks:
            self.registry[task_id(t)] = t


def spot_check_index(header_digest: bytes, segments: int) -> int:
    return int.from_bytes(sha256(header_digest, b"spot-check")[:8], "little") % segments


def expected_unselected(ctx: Context, prev: BlockHeader, selected: bytes, confirmed) -> tuple:
    keep = [ctx.registry[t] for t in prev.unselected_tasks if t != selected]
    return ordered_ids(keep + list(confirmed), ctx.params)


def _check_structure(ctx: Context, prev: Block, block: Block):
    h, p = block.header, ctx.params
    if h.height != prev.height + 1 or h.prev_digest != prev.digest:
        return Reason.LINK
    try:
        h.check()
    except SerializationError:
        return Reason.STRUCTURE
    if h.timestamp != h.height * p.timing.interval_length:
        return Reason.STRUCTURE
    if h.data_digest != body_digest(block.transactions, block.confirmed_tasks, block.coinbase, block.proof):
        return Reason.DIGEST
    seen = set()
    for t in block.confirmed_tasks:
        tid = task_id(t)
        if not t.is_valid() or tid in ctx.registry or tid in seen:
            return Reason.TASK_LIST
        seen.add(tid)
    if any(t not in ctx.registry for t in prev.header.unselected_tasks):
        return Reason.TASK_LIST
    if not check_coinbase(block.coinbase):
        return Reason.STRUCTURE
    if h.is_idle:
        idle_ok = (h.selected_task == ZERO32 and h.model_signature == ZERO32 and h.model_link == ""
                   and h.claimed_accuracy == 0.0 and block.proof is None and block.coinbase == Coinbase(0.0, 1.0))
        if not idle_ok:
            return Reason.STRUCTURE
    else:
        l = len(prev.header.unselected_tasks)
        if block.proof is None or l == 0 or block.coinbase != Coinbase(*reward_split(p.ranking, l)):
            return Reason.STRUCTURE
        want = select_task([ctx.registry[t] for t in prev.header.unselected_tasks], p.ranking, p.stats)
        if h.selected_task != want:
            return Reason.RANKING
    if h.unselected_tasks != expected_unselected(ctx, prev.header, h.selected_task, block.confirmed_tasks):
        return Reason.TASK_LIST
    return None


def _load_model(ctx: Context, link: str):
    """(checkpoint, reason): the winner model behind a header's link."""
    try:
        digest = parse_link(link)
    except ValueError:
        return None, Reason.STRUCTURE
    try:
        return ctx.store.get(digest), None
    except MissingEntry:
        return None, Reason.MISSING_MODEL
    except CorruptEntry:
        return None, Reason.MODEL_SIGNATURE


def _check_winner(ctx: Context, block: Block, commitments=None, test_api=None):
    h, p, proof = block.header, ctx.params, block.proof
    sched = p.interval(h.height)
    task = ctx.registry[h.selected_task]
    cp, reason = _load_model(ctx, h.model_link)
    if reason is not None:
        return reason
    weights = cp.weights
    if model_signature(weights, task.data_link, h.selected_task) != h.model_signature:
        return Reason.MODEL_SIGNATURE

    digest = commitment_digest(weights, h.winner_id, h.selected_task)
    if proof.commitment != digest or not sched.t_a <= proof.commit_time < sched.t_c:
        return Reason.COMMITMENT
    if commitments is not None:
        logged = commitments.get((h.winner_id, h.selected_task))
        if logged is None or logged.digest != digest or logged.commit_time != proof.commit_time:
            return Reason.COMMITMENT

    try:
        spec = ModelSpec.parse(task.model_link)
        data = ctx.dataset(task.data_link)
    except (ValueError, KeyError):
        return Reason.STRUCTURE
    arch = spec.trainer(0, p.lam).arch(data.d)
    if weights.size != arch.dim:
        return Reason.ACCURACY
    X, y = test_api(task) if test_api is not None else data.part("test")
    if evaluate_accuracy(weights, X, y, arch) != h.claimed_accuracy:
        return Reason.ACCURACY

    seed = watermark_seed(h.prev_digest, h.height, h.winner_id, h.selected_task)
    wm = watermark_from_block(seed, p.wm_bits, p.wm_rows)
    try:
        key = projection_from_block(seed, spec.carrier, p.wm_bits, p.gain)
    except ValueError:
        return Reason.WATERMARK
    if not detect(weights, wm, key, p.threshold)[1]:
        return Reason.WATERMARK

    cps = proof.checkpoints
    segments = len(cps) - 1
    if segments < 1 or segments > spec.epochs or cps[-1] != cp.digest or cp.epoch != segments:
        return Reason.CHECKPOINT
    j = spot_check_index(block_digest(h), segments)
    try:
        frm, to = ctx.store.get(cps[j]), ctx.store.get(cps[j + 1])
    except (MissingEntry, CorruptEntry):
        return Reason.CHECKPOINT
    if frm.epoch != j or to.epoch != j + 1:
        return Reason.CHECKPOINT
    if not replay_segment(frm, to, data, spec.trainer(proof.train_seed, p.lam), (wm, key)):
        return Reason.CHECKPOINT
    return None


def check_block(ctx: Context, prev: Block, block: Block, commitments=None, test_api=None):
    """First failing clause for `block` on top of `prev`, or None if valid."""
    reason = _check_structure(ctx, prev, block)
    if reason is None and not block.header.is_idle:
        reason = _check_winner(ctx, block, commitments, test_api)
    return reason


# --- node state -------------------------------------------------------------

@dataclass
class NodeState:
    """One full node's view: chain, pool, commitment log and stores."""

    ctx: Context
    chain: list
    mempool: Mempool
    commitments: dict = field(default_factory=dict)
    skew: float = 0.0

    @classmethod
    def from_genesis(cls, genesis: Block, store: Store, datasets=None, skew: float = 0.0) -> "NodeState":
        params = params_from_genesis(genesis)
        ctx = Context(params, store, datasets)
        ctx.register(genesis)
        pool = Mempool(max_tasks=params.max_tasks)
        pool.unselected.update(ctx.registry)
        return cls(ctx, [genesis], pool, skew=skew)

    @property
    def params(self) -> ProtocolParams:
        return self.ctx.params

    @property
    def height(self) -> int:
        """Height of the block currently being mined."""
        return len(self.chain)

    @property
    def schedule(self) -> PhaseSchedule:
        return self.params.interval(self.height)

    def local_time(self, now: float) -> float:
        return now + self.skew

    def local_phase(self, now: float) -> Phase:
        s = self.schedule
        t = min(max(self.local_time(now), s.t_a), np.nextafter(s.t_next_a, -np.inf))
        return phase_of(t, s)

    def expected_task(self):
        tip = self.chain[-1].header
        return select_task([self.ctx.registry[t] for t in tip.unselected_tasks],
                           self.params.ranking, self.params.stats)


def record_commitment(state: NodeState, commitment: ModelCommitment, now: float) -> Optional[str]:
    """None if logged; "late" or "duplicate" otherwise. Judged on the local clock."""
    sched = state.schedule
    if not state.local_time(now) < sched.t_c:
        return "late"
    key = (commitment.miner_id, commitment.task)
    if key in state.commitments:
        return "duplicate"
    state.commitments[key] = commitment
    return None


def build_block(state: NodeState, cand: Optional[Candidate], weights=None) -> Block:
    ctx, p = state.ctx, state.params
    prev = state.chain[-1]
    h = prev.height + 1
    confirmed, txs = state.mempool.pending_block_body()
    if cand is None:
        selected, sig, acc, winner, link, proof = ZERO32, ZERO32, 0.0, ZERO32, "", None
        cb = Coinbase(0.0, 1.0)
    else:
        selected, acc, winner, link, proof = cand.task, cand.claimed_accuracy, cand.miner_id, cand.model_link, cand.proof
        task = ctx.registry.get(selected)
        sig = model_signature(weights, task.data_link, selected) if task is not None else ZERO32
        cb = Coinbase(*reward_split(p.ranking, max(1, len(prev.header.unselected_tasks))))
    keep = [ctx.registry[t] for t in prev.header.unselected_tasks if t != selected]
    unselected = ordered_ids(keep + list(confirmed), p)
    header = BlockHeader(h, prev.digest, body_digest(txs, confirmed, cb, proof), h * p.timing.interval_length,
                         sig, selected, unselected, float(acc), winner, link)
    return Block(header, txs, confirmed, cb, proof)


def validate_candidate(state: NodeState, cand: Candidate, test_api=None):
    """(block, None) if the candidate is valid, else (block or None, reason)."""
    if not 0.0 <= cand.claimed_accuracy <= 1.0 or cand.task not in state.ctx.registry:
        return None, Reason.STRUCTURE
    cp, reason = _load_model(state.ctx, cand.model_link)
    if reason is not None:
        return None, reason
    block = build_block(state, cand, cp.weights)
    return block, check_block(state.ctx, state.chain[-1], block, state.commitments, test_api)


def _order(cands):
    return sorted(cands, key=lambda c: (-c.claimed_accuracy, c.miner_id, c.model_link))


def accept_block(state: NodeState, candidates, test_api=None, audit_all: bool = True):
    """Validate candidates best claim first and append the first valid one.

    Falls back to an idle block. With audit_all, candidates after the
    winner are still checked so every rejection gets a reason. Returns
    (block, [(miner_id, reason)]).
    """
    seen, unique = set(), []
    for c in _order(candidates):
        if (c.miner_id, c.task) not in seen:
            seen.add((c.miner_id, c.task))
            unique.append(c)
    winner, rejections = None, []
    for c in unique:
        if winner is not None and not audit_all:
            break
        block, reason = validate_candidate(state, c, test_api)
        if reason is not None:
            rejections.append((c.miner_id, str(reason)))
        elif winner is None:
            winner = block
    if winner is None:
        winner = build_block(state, None)
    for mid, reason in rejections:
        log.debug("height %d: rejected %s (%s)", winner.height, mid.hex()[:8], reason)
    append_block(state, winner)
    return winner, rejections


def append_block(state: NodeState, block: Block) -> None:
    state.mempool.confirm_tasks(block)
    state.ctx.register(block)
    state.chain.append(block)
    state.commitments.clear()


# --- full-chain revalidation ------------------------------------------------

@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    height: Optional[int] = None
    reason: Optional[str] = None

    def __str__(self):
        return "ok" if self.ok else f"fail height={self.height} reason={self.reason}"


def _check_genesis(ctx: Context, g: Block):
    h = g.header
    if h.height != 0 or h.prev_digest != ZERO32 or h.timestamp != 0.0:
        return Reason.LINK
    if not (h.is_idle and h.selected_task == ZERO32 and h.model_signature == ZERO32 and h.model_link == ""
            and h.claimed_accuracy == 0.0 and g.proof is None and g.coinbase == Coinbase(0.0, 1.0)):
        return Reason.STRUCTURE
    if h.data_digest != body_digest(g.transactions, g.confirmed_tasks, g.coinbase, g.proof):
        return Reason.DIGEST
    if h.unselected_tasks != ordered_ids(g.confirmed_tasks, ctx.params):
        return Reason.TASK_LIST
    if len({task_id(t) for t in g.confirmed_tasks}) != len(g.confirmed_tasks):
        return Reason.TASK_LIST
    return None


def validate_chain(blocks, store: Store, declared_digests=None, datasets=None) -> ValidationResult:
    """Replay a chain from genesis, stopping at the first invalid block.

    `blocks` entries may be None for lines that failed to parse; that
    height then fails with reason "link".
    """
    blocks = list(blocks)
    if not blocks or blocks[0] is None:
        return ValidationResult(False, 0, str(Reason.LINK))
    try:
        params = params_from_genesis(blocks[0])
    except (ValueError, KeyError, TypeError):
        return ValidationResult(False, 0, str(Reason.STRUCTURE))
    ctx = Context(params, store, datasets)
    for i, b in enumerate(blocks):
        if b is None:
            return ValidationResult(False, i, str(Reason.LINK))
        if declared_digests is not None and declared_digests[i] != b.digest:
            return ValidationResult(False, i, str(Reason.DIGEST))
        if i == 0:
            reason = _check_genesis(ctx, b)
        else:
            if b.height != i:
                return ValidationResult(False, i, str(Reason.LINK))
            reason = check_block(ctx, blocks[i - 1], b)
        if reason is not None:
            return ValidationResult(False, i, str(reason))
        ctx.register(b)
    return ValidationResult(True)


def load_dump(path):
    """Parse a JSON-lines chain dump into (blocks, declared digests).

    Unparseable lines become None so validation can report their height.
    """
    blocks, digests = [], []
    with open(path) as f:
        for line in f:
            try:
                d = json.loads(line)
                blocks.append(Block.from_json(d))
                digests.append(bytes.fromhex(d["digest"]))
            except (ValueError, KeyError, TypeError, SerializationError):
                blocks.append(None)
                digests.append(None)
    return blocks, digests
