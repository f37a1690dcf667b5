"""Blocks, headers, tasks and their canonical byte encodings.

Every encoding here is little-endian and length-prefixed, with fields in
declaration order, so digests are stable across runs and implementations.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

ZERO32 = bytes(32)


class SerializationError(ValueError):
    pass


def sha256(*parts: bytes) -> bytes:
    h = hashlib.sha256()
    for p in parts:
        h.update(p)
    return h.digest()


def agent_id(name: str) -> bytes:
    """32-byte identifier for a named participant."""
    return sha256(b"dlbc-agent:", name.encode())


# --- primitive codecs -------------------------------------------------------

def _u64(x: int) -> bytes:
    return struct.pack("<Q", x)


def _f64(x: float) -> bytes:
    return struct.pack("<d", x)


def _str(s: str) -> bytes:
    b = s.encode()
    return _u64(len(b)) + b


def _blob(b: bytes) -> bytes:
    return _u64(len(b)) + b


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise SerializationError("truncated input")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def b32(self) -> bytes:
        return self.take(32)

    def str(self) -> str:
        return self.take(self.u64()).decode()

    def blob(self) -> bytes:
        return self.take(self.u64())

    def done(self) -> None:
        if self.pos != len(self.data):
            raise SerializationError("trailing bytes")


# --- models -----------------------------------------------------------------

def serialize_model(weights) -> bytes:
    """dim as u64, then each weight as binary64, all little-endian."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1:
        raise SerializationError("weights must be a flat vector")
    if not np.all(np.isfinite(w)):
        raise SerializationError("non-finite weight")
    return _u64(w.size) + w.astype("<f8").tobytes()


def deserialize_model(data: bytes) -> np.ndarray:
    if len(data) < 8:
        raise SerializationError("truncated model")
    dim = struct.unpack("<Q", data[:8])[0]
    if len(data) != 8 + 8 * dim:
        raise SerializationError(f"model length {len(data)} does not match dim {dim}")
    w = np.frombuffer(data, dtype="<f8", offset=8).astype(np.float64)
    if not np.all(np.isfinite(w)):
        raise SerializationError("non-finite weight")
    return w


def model_digest(weights) -> bytes:
    return sha256(serialize_model(weights))


@dataclass(frozen=True)
class ModelCommitment:
    miner_id: bytes
    task: bytes
    digest: bytes
    commit_time: float


def commitment_digest(weights, miner_id: bytes, task: bytes) -> bytes:
    return sha256(serialize_model(weights), miner_id, task)


def model_commitment(weights, miner_id: bytes, task: bytes, commit_time: float = 0.0) -> ModelCommitment:
    return ModelCommitment(miner_id, task, commitment_digest(weights, miner_id, task), commit_time)


def model_signature(weights, data_id: str, task: bytes) -> bytes:
    """Header digest binding the winning model to its training data and task."""
    return sha256(serialize_model(weights), _str(data_id), task)


# --- tasks ------------------------------------------------------------------

@dataclass(frozen=True)
class Task:
    publisher_id: bytes
    reward: int
    model_link: str
    data_link: str
    model_size: int
    data_size: int
    flops: float
    submit_time: float

    def __post_init__(self):
        if len(self.publisher_id) != 32:
            raise ValueError("publisher_id must be 32 bytes")
        if self.reward < 0:
            raise ValueError("reward must be non-negative")

    def is_valid(self) -> bool:
        return self.reward > 0 and self.model_size > 0 and self.data_size > 0 and self.flops > 0

    def to_bytes(self) -> bytes:
        return b"".join([
            self.publisher_id, _u64(self.reward), _str(self.model_link), _str(self.data_link),
            _u64(self.model_size), _u64(self.data_size), _f64(self.flops), _f64(self.submit_time),
        ])

    @classmethod
    def _read(cls, r: _Reader) -> "Task":
        return cls(r.b32(), r.u64(), r.str(), r.str(), r.u64(), r.u64(), r.f64(), r.f64())

    @classmethod
    def from_bytes(cls, data: bytes) -> "Task":
        r = _Reader(data)
        t = cls._read(r)
        r.done()
        return t

    @property
    def id(self) -> bytes:
        return task_id(self)

    def to_json(self) -> dict:
        return {
            "publisher_id": self.publisher_id.hex(), "reward": self.reward,
            "model_link": self.model_link, "data_link": self.data_link,
            "model_size": self.model_size, "data_size": self.data_size,
            "flops": self.flops, "submit_time": self.submit_time,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Task":
        return cls(bytes.fromhex(d["publisher_id"]), int(d["reward"]), d["model_link"], d["data_link"],
                   int(d["model_size"]), int(d["data_size"]), float(d["flops"]), float(d["submit_time"]))


def task_id(task: Task) -> bytes:
    return sha256(task.to_bytes())


# --- blocks -----------------------------------------------------------------

@dataclass(frozen=True)
class BlockHeader:
    height: int
    prev_digest: bytes
    data_digest: bytes
    timestamp: float
    model_signature: bytes
    selected_task: bytes
    unselected_tasks: tuple
    claimed_accuracy: float
    winner_id: bytes
    model_link: str

    def __post_init__(self):
        object.__setattr__(self, "unselected_tasks", tuple(self.unselected_tasks))

    @property
    def is_idle(self) -> bool:
        return self.winner_id == ZERO32

    def check(self) -> None:
        if self.selected_task != ZERO32 and self.selected_task in self.unselected_tasks:
            raise SerializationError("selected task listed as unselected")
        if len(set(self.unselected_tasks)) != len(self.unselected_tasks):
            raise SerializationError("duplicate unselected task")
        if not 0.0 <= self.claimed_accuracy <= 1.0:
            raise SerializationError("claimed accuracy outside [0, 1]")

    def to_bytes(self) -> bytes:
        return b"".join([
            _u64(self.height), self.prev_digest, self.data_digest, _f64(self.timestamp),
            self.model_signature, self.selected_task,
            _u64(len(self.unselected_tasks)), *self.unselected_tasks,
            _f64(self.claimed_accuracy), self.winner_id, _str(self.model_link),
        ])

    @classmethod
    def _read(cls, r: _Reader) -> "BlockHeader":
        height, prev, data, ts = r.u64(), r.b32(), r.b32(), r.f64()
        sig, sel = r.b32(), r.b32()
        unsel = tuple(r.b32() for _ in range(r.u64()))
        return cls(height, prev, data, ts, sig, sel, unsel, r.f64(), r.b32(), r.str())

    @classmethod
    def from_bytes(cls, data: bytes) -> "BlockHeader":
        r = _Reader(data)
        h = cls._read(r)
        r.done()
        return h

    def to_json(self) -> dict:
        return {
            "height": self.height, "prev_digest": self.prev_digest.hex(),
            "data_digest": self.data_digest.hex(), "timestamp": self.timestamp,
            "model_signature": self.model_signature.hex(), "selected_task": self.selected_task.hex(),
            "unselected_tasks": [t.hex() for t in self.unselected_tasks],
            "claimed_accuracy": self.claimed_accuracy, "winner_id": self.winner_id.hex(),
            "model_link": self.model_link,
        }

    @classmethod
    def from_json(cls, d: dict) -> "BlockHeader":
        return cls(int(d["height"]), bytes.fromhex(d["prev_digest"]), bytes.fromhex(d["data_digest"]),
                   float(d["timestamp"]), bytes.fromhex(d["model_signature"]),
                   bytes.fromhex(d["selected_task"]), tuple(bytes.fromhex(t) for t in d["unselected_tasks"]),
                   float(d["claimed_accuracy"]), bytes.fromhex(d["winner_id"]), d["model_link"])


def block_digest(header: BlockHeader) -> bytes:
    return sha256(header.to_bytes())


@dataclass(frozen=True)
class Coinbase:
    publisher_frac: float
    miner_frac: float

    def to_bytes(self) -> bytes:
        return _f64(self.publisher_frac) + _f64(self.miner_frac)


@dataclass(frozen=True)
class MiningProof:
    """Training evidence carried in the body of a won block."""

    commitment: bytes
    commit_time: float
    train_seed: int
    checkpoints: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "checkpoints", tuple(self.checkpoints))

    def to_bytes(self) -> bytes:
        return b"".join([self.commitment, _f64(self.commit_time), _u64(self.train_seed),
                         _u64(len(self.checkpoints)), *self.checkpoints])

    @classmethod
    def _read(cls, r: _Reader) -> "MiningProof":
        c, t, s = r.b32(), r.f64(), r.u64()
        return cls(c, t, s, tuple(r.b32() for _ in range(r.u64())))


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    transactions: tuple = ()
    confirmed_tasks: tuple = ()
    coinbase: Coinbase = Coinbase(0.0, 1.0)
    proof: Optional[MiningProof] = None

    def __post_init__(self):
        object.__setattr__(self, "transactions", tuple(self.transactions))
        object.__setattr__(self, "confirmed_tasks", tuple(self.confirmed_tasks))

    @property
    def digest(self) -> bytes:
        return block_digest(self.header)

    @property
    def height(self) -> int:
        return self.header.height

    def body_bytes(self) -> bytes:
        return body_bytes(self.transactions, self.confirmed_tasks, self.coinbase, self.proof)

    def to_bytes(self) -> bytes:
        return _blob(self.header.to_bytes()) + self.body_bytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Block":
        r = _Reader(data)
        header = BlockHeader.from_bytes(r.blob())
        txs = tuple(r.blob() for _ in range(r.u64()))
        tasks = tuple(Task._read(r) for _ in range(r.u64()))
        coinbase = Coinbase(r.f64(), r.f64())
        proof = MiningProof._read(r) if r.take(1) == b"\x01" else None
        r.done()
        return cls(header, txs, tasks, coinbase, proof)

    def to_json(self) -> dict:
        p = self.proof
        return {
            "header": self.header.to_json(),
            "digest": self.digest.hex(),
            "transactions": [t.hex() for t in self.transactions],
            "confirmed_tasks": [t.to_json() for t in self.confirmed_tasks],
            "coinbase": {"publisher_frac": self.coinbase.publisher_frac, "miner_frac": self.coinbase.miner_frac},
            "proof": None if p is None else {
                "commitment": p.commitment.hex(), "commit_time": p.commit_time,
                "train_seed": p.train_seed, "checkpoints": [c.hex() for c in p.checkpoints],
            },
        }

    @classmethod
    def from_json(cls, d: dict) -> "Block":
        p = d.get("proof")
        proof = None if p is None else MiningProof(
            bytes.fromhex(p["commitment"]), float(p["commit_time"]), int(p["train_seed"]),
            tuple(bytes.fromhex(c) for c in p["checkpoints"]))
        cb = d["coinbase"]
        return cls(BlockHeader.from_json(d["header"]),
                   tuple(bytes.fromhex(t) for t in d["transactions"]),
                   tuple(Task.from_json(t) for t in d["confirmed_tasks"]),
                   Coinbase(float(cb["publisher_frac"]), float(cb["miner_frac"])), proof)


def body_bytes(transactions, confirmed_tasks, coinbase: Coinbase, proof: Optional[MiningProof]) -> bytes:
    parts = [_u64(len(transactions))]
    parts += [_blob(t) for t in transactions]
    parts.append(_u64(len(confirmed_tasks)))
    parts += [t.to_bytes() for t in confirmed_tasks]
    parts.append(coinbase.to_bytes())
    parts.append(b"\x00" if proof is None else b"\x01" + proof.to_bytes())
    return b"".join(parts)


def body_digest(transactions, confirmed_tasks, coinbase: Coinbase, proof: Optional[MiningProof]) -> bytes:
    return sha256(body_bytes(transactions, confirmed_tasks, coinbase, proof))


def check_coinbase(cb: Coinbase) -> bool:
    fracs_ok = all(math.isfinite(f) and 0.0 <= f <= 1.0 for f in (cb.publisher_frac, cb.miner_frac))
    return fracs_ok and cb.publisher_frac + cb.miner_frac == 1.0


def watermark_seed(prev_digest: bytes, height: int, miner_id: bytes, task: bytes) -> bytes:
    """Digest of the block template a miner fixes before training.

    The finished header depends on the trained model, so the watermark is
    derived from the parts known up front: parent, height, coinbase
    recipient and selected task.
    """
    return sha256(b"dlbc-template", prev_digest, _u64(height), miner_id, task)


# --- chain dump -------------------------------------------------------------

def dump_chain(blocks, path) -> None:
    import json

    with open(path, "w") as f:
        for b in blocks:
            f.write(json.dumps(b.to_json(), sort_keys=True, separators=(",", ":")) + "\n")


def dumps_chain(blocks) -> str:
    import json

    return "".join(json.dumps(b.to_json(), sort_keys=True, separators=(",", ":")) + "\n" for b in blocks)
