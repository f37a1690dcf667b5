"""Block-derived watermarks: generation, regularizer, detection, removal.

The bit string comes from a block digest. Each bit is hosted by one model
weight chosen by a keyed Fisher-Yates selection, and the host weight is
read through a sigmoid scaled by ``key.gain``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

THRESHOLD = 0.9999


class EmbedFailure(RuntimeError):
    pass


class RemovalFailure(RuntimeError):
    pass


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def softplus(x):
    return np.logaddexp(0.0, x)


@dataclass(frozen=True)
class WatermarkMatrix:
    bits: np.ndarray  # uint8, length n
    matrix: np.ndarray  # uint8, m x n

    @property
    def n(self) -> int:
        return int(self.bits.size)

    @property
    def m(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def bit_string(self) -> str:
        return "".join(str(int(b)) for b in self.bits)

    def __eq__(self, other):
        return (isinstance(other, WatermarkMatrix) and np.array_equal(self.bits, other.bits)
                and np.array_equal(self.matrix, other.matrix))

    def __hash__(self):
        return hash((self.bits.tobytes(), self.matrix.tobytes()))


@dataclass(frozen=True)
class ProjectionKey:
    indices: np.ndarray  # int64, n distinct weight indices
    seed: int
    gain: float = 1.0

    def __eq__(self, other):
        return (isinstance(other, ProjectionKey) and np.array_equal(self.indices, other.indices)
                and self.seed == other.seed and self.gain == other.gain)

    def __hash__(self):
        return hash((self.indices.tobytes(), self.seed, self.gain))


def digest_bits(digest: bytes, n: int) -> np.ndarray:
    if n > 8 * len(digest):
        raise ValueError(f"cannot draw {n} bits from a {len(digest)}-byte digest")
    return np.unpackbits(np.frombuffer(digest, dtype=np.uint8))[:n].copy()


def bits_to_matrix(bits, m: int) -> np.ndarray:
    if m < 2:
        raise ValueError("watermark matrix needs at least two rows")
    bits = np.asarray(bits, dtype=np.uint8)
    mat = np.zeros((m, bits.size), dtype=np.uint8)
    mat[bits, np.arange(bits.size)] = 1
    return mat


def matrix_to_bits(matrix) -> np.ndarray:
    matrix = np.asarray(matrix)
    if np.any(matrix.sum(axis=0) != 1) or np.any(matrix[2:] != 0):
        raise ValueError("columns must be one-hot in the first two rows")
    return matrix[1].astype(np.uint8)


def watermark_from_block(block_digest: bytes, n: int = 64, m: int = 2) -> WatermarkMatrix:
    if n > 256:
        raise ValueError("at most 256 bits are available from a SHA-256 digest")
    bits = digest_bits(block_digest, n)
    return WatermarkMatrix(bits, bits_to_matrix(bits, m))


def _splitmix64(state: int):
    mask = (1 << 64) - 1
    while True:
        state = (state + 0x9E3779B97F4A7C15) & mask
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        yield z ^ (z >> 31)


def _below(stream, bound: int) -> int:
    # rejection sampling keeps the draw exactly uniform
    limit = (1 << 64) - ((1 << 64) % bound)
    while True:
        r = next(stream)
        if r < limit:
            return r % bound


def projection_from_block(block_digest: bytes, dim: int, n: int = 64, gain: float = 1.0) -> ProjectionKey:
    """First n picks of a partial Fisher-Yates shuffle of range(dim)."""
    if dim < n:
        raise ValueError(f"dim {dim} cannot host {n} bits")
    seed = int.from_bytes(block_digest[:8], "big")
    stream = _splitmix64(seed)
    pool = list(range(dim))
    for i in range(n):
        j = i + _below(stream, dim - i)
        pool[i], pool[j] = pool[j], pool[i]
    return ProjectionKey(np.array(pool[:n], dtype=np.int64), seed, float(gain))


def regularizer(weights, wm: WatermarkMatrix, key: ProjectionKey):
    """Mean binary cross-entropy between hosted confidences and the bits.

    Written as softplus(u) - b*u, which equals the clamped-log form wherever
    the clamp is inactive and stays finite without it.
    """
    w = np.asarray(weights, dtype=np.float64)
    if key.indices.size != wm.n:
        raise ValueError("key and watermark disagree on n")
    u = key.gain * w[key.indices]
    b = wm.bits.astype(np.float64)
    value = float(np.mean(softplus(u) - b * u))
    grad = np.zeros_like(w)
    grad[key.indices] = key.gain * (sigmoid(u) - b) / wm.n
    return value, grad


def confidences(weights, wm: WatermarkMatrix, key: ProjectionKey) -> np.ndarray:
    u = key.gain * np.asarray(weights, dtype=np.float64)[key.indices]
    y = sigmoid(u)
    return np.where(wm.bits == 1, y, 1.0 - y)


def detect(weights, wm: WatermarkMatrix, key: ProjectionKey, threshold: float = THRESHOLD):
    conf = confidences(weights, wm, key)
    return conf, bool(np.all(conf > threshold))


def _run_until(weights, dataset, config, wm, key, sign, want_match, budget, on_epoch):
    from . import toytrain

    w = np.asarray(weights, dtype=np.float64).copy()
    for epoch in range(1, budget + 1):
        w, _ = toytrain.sgd_epoch(w, dataset, config, (wm, key), sign, epoch)
        if on_epoch is not None:
            on_epoch(epoch, w)
        if detect(w, wm, key)[1] == want_match:
            return w, epoch
    return w, None


def embed(weights, dataset, config, wm, key, on_epoch=None):
    """Train with +lambda*E_R until the watermark is detected."""
    w, used = _run_until(weights, dataset, config, wm, key, +1, True, config.epochs_budget, on_epoch)
    if used is None:
        raise EmbedFailure(f"watermark not matched after {config.epochs_budget} epochs")
    log.debug("embedded after %d epochs", used)
    return w, used


def removal_attack(weights, dataset, config, wm, key, on_epoch=None):
    """Train with -lambda*E_R until detection fails."""
    w, used = _run_until(weights, dataset, config, wm, key, -1, False, config.epochs_budget, on_epoch)
    if used is None:
        raise RemovalFailure(f"watermark still matched after {config.epochs_budget} epochs")
    return w, used
