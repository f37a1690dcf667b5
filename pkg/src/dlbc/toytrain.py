"""Deterministic small-model trainer used as the mining workload.

Weights live in one flat float64 vector laid out as

    [carrier | W1 (h x d) | b1 (h) | w2 (h) | b2]      hidden_dim > 0
    [carrier | w (d) | b]                               hidden_dim == 0

The carrier segment is never read by the classifier; it exists to host
watermark bits (see watermark.projection_from_block).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from urllib.parse import parse_qs, urlencode, urlparse

import numpy as np

from .chain import serialize_model, sha256
from .watermark import regularizer, sigmoid


class TrainingError(RuntimeError):
    pass


# --- data -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    seed: int
    train: np.ndarray
    test: np.ndarray

    @property
    def n(self) -> int:
        return int(self.labels.size)

    @property
    def d(self) -> int:
        return int(self.inputs.shape[1])

    def part(self, name: str):
        idx = {"train": self.train, "test": self.test}[name]
        return self.inputs[idx], self.labels[idx]

    def to_bytes(self) -> bytes:
        hdr = struct.pack("<QQQQ", self.seed, self.n, self.d, self.train.size)
        return b"".join([hdr, self.inputs.astype("<f8").tobytes(), self.labels.astype("u1").tobytes(),
                         self.train.astype("<u8").tobytes(), self.test.astype("<u8").tobytes()])

    @classmethod
    def from_bytes(cls, data: bytes) -> "Dataset":
        seed, n, d, ntr = struct.unpack_from("<QQQQ", data)
        off = 32
        X = np.frombuffer(data, "<f8", n * d, off).reshape(n, d).astype(np.float64)
        off += 8 * n * d
        y = np.frombuffer(data, "u1", n, off).astype(np.float64)
        off += n
        tr = np.frombuffer(data, "<u8", ntr, off).astype(np.int64)
        off += 8 * ntr
        te = np.frombuffer(data, "<u8", n - ntr, off).astype(np.int64)
        return cls(X, y, seed, tr, te)

    @property
    def digest(self) -> bytes:
        return sha256(self.to_bytes())


def make_dataset(seed: int, n: int, d: int, noise: float, separation: float = 2.5) -> Dataset:
    """Two balanced Gaussian clusters at +/- separation/2 along a random direction."""
    if n < 4:
        raise ValueError("need at least 4 samples to split")
    if d < 1:
        raise ValueError("need at least one feature")
    rng = np.random.default_rng(seed)
    mu = rng.normal(size=d)
    mu *= separation / 2 / np.linalg.norm(mu)
    y = np.zeros(n)
    y[: n // 2] = 1.0
    rng.shuffle(y)
    X = np.where(y[:, None] == 1.0, mu, -mu) + noise * rng.normal(size=(n, d))
    order = rng.permutation(n)
    ntr = (4 * n) // 5
    return Dataset(X, y, int(seed), np.sort(order[:ntr]), np.sort(order[ntr:]))


@dataclass(frozen=True)
class DataSpec:
    seed: int
    n: int
    d: int
    noise: float

    @property
    def link(self) -> str:
        return "synth://dataset?" + urlencode(
            {"seed": self.seed, "n": self.n, "d": self.d, "noise": repr(float(self.noise))})

    @classmethod
    def parse(cls, link: str) -> "DataSpec":
        u = urlparse(link)
        if u.scheme != "synth" or u.netloc != "dataset":
            raise ValueError(f"unsupported data link {link!r}")
        q = {k: v[0] for k, v in parse_qs(u.query, strict_parsing=True).items()}
        return cls(int(q["seed"]), int(q["n"]), int(q["d"]), float(q["noise"]))

    def build(self) -> Dataset:
        return make_dataset(self.seed, self.n, self.d, self.noise)


# --- model ------------------------------------------------------------------

@dataclass(frozen=True)
class Arch:
    d: int
    hidden_dim: int = 0
    carrier: int = 0

    @property
    def dim(self) -> int:
        h = self.hidden_dim
        body = self.d + 1 if h == 0 else h * self.d + 2 * h + 1
        return self.carrier + body

    @property
    def classifier_params(self) -> int:
        return self.dim - self.carrier

    def unpack(self, w):
        """Views into w: (w,b) or (W1,b1,w2,b2)."""
        c, d, h = self.carrier, self.d, self.hidden_dim
        if w.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} weights, got {w.shape}")
        if h == 0:
            return w[c:c + d], w[c + d:c + d + 1]
        o = c
        W1 = w[o:o + h * d].reshape(h, d)
        o += h * d
        b1 = w[o:o + h]
        w2 = w[o + h:o + 2 * h]
        b2 = w[o + 2 * h:o + 2 * h + 1]
        return W1, b1, w2, b2


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: float = 0.01
    epochs_budget: int = 30
    lam: float = 0.1
    batch_size: int = 16
    seed: int = 0
    hidden_dim: int = 32
    carrier: int = 256

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.batch_size < 1 or self.epochs_budget < 1:
            raise ValueError("batch_size and epochs_budget must be positive")

    def arch(self, d: int) -> Arch:
        return Arch(d, self.hidden_dim, self.carrier)

    def with_(self, **kw) -> "TrainerConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class ModelSpec:
    """Training recipe carried by a task's model link."""

    hidden_dim: int = 32
    carrier: int = 256
    learning_rate: float = 0.01
    batch_size: int = 16
    epochs: int = 30

    @property
    def link(self) -> str:
        return "model://mlp?" + urlencode({
            "hidden": self.hidden_dim, "carrier": self.carrier, "lr": repr(float(self.learning_rate)),
            "batch": self.batch_size, "epochs": self.epochs})

    @classmethod
    def parse(cls, link: str) -> "ModelSpec":
        u = urlparse(link)
        if u.scheme != "model" or u.netloc != "mlp":
            raise ValueError(f"unsupported model link {link!r}")
        q = {k: v[0] for k, v in parse_qs(u.query, strict_parsing=True).items()}
        return cls(int(q["hidden"]), int(q["carrier"]), float(q["lr"]), int(q["batch"]), int(q["epochs"]))

    def trainer(self, seed: int, lam: float) -> TrainerConfig:
        return TrainerConfig(self.learning_rate, self.epochs, lam, self.batch_size, seed,
                             self.hidden_dim, self.carrier)


def init_weights(arch: Arch, seed: int, carrier_scale: float = 0.1) -> np.ndarray:
    rng = np.random.default_rng([seed, 0x1417])
    w = np.zeros(arch.dim)
    w[:arch.carrier] = carrier_scale * rng.normal(size=arch.carrier)
    if arch.hidden_dim == 0:
        return w
    W1, _, w2, _ = arch.unpack(w)
    W1[:] = rng.normal(size=W1.shape) * (0.5 / np.sqrt(arch.d))
    w2[:] = rng.normal(size=w2.shape) * (0.5 / np.sqrt(arch.hidden_dim))
    return w


def logits(weights, X, arch: Arch) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if arch.hidden_dim == 0:
        v, b = arch.unpack(w)
        return X @ v + b[0]
    W1, b1, w2, b2 = arch.unpack(w)
    return np.tanh(X @ W1.T + b1) @ w2 + b2[0]


def predict(weights, X, arch: Arch) -> np.ndarray:
    # a logit of exactly 0 is a tie and predicts class 0
    return (logits(weights, X, arch) > 0).astype(np.float64)


def evaluate_accuracy(weights, X, y, arch: Arch) -> float:
    if len(y) == 0:
        raise ValueError("cannot evaluate on an empty set")
    return float(np.mean(predict(weights, X, arch) == y))


def classifier_loss(weights, X, y, arch: Arch):
    """Mean binary cross-entropy and its gradient over the full weight vector."""
    w = np.asarray(weights, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[1] != arch.d:
        raise ValueError("batch shape does not match the architecture")
    grad = np.zeros_like(w)
    B = X.shape[0]
    if arch.hidden_dim == 0:
        v, b = arch.unpack(w)
        s = X @ v + b[0]
        ds = (sigmoid(s) - y) / B
        gv, gb = arch.unpack(grad)
        gv[:] = X.T @ ds
        gb[0] = ds.sum()
    else:
        W1, b1, w2, b2 = arch.unpack(w)
        H = np.tanh(X @ W1.T + b1)
        s = H @ w2 + b2[0]
        ds = (sigmoid(s) - y) / B
        dZ = np.outer(ds, w2) * (1.0 - H * H)
        gW1, gb1, gw2, gb2 = arch.unpack(grad)
        gW1[:] = dZ.T @ X
        gb1[:] = dZ.sum(axis=0)
        gw2[:] = H.T @ ds
        gb2[0] = ds.sum()
    value = float(np.mean(np.logaddexp(0.0, s) - y * s))
    return value, grad


def total_loss(weights, batch, lam: float, wm=None, sign: int = 1, arch: Arch = None):
    """E0 + sign*lam*E_R with its analytic gradient. wm is (matrix, key) or None."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    X, y = batch
    if arch is None:
        raise ValueError("arch is required")
    value, grad = classifier_loss(weights, X, y, arch)
    if wm is not None and lam != 0:
        r, g = regularizer(weights, *wm)
        value += sign * lam * r
        grad += (sign * lam) * g
    return value, grad


@dataclass(frozen=True, eq=False)
class Checkpoint:
    epoch: int
    weights: np.ndarray = field(repr=False)
    train_loss: float
    digest: bytes


def checkpoint_digest(weights, epoch: int) -> bytes:
    return sha256(serialize_model(weights), struct.pack("<Q", epoch))


def make_checkpoint(weights, epoch: int, train_loss: float = float("nan")) -> Checkpoint:
    w = np.array(weights, dtype=np.float64)
    w.flags.writeable = False
    return Checkpoint(epoch, w, train_loss, checkpoint_digest(w, epoch))


def batch_order(dataset: Dataset, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(dataset.train)


def sgd_epoch(weights, dataset: Dataset, config: TrainerConfig, wm=None, sign: int = 1, epoch: int = 1):
    """One pass of minibatch SGD; returns (new weights, checkpoint at `epoch`)."""
    arch = config.arch(dataset.d)
    w = np.array(weights, dtype=np.float64)
    order = batch_order(dataset, config.seed, epoch)
    bs = config.batch_size
    losses = []
    for i in range(0, order.size, bs):
        idx = order[i:i + bs]
        value, grad = total_loss(w, (dataset.inputs[idx], dataset.labels[idx]), config.lam, wm, sign, arch)
        if not np.isfinite(value):
            raise TrainingError(f"loss diverged in epoch {epoch}")
        w -= config.learning_rate * grad
        losses.append(value)
    if not np.all(np.isfinite(w)):
        raise TrainingError(f"weights diverged in epoch {epoch}")
    return w, make_checkpoint(w, epoch, float(np.mean(losses)))


def train(dataset: Dataset, config: TrainerConfig, wm=None, epochs: int = None, weights=None):
    """Honest training from the seeded init. Returns checkpoints for epochs 0..E."""
    arch = config.arch(dataset.d)
    w = init_weights(arch, config.seed) if weights is None else np.asarray(weights, dtype=np.float64)
    cps = [make_checkpoint(w, 0)]
    for e in range(1, (config.epochs_budget if epochs is None else epochs) + 1):
        w, cp = sgd_epoch(w, dataset, config, wm, 1, e)
        cps.append(cp)
    return cps


def replay_segment(frm: Checkpoint, to: Checkpoint, dataset: Dataset, config: TrainerConfig, wm=None) -> bool:
    """Re-run training from `frm` and check that it lands exactly on `to`."""
    if dataset is None:
        raise ValueError("dataset required for replay")
    if not frm.epoch < to.epoch:
        raise ValueError("replay needs from.epoch < to.epoch")
    if checkpoint_digest(frm.weights, frm.epoch) != frm.digest:
        return False
    w = frm.weights
    for e in range(frm.epoch + 1, to.epoch + 1):
        w, cp = sgd_epoch(w, dataset, config, wm, 1, e)
    return cp.digest == to.digest


def epoch_flops(arch: Arch, n_train: int) -> float:
    """Rough forward+backward cost of one epoch (6 FLOPs per parameter per sample)."""
    return 6.0 * arch.classifier_params * n_train
