"""Content-addressed checkpoint store standing in for model links.

Each file is named by its checkpoint digest and holds one text line
``epoch <n> digest <hex>`` followed by the serialized weights.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

from .chain import SerializationError, deserialize_model, serialize_model
from .toytrain import Checkpoint, checkpoint_digest, make_checkpoint

LINK_PREFIX = "store://"


class MissingEntry(KeyError):
    pass


class CorruptEntry(ValueError):
    pass


def model_link(digest: bytes) -> str:
    return LINK_PREFIX + digest.hex()


def parse_link(link: str) -> bytes:
    if not link.startswith(LINK_PREFIX):
        raise ValueError(f"not a store link: {link!r}")
    return bytes.fromhex(link[len(LINK_PREFIX):])


def encode_checkpoint(cp: Checkpoint) -> bytes:
    return f"epoch {cp.epoch} digest {cp.digest.hex()}\n".encode() + serialize_model(cp.weights)


def decode_checkpoint(data: bytes) -> Checkpoint:
    try:
        line, blob = data.split(b"\n", 1)
        tag, epoch, tag2, hexd = line.decode().split(" ")
        if tag != "epoch" or tag2 != "digest":
            raise ValueError("bad header")
        epoch = int(epoch)
        weights = deserialize_model(blob)
        declared = bytes.fromhex(hexd)
    except (ValueError, UnicodeDecodeError, SerializationError) as e:
        raise CorruptEntry(str(e)) from e
    if checkpoint_digest(weights, epoch) != declared:
        raise CorruptEntry("checkpoint digest does not match contents")
    return make_checkpoint(weights, epoch)


class Store:
    """Directory-backed when ``root`` is given, in-memory otherwise."""

    def __init__(self, root=None):
        self.root = None if root is None else Path(root)
        self._mem = {}
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, digest: bytes) -> Path:
        return self.root / f"{digest.hex()}.ckpt"

    def put(self, cp: Checkpoint) -> str:
        data = encode_checkpoint(cp)
        if self.root is None:
            self._mem[cp.digest] = data
        else:
            path = self._path(cp.digest)
            if not path.exists():
                fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".tmp")
                with os.fdopen(fd, "wb") as f:
                    f.write(data)
                os.replace(tmp, path)
        return model_link(cp.digest)

    def raw(self, digest: bytes) -> bytes:
        if self.root is None:
            if digest not in self._mem:
                raise MissingEntry(digest.hex())
            return self._mem[digest]
        path = self._path(digest)
        if not path.exists():
            raise MissingEntry(digest.hex())
        return path.read_bytes()

    def get(self, digest: bytes) -> Checkpoint:
        cp = decode_checkpoint(self.raw(digest))
        if cp.digest != digest:
            raise CorruptEntry("entry stored under the wrong name")
        return cp

    def has(self, digest: bytes) -> bool:
        try:
            self.raw(digest)
        except MissingEntry:
            return False
        return True

    def digests(self) -> list:
        if self.root is None:
            return sorted(self._mem)
        return sorted(bytes.fromhex(p.stem) for p in self.root.glob("*.ckpt"))
