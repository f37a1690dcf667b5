import os
import struct
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dlbc.chain import (ZERO32, Block, BlockHeader, Coinbase, MiningProof, SerializationError, Task, block_digest,
                        check_coinbase, deserialize_model, dumps_chain, model_commitment, serialize_model, sha256,
                        task_id)
from oracles import sha256_py

b32 = st.binary(min_size=32, max_size=32)
finite = st.floats(allow_nan=False, allow_infinity=False)
text = st.text(max_size=40)


@st.composite
def tasks(draw):
    return Task(draw(b32), draw(st.integers(0, 2**63)), draw(text), draw(text), draw(st.integers(0, 2**40)),
                draw(st.integers(0, 2**40)), draw(finite), draw(finite))


@st.composite
def headers(draw):
    unsel = draw(st.lists(b32, max_size=5, unique=True))
    return BlockHeader(draw(st.integers(0, 2**40)), draw(b32), draw(b32), draw(finite), draw(b32), draw(b32),
                       tuple(unsel), draw(st.floats(0, 1)), draw(b32), draw(text))


@st.composite
def blocks(draw):
    proof = draw(st.none() | st.builds(MiningProof, b32, finite, st.integers(0, 2**63),
                                         st.lists(b32, max_size=4).map(tuple)))
    pub = draw(st.floats(0, 1))
    return Block(draw(headers()), tuple(draw(st.lists(st.binary(max_size=20), max_size=3))),
                 tuple(draw(st.lists(tasks(), max_size=3))), Coinbase(pub, 1.0 - pub), proof)


# --- serialize_model --------------------------------------------------------

def test_empty_model_is_eight_zero_bytes():
    assert serialize_model([]) == bytes(8)


def test_single_zero_weight():
    assert serialize_model([0.0]) == bytes.fromhex("0100000000000000") + bytes(8)


def test_two_weights_bit_exact_and_digest():
    data = serialize_model([1.0, -1.0])
    assert data == bytes.fromhex("0200000000000000" "000000000000f03f" "000000000000f0bf")
    assert sha256(data) == sha256_py(data)


def test_pure_python_sha_matches_known_vector():
    assert sha256_py(b"abc").hex() == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_non_finite_weight_rejected(bad):
    with pytest.raises(SerializationError):
        serialize_model([1.0, bad])


def test_deserialize_rejects_wrong_length():
    with pytest.raises(SerializationError):
        deserialize_model(serialize_model([1.0, 2.0])[:-1])


@given(st.lists(finite, max_size=50))
def test_model_round_trip(ws):
    w = np.array(ws, dtype=np.float64)
    assert np.array_equal(deserialize_model(serialize_model(w)), w)
    assert len(serialize_model(w)) == 8 + 8 * len(ws)


# --- commitments ------------------------------------------------------------

def test_commitment_deterministic_and_sensitive():
    w = np.linspace(-1, 1, 17)
    miner, task = sha256(b"m"), sha256(b"t")
    a = model_commitment(w, miner, task)
    assert a.digest == model_commitment(w.copy(), miner, task).digest
    flipped = w.copy()
    flipped.view(np.uint64)[3] ^= np.uint64(1)
    assert model_commitment(flipped, miner, task).digest != a.digest
    assert model_commitment(w, sha256(b"other"), task).digest != a.digest
    assert a.digest == sha256(serialize_model(w) + miner + task)


# --- headers and blocks -----------------------------------------------------

def _header(acc=0.5, **kw):
    base = dict(height=1, prev_digest=ZERO32, data_digest=ZERO32, timestamp=130.0, model_signature=ZERO32,
                selected_task=sha256(b"a"), unselected_tasks=(sha256(b"b"),), claimed_accuracy=acc,
                winner_id=sha256(b"w"), model_link="store://00")
    base.update(kw)
    return BlockHeader(**base)


def test_header_digest_changes_with_accuracy():
    assert block_digest(_header(0.5)) != block_digest(_header(0.5000001))


def test_genesis_digest_stable_across_processes():
    code = ("from dlbc.consensus import make_genesis, ProtocolParams;"
            "print(make_genesis(ProtocolParams()).digest.hex())")
    outs = set()
    for seed in ("1", "2"):
        env = dict(os.environ, PYTHONHASHSEED=seed)
        outs.add(subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                                check=True).stdout.strip())
    from dlbc.consensus import ProtocolParams, make_genesis

    assert outs == {make_genesis(ProtocolParams()).digest.hex()}


def test_header_check_rejects_selected_in_unselected():
    h = _header(unselected_tasks=(sha256(b"a"),))
    with pytest.raises(SerializationError):
        h.check()


def test_header_check_rejects_accuracy_out_of_range():
    with pytest.raises(SerializationError):
        _header(acc=1.5).check()


def test_chained_prev_digest():
    g = _header()
    nxt = _header(height=2, prev_digest=block_digest(g))
    assert nxt.prev_digest == block_digest(g)


@given(tasks())
def test_task_round_trip(t):
    assert Task.from_bytes(t.to_bytes()) == t
    assert Task.from_json(t.to_json()) == t
    assert task_id(t) == sha256(t.to_bytes())


@given(headers())
def test_header_round_trip(h):
    assert BlockHeader.from_bytes(h.to_bytes()) == h
    assert BlockHeader.from_json(h.to_json()) == h


@given(blocks())
def test_block_round_trip(b):
    assert Block.from_bytes(b.to_bytes()) == b
    assert Block.from_json(b.to_json()) == b
    assert b.to_bytes() == Block.from_bytes(b.to_bytes()).to_bytes()


def test_chain_dump_is_lowercase_hex_json_lines():
    b = Block(_header())
    text = dumps_chain([b, b])
    lines = text.splitlines()
    assert len(lines) == 2
    assert b.digest.hex() in lines[0]
    assert b.digest.hex() == b.digest.hex().lower()


@given(st.floats(0, 1))
def test_coinbase_fractions_sum_exactly(p):
    assert check_coinbase(Coinbase(p, 1.0 - p))


def test_coinbase_rejects_bad_sum():
    assert not check_coinbase(Coinbase(0.5, 0.6))


def test_task_invariants():
    t = Task(ZERO32, 0, "", "", 1, 1, 1.0, 0.0)
    assert not t.is_valid()
    with pytest.raises(ValueError):
        Task(ZERO32, -1, "", "", 1, 1, 1.0, 0.0)
    with pytest.raises(ValueError):
        Task(b"short", 1, "", "", 1, 1, 1.0, 0.0)


def test_u64_fields_little_endian():
    t = Task(ZERO32, 5, "", "", 1, 2, 3.0, 4.0)
    raw = t.to_bytes()
    assert raw[32:40] == struct.pack("<Q", 5)
