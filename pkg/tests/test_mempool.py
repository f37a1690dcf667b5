import pytest
from hypothesis import given
from hypothesis import strategies as st

from dlbc.chain import ZERO32, Block, BlockHeader, Task, agent_id, task_id
from dlbc.mempool import Mempool, MempoolError, Reject
from dlbc.phases import Phase
from dlbc.ranking import NetworkStats, RankingParams, select_task

PARAMS = RankingParams(1.0, 100)
STATS = NetworkStats(1e6, 1e6)


def task(i, reward=10):
    return Task(agent_id("pub"), reward, "m", f"d{i}", 100 + i, 1000, 1e6 * (1 + i % 7), float(i))


def block(confirmed=(), selected=ZERO32, txs=()):
    h = BlockHeader(1, ZERO32, ZERO32, 0.0, ZERO32, selected, (), 0.0, ZERO32 if selected == ZERO32 else b"w" * 32, "")
    return Block(h, tuple(txs), tuple(confirmed))


def test_submit_accepts_in_window():
    pool = Mempool()
    assert pool.submit_task(task(1), 5.0, Phase.P1) is None
    assert pool.submit_task(task(2), 50.0, Phase.P2) is None
    assert len(pool.unconfirmed) == 2


def test_submit_rejections():
    pool = Mempool(max_tasks=2)
    assert pool.submit_task(task(1), 0, Phase.P1) is None
    assert pool.submit_task(task(1), 0, Phase.P1) is Reject.DUPLICATE
    assert pool.submit_task(task(2, reward=0), 0, Phase.P1) is Reject.INVALID
    assert pool.submit_task(task(3), 0, Phase.P3) is Reject.PHASE
    assert pool.submit_task(task(4), 0, Phase.P2) is None
    assert pool.submit_task(task(5), 0, Phase.P2) is Reject.FULL


def test_confirm_moves_tasks_and_drops_selected():
    pool = Mempool()
    ts = [task(i) for i in range(3)]
    for t in ts:
        pool.submit_task(t, 0, Phase.P1)
    pool.confirm_tasks(block(ts, selected=task_id(ts[0])))
    assert not pool.unconfirmed
    assert set(pool.unselected) == {task_id(ts[1]), task_id(ts[2])}


def test_empty_confirmation_is_identity():
    pool = Mempool()
    pool.submit_task(task(1), 0, Phase.P1)
    before = pool.fingerprint()
    pool.confirm_tasks(block())
    assert pool.fingerprint() == before


def test_unknown_selected_task_errors():
    pool = Mempool()
    with pytest.raises(MempoolError):
        pool.confirm_tasks(block(selected=b"x" * 32))


def test_unknown_confirmed_task_errors():
    with pytest.raises(MempoolError):
        Mempool().confirm_tasks(block([task(9)]))


def test_snapshot_matches_select_and_is_deterministic():
    a, b = Mempool(), Mempool()
    for i in range(6):
        for p in (a, b):
            p.submit_task(task(i, reward=5 + i), 0, Phase.P1)
    conf = [task(i, reward=5 + i) for i in range(6)]
    a.confirm_tasks(block(conf))
    b.confirm_tasks(block(conf))
    assert a.snapshot(PARAMS, STATS) == b.snapshot(PARAMS, STATS)
    assert a.snapshot(PARAMS, STATS)[0].task == select_task(list(a.unselected.values()), PARAMS, STATS)
    assert Mempool().snapshot(PARAMS, STATS) == []


def test_transactions_cut_in_phase_three():
    pool = Mempool()
    assert pool.add_transaction(b"tx1", Phase.P2)
    assert not pool.add_transaction(b"tx2", Phase.P3)
    pool.confirm_tasks(block(txs=[b"tx1"]))
    assert pool.transactions == []


ops = st.lists(st.tuples(st.sampled_from(["submit", "confirm", "select"]), st.integers(0, 15),
                         st.sampled_from(list(Phase))), max_size=60)


@given(ops)
def test_conservation(seq):
    pool = Mempool(max_tasks=10)
    acked = set()
    for op, i, phase in seq:
        if op == "submit":
            if pool.submit_task(task(i), 0, phase) is None:
                acked.add(task_id(task(i)))
        elif op == "confirm":
            pool.confirm_tasks(block(list(pool.unconfirmed.values())))
        elif pool.unselected:
            pool.confirm_tasks(block(selected=sorted(pool.unselected)[0]))
        places = [set(pool.unconfirmed), set(pool.unselected), pool.selected]
        assert set().union(*places) == acked
        assert sum(len(p) for p in places) == len(acked)
