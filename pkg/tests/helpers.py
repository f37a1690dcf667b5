"""Small protocol fixtures shared by consensus, cli and acceptance tests."""

from dlbc.chain import MiningProof, Task, agent_id, model_commitment, watermark_seed
from dlbc.consensus import Candidate, NodeState, ProtocolParams, make_genesis, record_commitment
from dlbc.store import Store
from dlbc.toytrain import DataSpec, ModelSpec, epoch_flops, evaluate_accuracy, train
from dlbc.watermark import projection_from_block, watermark_from_block

SMALL_MODEL = ModelSpec(hidden_dim=8, carrier=128, learning_rate=0.01, batch_size=4, epochs=6)


def make_task(reward=10, seed=1, n=200, d=8, spec=SMALL_MODEL, publisher="pub", submit_time=0.0) -> Task:
    ds = DataSpec(seed, n, d, 1.0)
    arch = spec.trainer(0, 0.1).arch(d)
    return Task(agent_id(publisher), reward, spec.link, ds.link, 8 + 8 * arch.dim, len(ds.build().to_bytes()),
                epoch_flops(arch, (4 * n) // 5), submit_time)


def fresh_node(tasks, params=None, store=None, skew=0.0) -> NodeState:
    params = params or ProtocolParams()
    return NodeState.from_genesis(make_genesis(params, tasks), store or Store(), skew=skew)


def mine(state: NodeState, miner: str, epochs=3, lam=None, seed=0, claim=None, commit=True, commit_at=None,
         task=None):
    """Train honestly on the expected task and return a Candidate."""
    p = state.params
    tid = task if task is not None else state.expected_task()
    t = state.ctx.registry[tid]
    spec = ModelSpec.parse(t.model_link)
    data = state.ctx.dataset(t.data_link)
    mid = agent_id(miner)
    wseed = watermark_seed(state.chain[-1].digest, state.height, mid, tid)
    wm = (watermark_from_block(wseed, p.wm_bits, p.wm_rows), projection_from_block(wseed, spec.carrier, p.wm_bits, p.gain))
    cfg = spec.trainer(seed, p.lam if lam is None else lam)
    cps = train(data, cfg, wm, epochs=epochs)
    for cp in cps:
        state.ctx.store.put(cp)
    w = cps[-1].weights
    sched = state.schedule
    t_commit = sched.t_b + 10.0 if commit_at is None else commit_at
    c = model_commitment(w, mid, tid, t_commit)
    if commit:
        record_commitment(state, c, t_commit)
    acc = evaluate_accuracy(w, *data.part("test"), cfg.arch(data.d)) if claim is None else claim
    proof = MiningProof(c.digest, t_commit, seed, tuple(cp.digest for cp in cps))
    return Candidate(mid, tid, acc, state.ctx.store.put(cps[-1]), proof)
