"""Deterministic discrete-event simulation of publishers, miners and full nodes.

Events are ordered by (deliver_at, seq). Agent computation (training,
validation) happens instantly inside handlers; its simulated duration is
modelled by scheduling the follow-up event later. Clock skew only changes
how a full node judges deadlines, never event order.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .chain import MiningProof, Task, agent_id, dumps_chain, model_commitment, sha256, task_id, watermark_seed
from .consensus import (Candidate, ChainView, NodeState, ProtocolParams, accept_block, fork_choice, make_genesis,
                        record_commitment)
from .store import Store
from .toytrain import (Dataset, DataSpec, ModelSpec, epoch_flops, evaluate_accuracy, make_checkpoint,
                       sgd_epoch, train)
from .watermark import detect, projection_from_block, watermark_from_block

log = logging.getLogger(__name__)

ROLES = ("publisher", "miner", "fullnode")
BEHAVIORS = ("honest", "thief", "withholder", "forker", "late", "liar", "unmarked")
MAX_SKEW = 5.0


class ConfigError(ValueError):
    pass


class SimulationError(RuntimeError):
    pass


# --- configuration ----------------------------------------------------------

@dataclass(frozen=True)
class AgentSpec:
    id: str
    role: str
    compute_share: float = 0.0
    clock_skew: float = 0.0
    behavior: str = "honest"

    @property
    def agent_id(self) -> bytes:
        return agent_id(self.id)


@dataclass(frozen=True)
class NetworkConfig:
    latency: float = 0.05
    bandwidth: float = 1.0e6
    compute_total: float = 6.0e5
    hash_rate: float = 2.16e8
    commit_margin: float = 10.0


@dataclass(frozen=True)
class TaskPlan:
    initial: int = 3
    per_block: int = 2
    sizes: tuple = (800, 1000, 1200)
    d: int = 32
    noise: float = 1.0
    reward_min: int = 5
    reward_max: int = 50
    model: ModelSpec = ModelSpec()


@dataclass(frozen=True)
class ScenarioConfig:
    agents: tuple
    protocol: ProtocolParams = ProtocolParams()
    network: NetworkConfig = NetworkConfig()
    tasks: TaskPlan = TaskPlan()
    seed: int = 0
    num_blocks: int = 5
    name: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        self.check()

    def check(self) -> None:
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ConfigError("agent ids must be unique")
        for a in self.agents:
            if a.role not in ROLES:
                raise ConfigError(f"unknown role {a.role!r}")
            if a.behavior not in BEHAVIORS:
                raise ConfigError(f"unknown behavior {a.behavior!r}")
            if abs(a.clock_skew) > MAX_SKEW:
                raise ConfigError(f"clock skew of {a.id} exceeds {MAX_SKEW} s")
            if not 0.0 <= a.compute_share <= 1.0:
                raise ConfigError(f"compute share of {a.id} outside [0, 1]")
        if not any(a.role == "fullnode" for a in self.agents):
            raise ConfigError("need at least one full node")
        if sum(a.compute_share for a in self.agents if a.role == "miner") > 1.0 + 1e-12:
            raise ConfigError("miner compute shares exceed 1")
        if sum(a.role == "publisher" for a in self.agents) > 1:
            raise ConfigError("at most one publisher is supported")
        if self.num_blocks < 1:
            raise ConfigError("num_blocks must be positive")
        if self.tasks.model.carrier < self.protocol.wm_bits:
            raise ConfigError("model carrier too small for the watermark")

    def with_(self, **kw) -> "ScenarioConfig":
        d = {f: getattr(self, f) for f in ("agents", "protocol", "network", "tasks", "seed", "num_blocks", "name")}
        d.update(kw)
        return ScenarioConfig(**d)

    @classmethod
    def from_json(cls, d: dict) -> "ScenarioConfig":
        try:
            tasks = dict(d.get("tasks", {}))
            if "model" in tasks:
                tasks["model"] = ModelSpec(**tasks["model"])
            if "sizes" in tasks:
                tasks["sizes"] = tuple(tasks["sizes"])
            proto = ProtocolParams().to_json()
            for k, v in d.get("protocol", {}).items():
                proto[k] = {**proto[k], **v} if isinstance(v, dict) else v
            return cls(agents=tuple(AgentSpec(**a) for a in d["agents"]),
                       protocol=ProtocolParams.from_json(proto),
                       network=NetworkConfig(**d.get("network", {})),
                       tasks=TaskPlan(**tasks),
                       seed=int(d.get("seed", 0)), num_blocks=int(d.get("num_blocks", 5)),
                       name=str(d.get("name", "scenario")))
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"bad scenario config: {e}") from e

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        try:
            with open(path) as f:
                d = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read {path}: {e}") from e
        if not isinstance(d, dict):
            raise ConfigError("scenario config must be a JSON object")
        return cls.from_json(d)


# --- messages ---------------------------------------------------------------

@dataclass(frozen=True)
class TaskSubmit:
    task: Task

    def size(self):
        return len(self.task.to_bytes())


@dataclass(frozen=True)
class DataAnnounce:
    task: bytes
    ciphertext: bytes

    def size(self):
        return 32 + len(self.ciphertext)


@dataclass(frozen=True)
class KeyRelease:
    task: bytes
    key: bytes

    def size(self):
        return 32 + len(self.key)


@dataclass(frozen=True)
class TestRelease:
    task: bytes
    inputs: np.ndarray
    labels: np.ndarray

    def size(self):
        return 32 + self.inputs.nbytes + self.labels.size


@dataclass(frozen=True)
class CommitMsg:
    height: int
    commitment: object

    def size(self):
        return 112


@dataclass(frozen=True)
class CandidateMsg:
    height: int
    candidate: Candidate

    def size(self):
        return 160 + len(self.candidate.model_link) + 32 * len(self.candidate.proof.checkpoints)


@dataclass(frozen=True)
class Timer:
    name: str
    height: int = 0

    def size(self):
        return 0


@dataclass(order=True)
class SimEvent:
    deliver_at: float
    seq: int
    src: bytes = field(compare=False)
    dst: bytes = field(compare=False)
    payload: object = field(compare=False)
    sent_at: float = field(compare=False, default=0.0)


# --- encryption -------------------------------------------------------------

def keystream(key: bytes, length: int) -> bytes:
    words = np.frombuffer(key, dtype="<u8")
    bg = np.random.Philox(key=words[:2], counter=np.concatenate([words[2:], np.zeros(2, np.uint64)]))
    return np.random.Generator(bg).bytes(length)


def xor_crypt(key: bytes, data: bytes) -> bytes:
    if len(key) != 32:
        raise ValueError("key must be 32 bytes")
    ks = np.frombuffer(keystream(key, len(data)), dtype=np.uint8)
    return (np.frombuffer(data, dtype=np.uint8) ^ ks).tobytes()


# --- simulator core ---------------------------------------------------------

class Network:
    def __init__(self, cfg: NetworkConfig):
        self.cfg = cfg
        self.queue = []
        self.seq = 0
        self.now = -math.inf
        self.agents = {}

    def delay(self, nbytes: int) -> float:
        return self.cfg.latency + nbytes / self.cfg.bandwidth

    def push(self, at: float, src: bytes, dst: bytes, payload, sent_at: float) -> None:
        heapq.heappush(self.queue, SimEvent(at, self.seq, src, dst, payload, sent_at))
        self.seq += 1

    def send(self, src: bytes, dst: bytes, payload) -> float:
        at = self.now + self.delay(payload.size())
        self.push(at, src, dst, payload, self.now)
        return at

    def broadcast(self, src: bytes, dsts, payload) -> None:
        for d in dsts:
            self.send(src, d, payload)

    def timer(self, at: float, agent: bytes, payload) -> None:
        self.push(at, agent, agent, payload, at)

    def run_until(self, t_end: float) -> None:
        while self.queue and self.queue[0].deliver_at <= t_end:
            ev = heapq.heappop(self.queue)
            if ev.deliver_at < ev.sent_at:
                raise SimulationError("event delivered before it was sent")
            self.now = ev.deliver_at
            self.agents[ev.dst].handle(ev, self)


class Publisher:
    def __init__(self, spec: AgentSpec, sim: "Simulation"):
        self.spec, self.sim, self.id = spec, sim, spec.agent_id
        self.rng = np.random.default_rng([sim.cfg.seed, 0x7A5C])
        self.count = 0
        self.sent_data = set()
        self.keys = {}

    def new_task(self, now: float) -> Task:
        plan, p = self.sim.cfg.tasks, self.sim.cfg.protocol
        n = int(self.rng.choice(plan.sizes))
        reward = int(self.rng.integers(plan.reward_min, plan.reward_max + 1))
        ds_seed = int(self.rng.integers(0, 2**63))
        self.count += 1
        spec = DataSpec(ds_seed, n, plan.d, plan.noise)
        arch = plan.model.trainer(0, p.lam).arch(plan.d)
        data_size = len(self.sim.dataset(spec.link).to_bytes())
        return Task(self.id, reward, plan.model.link, spec.link, 8 + 8 * arch.dim, data_size,
                    epoch_flops(arch, (4 * n) // 5), float(now))

    def key_for(self, tid: bytes) -> bytes:
        return sha256(b"publisher-key", self.sim.cfg.seed.to_bytes(8, "little"), tid)

    def announce_data(self, net: Network) -> None:
        view = self.sim.view
        pool = list(view.mempool.unconfirmed.values()) + list(view.mempool.unselected.values())
        for t in pool:
            tid = task_id(t)
            if t.publisher_id != self.id or tid in self.sent_data:
                continue
            self.sent_data.add(tid)
            ct = xor_crypt(self.key_for(tid), self.sim.dataset(t.data_link).to_bytes())
            net.broadcast(self.id, self.sim.miner_ids, DataAnnounce(tid, ct))

    def handle(self, ev: SimEvent, net: Network) -> None:
        msg = ev.payload
        view = self.sim.view
        if msg.name == "submit":
            for _ in range(self.sim.submit_counts[msg.height]):
                net.broadcast(self.id, self.sim.pool_ids, TaskSubmit(self.new_task(net.now)))
        elif msg.name == "announce":
            self.announce_data(net)
        elif msg.name == "test":
            tid = view.expected_task()
            if tid is not None and view.ctx.registry[tid].publisher_id == self.id:
                X, y = self.sim.dataset(view.ctx.registry[tid].data_link).part("test")
                net.broadcast(self.id, self.sim.miner_ids + self.sim.node_ids, TestRelease(tid, X, y))
        elif msg.name == "key":
            tid = view.expected_task()
            if tid is not None and view.ctx.registry[tid].publisher_id == self.id:
                net.broadcast(self.id, self.sim.miner_ids, KeyRelease(tid, self.key_for(tid)))


class FullNode:
    def __init__(self, spec: AgentSpec, sim: "Simulation"):
        self.spec, self.sim, self.id = spec, sim, spec.agent_id
        self.state = NodeState.from_genesis(sim.genesis, sim.store, sim.datasets, spec.clock_skew)
        self.candidates = []
        self.test_sets = {}
        self.late = []
        self.rejections = {}
        self.task_rejects = []

    def test_api(self, task: Task):
        tid = task_id(task)
        if tid in self.test_sets:
            return self.test_sets[tid]
        return self.sim.dataset(task.data_link).part("test")

    def handle(self, ev: SimEvent, net: Network) -> None:
        msg, st = ev.payload, self.state
        if isinstance(msg, TaskSubmit):
            r = st.mempool.submit_task(msg.task, net.now, st.local_phase(net.now))
            if r is not None:
                self.task_rejects.append((net.now, r.value))
        elif isinstance(msg, CommitMsg):
            if msg.height == st.height:
                r = record_commitment(st, msg.commitment, net.now)
                if r is not None:
                    self.late.append((msg.height, msg.commitment.miner_id, r))
        elif isinstance(msg, CandidateMsg):
            if msg.height == st.height:
                self.candidates.append(msg.candidate)
        elif isinstance(msg, TestRelease):
            self.test_sets[msg.task] = (msg.inputs, msg.labels)
        elif isinstance(msg, Timer) and msg.name == "finalize":
            block, rej = accept_block(st, self.candidates, self.test_api)
            self.rejections[block.height] = rej
            self.candidates = []


class Miner:
    """Honest miner with optional deviations selected by `behavior`."""

    def __init__(self, spec: AgentSpec, sim: "Simulation", node: Optional[NodeState] = None):
        self.spec, self.sim, self.id = spec, sim, spec.agent_id
        self.behavior = spec.behavior
        self.node = node  # private node for a forker, None means the public view
        self.ciphertexts = {}
        self.keys = {}
        self.job = None
        self.history = {}

    @property
    def view(self) -> NodeState:
        return self.node if self.node is not None else self.sim.view

    @property
    def targets(self):
        return [self.node_agent_id] if self.node is not None else self.sim.node_ids

    @property
    def node_agent_id(self) -> bytes:
        return self.sim.private_ids[self.id]

    def epoch_cost(self, task: Task) -> float:
        rate = self.spec.compute_share * self.sim.cfg.network.compute_total
        return math.inf if rate <= 0 else task.flops / rate

    def train_seed(self, height: int) -> int:
        d = sha256(b"train-seed", self.sim.cfg.seed.to_bytes(8, "little"), self.id, height.to_bytes(8, "little"))
        return int.from_bytes(d[:8], "little") >> 1

    def handle(self, ev: SimEvent, net: Network) -> None:
        msg = ev.payload
        if isinstance(msg, DataAnnounce):
            self.ciphertexts[msg.task] = msg.ciphertext
            self.try_start(net)
        elif isinstance(msg, KeyRelease):
            self.keys[msg.task] = msg.key
            self.try_start(net)
        elif isinstance(msg, Timer):
            if msg.name == "start":
                self.begin_interval(msg.height, net)
            elif msg.name == "trained":
                self.commit(msg.height, net)
            elif msg.name == "reveal":
                self.reveal(msg.height, net, None)
        elif isinstance(msg, TestRelease):
            if self.job is not None and self.job["task"] == msg.task:
                self.job["test"] = (msg.inputs, msg.labels)
                if self.node is None:
                    self.reveal(self.job["height"], net, (msg.inputs, msg.labels))
        elif isinstance(msg, CandidateMsg) and self.behavior == "thief":
            self.steal(msg, net)

    def begin_interval(self, height: int, net: Network) -> None:
        view = self.view
        self.job = None
        if view.height != height or self.behavior == "thief":
            return
        tid = view.expected_task()
        if tid is None:
            return
        self.job = {"height": height, "task": tid, "prev": view.chain[-1].digest, "started": False}
        self.try_start(net)

    def dataset_for(self, task: Task, tid: bytes) -> Optional[Dataset]:
        if self.node is not None:
            return self.sim.dataset(task.data_link)
        if tid in self.ciphertexts and tid in self.keys:
            return Dataset.from_bytes(xor_crypt(self.keys[tid], self.ciphertexts[tid]))
        return None

    def try_start(self, net: Network) -> None:
        job = self.job
        if job is None or job["started"]:
            return
        view, p = self.view, self.sim.cfg.protocol
        task = view.ctx.registry[job["task"]]
        data = self.dataset_for(task, job["task"])
        if data is None:
            return
        job["started"] = True
        sched = p.interval(job["height"])
        cost = self.epoch_cost(task)
        budget = math.floor((sched.t_c - self.sim.cfg.network.commit_margin - net.now) / cost) if cost < math.inf else 0
        spec = ModelSpec.parse(task.model_link)
        epochs = min(max(budget, 0), spec.epochs)
        if epochs < 1:
            return
        lam = 0.0 if self.behavior == "unmarked" else p.lam
        seed = watermark_seed(job["prev"], job["height"], self.id, job["task"])
        wm = watermark_from_block(seed, p.wm_bits, p.wm_rows)
        key = projection_from_block(seed, spec.carrier, p.wm_bits, p.gain)
        job["train_seed"] = self.train_seed(job["height"])
        cfg = spec.trainer(job["train_seed"], lam)
        cps = train(data, cfg, (wm, key), epochs=epochs)
        for cp in cps:
            self.sim.store.put(cp)
        job.update(data=data, checkpoints=cps, epochs=epochs, train_seconds=epochs * cost, arch=cfg.arch(data.d))
        done = net.now + epochs * cost
        if self.behavior == "late":
            done = max(done, sched.t_c + 2 * MAX_SKEW)
        net.timer(done, self.id, Timer("trained", job["height"]))
        self.history[job["height"]] = job

    def commit(self, height: int, net: Network) -> None:
        job = self.job
        if job is None or job["height"] != height or "checkpoints" not in job:
            return
        w = job["checkpoints"][-1].weights
        c = model_commitment(w, self.id, job["task"], net.now)
        job["commitment"] = c
        net.broadcast(self.id, self.targets, CommitMsg(height, c))
        if self.node is not None:
            net.timer(self.sim.cfg.protocol.interval(height).t_c + 1.0, self.id, Timer("reveal", height))
        elif "test" in job:
            self.reveal(height, net, job["test"])

    def reveal(self, height: int, net: Network, test) -> None:
        job = self.job
        if job is None or job["height"] != height or "commitment" not in job or job.get("revealed"):
            return
        if self.behavior == "withholder":
            return
        if test is None:
            test = job["data"].part("test")
        job["revealed"] = True
        cps = job["checkpoints"]
        acc = evaluate_accuracy(cps[-1].weights, *test, job["arch"])
        if self.behavior == "liar":
            acc = min(1.0, acc + 0.05)
        job["accuracy"] = acc
        c = job["commitment"]
        proof = MiningProof(c.digest, c.commit_time, job["train_seed"], tuple(cp.digest for cp in cps))
        cand = Candidate(self.id, job["task"], acc, self.sim.store_link(cps[-1]), proof)
        watchers = self.sim.thief_ids if self.node is None else []
        net.broadcast(self.id, self.targets + watchers, CandidateMsg(height, cand))

    def steal(self, msg: CandidateMsg, net: Network) -> None:
        """Take a revealed model, strip its mark, add ours, and resubmit."""
        view, p = self.sim.view, self.sim.cfg.protocol
        if msg.height != view.height or msg.height in self.history:
            return
        victim = msg.candidate
        task = view.ctx.registry.get(victim.task)
        if task is None:
            return
        self.history[msg.height] = {"stolen_from": victim.miner_id}
        stolen = self.sim.store.get(bytes.fromhex(victim.model_link.split("//", 1)[1]))
        data = self.sim.dataset(task.data_link)
        spec = ModelSpec.parse(task.model_link)
        sched = p.interval(msg.height)
        cost = self.epoch_cost(task)
        budget = math.floor((sched.t_next_a - 2.0 - net.now) / cost) if cost < math.inf else 0
        seed_v = watermark_seed(view.chain[-1].digest, msg.height, victim.miner_id, victim.task)
        mine = watermark_seed(view.chain[-1].digest, msg.height, self.id, victim.task)
        wm_v = (watermark_from_block(seed_v, p.wm_bits, p.wm_rows),
                projection_from_block(seed_v, spec.carrier, p.wm_bits, p.gain))
        wm_m = (watermark_from_block(mine, p.wm_bits, p.wm_rows),
                projection_from_block(mine, spec.carrier, p.wm_bits, p.gain))
        cfg = spec.trainer(self.train_seed(msg.height), p.lam)
        w = stolen.weights.copy()
        cps = [make_checkpoint(w, 0)]
        for e in range(1, max(budget, 0) + 1):
            if detect(w, *wm_v)[1]:
                w, cp = sgd_epoch(w, data, cfg, wm_v, -1, e)
            else:
                w, cp = sgd_epoch(w, data, cfg, wm_m, +1, e)
            cps.append(cp)
        for cp in cps:
            self.sim.store.put(cp)
        c = model_commitment(w, self.id, victim.task, net.now)
        net.broadcast(self.id, self.sim.node_ids, CommitMsg(msg.height, c))
        acc = evaluate_accuracy(w, *data.part("test"), cfg.arch(data.d))
        proof = MiningProof(c.digest, c.commit_time, cfg.seed, tuple(cp.digest for cp in cps))
        cand = Candidate(self.id, victim.task, acc, self.sim.store_link(cps[-1]), proof)
        at = net.now + max(budget, 0) * cost
        for d in self.sim.node_ids:
            net.push(at + net.delay(cand_size(cand)), self.id, d, CandidateMsg(msg.height, cand), net.now)


def cand_size(c: Candidate) -> int:
    return CandidateMsg(0, c).size()


class PrivateNode:
    """A forker's own full node: receives task submissions, builds a private chain."""

    def __init__(self, spec: AgentSpec, sim: "Simulation"):
        self.spec, self.sim = spec, sim
        self.id = sha256(b"private-node", spec.agent_id)
        self.state = NodeState.from_genesis(sim.genesis, sim.store, sim.datasets, 0.0)
        self.candidates = []

    def handle(self, ev: SimEvent, net: Network) -> None:
        msg, st = ev.payload, self.state
        if isinstance(msg, TaskSubmit):
            st.mempool.submit_task(msg.task, net.now, st.local_phase(net.now))
        elif isinstance(msg, CommitMsg) and msg.height == st.height:
            record_commitment(st, msg.commitment, net.now)
        elif isinstance(msg, CandidateMsg) and msg.height == st.height:
            self.candidates.append(msg.candidate)
        elif isinstance(msg, Timer) and msg.name == "finalize":
            accept_block(st, self.candidates)
            self.candidates = []


# --- scenario driver --------------------------------------------------------

@dataclass
class SimReport:
    rows: list
    chain: list
    summary: dict
    store: Store

    def csv(self) -> str:
        import csv
        import io

        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: fmt(r[k]) for k in REPORT_COLUMNS})
        return buf.getvalue()

    def chain_jsonl(self) -> str:
        return dumps_chain(self.chain)

    def summary_json(self) -> str:
        return json.dumps(self.summary, sort_keys=True, indent=2) + "\n"


REPORT_COLUMNS = [
    "height", "timestamp", "winner", "selected_task", "claimed_accuracy", "idle", "publisher_frac", "miner_frac",
    "queue_length", "publisher_reward", "miner_reward", "epochs", "signature_seconds", "transfer_seconds",
    "training_seconds", "overhead_fraction", "rejections",
]


def fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


class Simulation:
    def __init__(self, cfg: ScenarioConfig, store: Optional[Store] = None):
        self.cfg = cfg
        self.store = store if store is not None else Store()
        self.datasets = {}
        self.names = {a.agent_id: a.id for a in cfg.agents}
        self.net = Network(cfg.network)
        self.publisher = None
        pubs = [a for a in cfg.agents if a.role == "publisher"]
        self.submit_counts = {h: cfg.tasks.per_block for h in range(1, cfg.num_blocks + 1)}

        initial = []
        if pubs:
            self.publisher = Publisher(pubs[0], self)
            initial = [self.publisher.new_task(-cfg.protocol.timing.p3) for _ in range(cfg.tasks.initial)]
        self.genesis = make_genesis(cfg.protocol, initial)

        self.nodes = [FullNode(a, self) for a in cfg.agents if a.role == "fullnode"]
        self.node_ids = [n.id for n in self.nodes]
        self.view = self.nodes[0].state
        self.private = {}
        self.private_ids = {}
        self.miners = []
        for a in cfg.agents:
            if a.role != "miner":
                continue
            node = None
            if a.behavior == "forker":
                pn = PrivateNode(a, self)
                self.private[a.agent_id] = pn
                self.private_ids[a.agent_id] = pn.id
                self.net.agents[pn.id] = pn
                node = pn.state
            self.miners.append(Miner(a, self, node))
        self.miner_ids = [m.id for m in self.miners]
        self.thief_ids = [m.id for m in self.miners if m.behavior == "thief"]
        self.pool_ids = self.node_ids + [pn.id for pn in self.private.values()]
        for agent in self.nodes + self.miners:
            self.net.agents[agent.id] = agent
        if self.publisher is not None:
            self.net.agents[self.publisher.id] = self.publisher

    def dataset(self, link: str) -> Dataset:
        if link not in self.datasets:
            self.datasets[link] = DataSpec.parse(link).build()
        return self.datasets[link]

    def store_link(self, cp) -> str:
        return self.store.put(cp)

    def schedule(self) -> None:
        net, p = self.net, self.cfg.protocol
        pub = self.publisher
        if pub is not None:
            net.timer(-p.timing.p3, pub.id, Timer("announce", 0))
            net.timer(0.0, pub.id, Timer("key", 0))
        for h in range(1, self.cfg.num_blocks + 1):
            s = p.interval(h)
            for m in self.miners:
                net.timer(s.t_a, m.id, Timer("start", h))
            if pub is not None:
                net.timer(s.t_a + p.timing.p1 / 2, pub.id, Timer("submit", h))
                net.timer(s.t_c, pub.id, Timer("test", h))
                net.timer(s.t_c, pub.id, Timer("announce", h))
            for n in self.nodes:
                net.timer(s.t_next_a, n.id, Timer("finalize", h))
            for pn in self.private.values():
                net.timer(s.t_next_a, pn.id, Timer("finalize", h))
            if pub is not None:
                net.timer(s.t_next_a, pub.id, Timer("key", h))

    def check_consistency(self, height: int) -> None:
        ref = self.nodes[0].state
        for n in self.nodes[1:]:
            st = n.state
            if st.chain[-1].digest != ref.chain[-1].digest or st.mempool.fingerprint() != ref.mempool.fingerprint():
                raise SimulationError(f"full nodes diverged at height {height}")

    def run(self) -> SimReport:
        self.schedule()
        p = self.cfg.protocol
        for h in range(1, self.cfg.num_blocks + 1):
            self.net.run_until(p.interval(h).t_next_a)
            self.check_consistency(h)
            log.debug("block %d finalized, tip %s", h, self.view.chain[-1].digest.hex()[:16])
        return self.report()

    def miner_spec(self, mid: bytes):
        for m in self.miners:
            if m.id == mid:
                return m
        return None

    def report(self) -> SimReport:
        p, ncfg = self.cfg.protocol, self.cfg.network
        chain = self.view.chain
        registry = self.view.ctx.registry
        rows = []
        for b in chain[1:]:
            h = b.header
            rej = self.nodes[0].rejections.get(h.height, [])
            rej_s = ";".join(f"{self.names.get(m, m.hex()[:8])}:{r}" for m, r in rej)
            row = {
                "height": h.height, "timestamp": h.timestamp, "idle": h.is_idle,
                "winner": "" if h.is_idle else self.names.get(h.winner_id, h.winner_id.hex()),
                "selected_task": "" if h.is_idle else h.selected_task.hex(),
                "claimed_accuracy": h.claimed_accuracy,
                "publisher_frac": b.coinbase.publisher_frac, "miner_frac": b.coinbase.miner_frac,
                "queue_length": len(h.unselected_tasks), "rejections": rej_s,
                "publisher_reward": 0.0, "miner_reward": 0.0, "epochs": 0,
                "signature_seconds": 0.0, "transfer_seconds": 0.0, "training_seconds": 0.0,
                "overhead_fraction": 0.0,
            }
            if not h.is_idle:
                task = registry[h.selected_task]
                miner = self.miner_spec(h.winner_id)
                epochs = len(b.proof.checkpoints) - 1
                train_s = epochs * miner.epoch_cost(task)
                sig_s = task.model_size / ncfg.hash_rate
                xfer_s = ncfg.latency + task.model_size / ncfg.bandwidth
                row.update(
                    publisher_reward=p.subsidy * b.coinbase.publisher_frac,
                    miner_reward=p.subsidy * b.coinbase.miner_frac + task.reward,
                    epochs=epochs, signature_seconds=sig_s, transfer_seconds=xfer_s, training_seconds=train_s,
                    overhead_fraction=(sig_s + xfer_s) / train_s)
            rows.append(row)

        summary = {
            "name": self.cfg.name, "seed": self.cfg.seed, "num_blocks": self.cfg.num_blocks,
            "tip": chain[-1].digest.hex(),
            "idle_blocks": sum(1 for b in chain[1:] if b.header.is_idle),
            "high_accuracy_blocks": ChainView(chain).high_accuracy_count(p.fork_threshold),
            "late_commitments": sorted({(h, self.names.get(m, m.hex())) for n in self.nodes for h, m, _ in n.late}),
            "rejected_submissions": len(self.nodes[0].task_rejects),
        }
        if self.private:
            public = ChainView(list(chain))
            forks = [ChainView(list(pn.state.chain)) for pn in self.private.values()]
            best = fork_choice([public] + forks, p.fork_threshold)
            summary["fork"] = {
                "threshold": p.fork_threshold,
                "public_high_accuracy": public.high_accuracy_count(p.fork_threshold),
                "fork_high_accuracy": [f.high_accuracy_count(p.fork_threshold) for f in forks],
                "public_cumulative": public.cumulative_accuracy(),
                "fork_cumulative": [f.cumulative_accuracy() for f in forks],
                "winner": "public" if best is public else "fork",
            }
        summary["late_commitments"] = [list(x) for x in summary["late_commitments"]]
        return SimReport(rows, list(chain), summary, self.store)


def run(config: ScenarioConfig, store: Optional[Store] = None) -> SimReport:
    return Simulation(config, store).run()
