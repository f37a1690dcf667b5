"""Command-line entry point: simulate, rank, watermark-demo, validate.

Exit codes: 0 success, 1 validation or scenario failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from dataclasses import replace
from importlib.resources import files
from pathlib import Path

from .chain import Task, agent_id, sha256, task_id
from .consensus import load_dump, validate_chain
from .ranking import NetworkStats, RankingParams, score_tasks
from .simnet import ConfigError, ScenarioConfig, SimulationError, run
from .store import Store

log = logging.getLogger("dlbc")

RANK_COLUMNS = ["task_id", "reward", "d_n", "d_c", "q", "score", "selected"]
DEMO_COLUMNS = ["section", "epoch", "min_confidence", "accuracy", "matched"]


class UsageError(Exception):
    pass


def atomic_write(path, data) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    mode = "wb" if isinstance(data, bytes) else "w"
    with os.fdopen(fd, mode) as f:
        f.write(data)
    os.replace(tmp, path)


def bundled_scenarios() -> list:
    return sorted(p.name[:-5] for p in files("dlbc").joinpath("scenarios").iterdir() if p.name.endswith(".json"))


def resolve_config(ref: str) -> Path:
    if ref is None:
        ref = "default"
    p = Path(ref)
    if p.exists():
        return p
    bundled = files("dlbc").joinpath("scenarios", f"{ref}.json")
    if bundled.is_file():
        return Path(str(bundled))
    raise UsageError(f"no such config: {ref}")


def _load_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read {path}: {e}") from e


# --- simulate ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    try:
        cfg = ScenarioConfig.load(resolve_config(args.config))
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.blocks is not None:
            overrides["num_blocks"] = args.blocks
        if args.threshold is not None:
            overrides["protocol"] = replace(cfg.protocol, fork_threshold=args.threshold)
        cfg = cfg.with_(**overrides)
    except ConfigError as e:
        raise UsageError(str(e)) from e
    out = Path(args.out)
    try:
        report = run(cfg, Store(out / "store"))
    except SimulationError as e:
        print(f"simulation failed: {e}", file=sys.stderr)
        return 1
    atomic_write(out / "report.csv", report.csv())
    atomic_write(out / "chain.jsonl", report.chain_jsonl())
    atomic_write(out / "summary.json", report.summary_json())
    print(f"{cfg.name}: {len(report.rows)} blocks, tip {report.summary['tip'][:16]}, output in {out}")
    if "fork" in report.summary:
        print(f"fork choice: {report.summary['fork']['winner']} chain wins")
    return 0


# --- rank -------------------------------------------------------------------

def _task_from_entry(e: dict) -> Task:
    pub = bytes.fromhex(e["publisher_id"]) if "publisher_id" in e else agent_id(str(e.get("publisher", "publisher")))
    return Task(pub, int(e["reward"]), str(e.get("model_link", "")), str(e.get("data_link", "")),
                int(e["model_size"]), int(e["data_size"]), float(e["flops"]), float(e.get("submit_time", 0.0)))


def rank_rows(doc: dict, k=None, L=None, bandwidth=None, compute=None):
    r, s = doc.get("ranking", {}), doc.get("stats", {})
    params = RankingParams(float(k if k is not None else r.get("k", 1.0)), int(L if L is not None else r.get("L", 100)))
    stats = NetworkStats(float(bandwidth if bandwidth is not None else s.get("median_bandwidth", 1.0e6)),
                         float(compute if compute is not None else s.get("median_compute", 6.0e5)))
    tasks = [_task_from_entry(e) for e in doc.get("tasks", [])]
    if not tasks:
        raise ValueError("task file holds no tasks")
    ids = [task_id(t) for t in tasks]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate task ids in task file")
    bad = [t for t in tasks if not t.is_valid()]
    if bad:
        raise ValueError("task file holds invalid tasks (zero reward, size or flops)")
    scored = score_tasks(tasks, params, stats)
    return [{"task_id": st.task.hex(), "reward": st.reward, "d_n": st.d_n, "d_c": st.d_c, "q": st.q,
             "score": st.score, "selected": i == 0} for i, st in enumerate(scored)]


def _csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: (repr(v) if isinstance(v, float) else int(v) if isinstance(v, bool) else v)
                    for c, v in r.items()})
    return buf.getvalue()


def cmd_rank(args) -> int:
    doc = _load_json(args.task_file)
    if not isinstance(doc, dict):
        doc = {"tasks": doc}
    try:
        rows = rank_rows(doc, args.k, args.L, args.bandwidth, args.compute)
    except (ValueError, KeyError, TypeError) as e:
        print(f"rank failed: {e}", file=sys.stderr)
        return 1
    text = _csv(rows, RANK_COLUMNS)
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    print(f"selected {rows[0]['task_id']}", file=sys.stderr)
    return 0


# --- watermark demo ---------------------------------------------------------

DEMO_DEFAULTS = {
    "seed": 0, "n": 1000, "d": 32, "noise": 1.0, "hidden": 32, "carrier": 256, "lr": 0.01, "batch": 16,
    "epochs": 30, "lam": 0.1, "gain": 3000.0, "bits": 64, "removal_budget": 100,
}


def watermark_demo(cfg: dict):
    """Rows of (section, epoch, min_confidence, accuracy, matched) for the
    honest run with the regularizer and the removal attack that follows it."""
    from .toytrain import TrainerConfig, evaluate_accuracy, init_weights, make_dataset, sgd_epoch
    from .watermark import confidences, projection_from_block, watermark_from_block, THRESHOLD

    c = {**DEMO_DEFAULTS, **cfg}
    data = make_dataset(int(c["seed"]), int(c["n"]), int(c["d"]), float(c["noise"]))
    tc = TrainerConfig(float(c["lr"]), int(c["epochs"]), float(c["lam"]), int(c["batch"]), int(c["seed"]),
                       int(c["hidden"]), int(c["carrier"]))
    arch = tc.arch(data.d)
    digest = sha256(b"watermark-demo", int(c["seed"]).to_bytes(8, "little"))
    wm = watermark_from_block(digest, int(c["bits"]))
    key = projection_from_block(digest, arch.carrier, int(c["bits"]), float(c["gain"]))
    X, y = data.part("test")

    def row(section, epoch, w):
        mc = float(confidences(w, wm, key).min())
        return {"section": section, "epoch": epoch, "min_confidence": mc,
                "accuracy": evaluate_accuracy(w, X, y, arch), "matched": mc > THRESHOLD}

    w = init_weights(arch, tc.seed)
    rows = [row("embed", 0, w)]
    for e in range(1, tc.epochs_budget + 1):
        w, _ = sgd_epoch(w, data, tc, (wm, key), +1, e)
        rows.append(row("embed", e, w))
    rows.append(row("removal", 0, w))
    for e in range(1, int(c["removal_budget"]) + 1):
        w, _ = sgd_epoch(w, data, tc, (wm, key), -1, e)
        rows.append(row("removal", e, w))
        if not rows[-1]["matched"]:
            break
    return rows


def first_epoch(rows, section, matched):
    return next((r["epoch"] for r in rows if r["section"] == section and r["epoch"] > 0
                 and r["matched"] == matched), None)


def cmd_watermark_demo(args) -> int:
    cfg = {}
    if args.config:
        cfg = _load_json(args.config)
        if not isinstance(cfg, dict) or set(cfg) - set(DEMO_DEFAULTS):
            raise UsageError(f"demo config keys must be among {sorted(DEMO_DEFAULTS)}")
    if args.seed is not None:
        cfg["seed"] = args.seed
    rows = watermark_demo(cfg)
    text = _csv(rows, DEMO_COLUMNS)
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    embed = first_epoch(rows, "embed", True)
    removed = first_epoch(rows, "removal", False)
    if embed is None:
        print("embed failed: watermark never detected", file=sys.stderr)
        return 1
    print(f"embedded at epoch {embed}; removal took {removed if removed is not None else 'more than budget'} epochs",
          file=sys.stderr)
    return 0


# --- validate ---------------------------------------------------------------

def cmd_validate(args) -> int:
    chain = Path(args.chain)
    if not chain.is_file():
        raise UsageError(f"no such chain dump: {chain}")
    store_dir = Path(args.store) if args.store else chain.parent / "store"
    blocks, digests = load_dump(chain)
    result = validate_chain(blocks, Store(store_dir) if store_dir.is_dir() else Store(), digests)
    print(result)
    return 0 if result.ok else 1


# --- entry ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dlbc", description="Proof-of-useful-work chain simulator and tools.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a scenario and write report.csv, chain.jsonl, summary.json")
    s.add_argument("--config", help="scenario JSON path or bundled name (default: default)")
    s.add_argument("--out", default="out")
    s.add_argument("--seed", type=int)
    s.add_argument("--blocks", type=int)
    s.add_argument("--threshold", type=float, help="fork-choice accuracy threshold")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("rank", help="score a task file and report the selected task")
    r.add_argument("task_file")
    r.add_argument("--out")
    r.add_argument("--k", type=float)
    r.add_argument("--L", type=int)
    r.add_argument("--bandwidth", type=float)
    r.add_argument("--compute", type=float)
    r.set_defaults(func=cmd_rank)

    w = sub.add_parser("watermark-demo", help="embed and removal curves as CSV")
    w.add_argument("--config")
    w.add_argument("--out")
    w.add_argument("--seed", type=int)
    w.set_defaults(func=cmd_watermark_demo)

    v = sub.add_parser("validate", help="revalidate a chain dump against a model store")
    v.add_argument("chain")
    v.add_argument("--store", help="store directory (default: store/ next to the dump)")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
