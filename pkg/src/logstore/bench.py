"""Benchmark scenarios, each emitting a CSV with a fixed column set.

Scenarios run against either an embedded store or the simulated cluster so
results are reproducible from a seed; nothing here touches real sockets.
"""

from __future__ import annotations

import csv
import shutil
import tempfile
import time
from pathlib import Path

from .cache import POLICIES, CacheConfig
from .engine import Store
from .recovery import recover_store
from .simnet import ExecModel, LinkConfig, SimCluster
from .workload import WorkloadSpec, KeyGenerator, encode_key

SCENARIOS = {}


def scenario(name):
    def deco(fn):
        SCENARIOS[name] = fn
        return fn
    return deco


def _writer(out_path: str, columns: list[str]):
    fh = open(out_path, "w", newline="")
    w = csv.DictWriter(fh, fieldnames=columns)
    w.writeheader()
    return fh, w


@scenario("write-scaling")
def write_scaling(out_path: str, seed: int = 7, ops: int = 20_000) -> None:
    """Sim-time write throughput as partition count grows, 3-node cluster."""
    fh, w = _writer(out_path, ["partitions", "ops", "sim_seconds", "ops_per_sec"])
    base = Path(tempfile.mkdtemp(prefix="logstore-bench-"))
    try:
        for parts in (1, 2, 4):
            cluster = SimCluster(
                base / f"p{parts}", nodes=3, partitions=parts, seed=seed,
                link=LinkConfig(delay=0.0005),
                exec_model=ExecModel(per_record=0.00005, batch_overhead=0.0001),
            )
            try:
                gen = KeyGenerator(WorkloadSpec(distribution="uniform",
                                                key_max=50_000, seed=seed))
                for _ in range(ops):
                    cluster.put(gen.next_key(), b"x" * 100)
                cluster.run_idle()
                elapsed = cluster.transport.now
                w.writerow({"partitions": parts, "ops": ops,
                            "sim_seconds": round(elapsed, 6),
                            "ops_per_sec": round(ops / elapsed, 1)})
            finally:
                cluster.close()
    finally:
        shutil.rmtree(base, ignore_errors=True)
        fh.close()


@scenario("cache-hitratio")
def cache_hitratio(out_path: str, seed: int = 7, ops: int = 200_000) -> None:
    """Hit ratio per policy across cache/working-set size ratios, both
    uniform and zipfian key popularity."""
    fh, w = _writer(out_path, ["policy", "distribution", "size_ratio", "hit_ratio"])
    key_count = 20_000
    value = b"v" * 1024
    entry_bytes = 8 + len(value) + 64
    try:
        for dist in ("uniform", "zipfian"):
            spec = WorkloadSpec(distribution=dist, key_max=key_count,
                                put_pct=0, get_pct=100, delete_pct=0, seed=seed)
            for ratio in (0.1, 0.2, 0.3, 0.4, 0.5):
                capacity = int(key_count * ratio) * entry_bytes
                for name, cls in POLICIES.items():
                    cache = cls(CacheConfig(capacity_bytes=capacity), seed=seed)
                    gen = KeyGenerator(spec)
                    warm = ops // 2
                    hits = reads = 0
                    for i in range(ops):
                        key = gen.next_key()
                        got = cache.get(key)
                        if i >= warm:
                            reads += 1
                            if got is not None:
                                hits += 1
                        if got is None:
                            cache.admit(key, value, 1)
                    w.writerow({"policy": name, "distribution": dist,
                                "size_ratio": ratio,
                                "hit_ratio": round(hits / reads, 4)})
    finally:
        fh.close()


@scenario("freshness")
def freshness(out_path: str, seed: int = 7, duration: float = 5.0) -> None:
    """Follower freshness score sampled every 20 ms of sim time under a
    steady write load."""
    fh, w = _writer(out_path, ["time", "node", "partition", "freshness"])
    base = Path(tempfile.mkdtemp(prefix="logstore-bench-"))
    cluster = SimCluster(base, nodes=3, partitions=1, seed=seed,
                         link=LinkConfig(delay=0.002, jitter=0.001))
    try:
        interval = 0.001  # 1k writes/s
        for i in range(int(duration / interval)):
            cluster.transport.schedule_at(
                i * interval,
                lambda i=i: cluster.put(encode_key(i), b"x" * 128),
            )
        followers = [nid for nid in cluster.nodes if nid != cluster.leader_map[0]]
        t = 0.02
        while t < duration:
            cluster.run(until=t)
            for node_id in followers:
                w.writerow({"time": round(t, 3), "node": node_id, "partition": 0,
                            "freshness": round(cluster.freshness(0, node_id), 6)})
            t += 0.02
        cluster.run_idle()
    finally:
        cluster.close()
        shutil.rmtree(base, ignore_errors=True)
        fh.close()


@scenario("recovery")
def recovery(out_path: str, seed: int = 7, records: int = 200_000) -> None:
    """Restart time with and without an index checkpoint covering the log."""
    fh, w = _writer(out_path, ["mode", "records", "replayed", "wall_seconds"])
    base = Path(tempfile.mkdtemp(prefix="logstore-bench-"))
    try:
        for mode in ("checkpointed", "full-replay"):
            data_dir = base / mode
            store = Store(str(data_dir), partitions=1, seed=seed)
            for i in range(records):
                store.put(encode_key(i % (records // 10)), b"p" * 64)
            if mode == "checkpointed":
                store.checkpoint()
            store.close()
            start = time.perf_counter()
            recovered = recover_store(str(data_dir), 1, seed=seed)
            elapsed = time.perf_counter() - start
            replayed = recovered.counters.records_replayed
            recovered.close()
            w.writerow({"mode": mode, "records": records, "replayed": replayed,
                        "wall_seconds": round(elapsed, 4)})
    finally:
        shutil.rmtree(base, ignore_errors=True)
        fh.close()


@scenario("batchget-crossover")
def batchget_crossover(out_path: str, seed: int = 7, live_keys: int = 20_000) -> None:
    """Point-read vs sequential-scan cost as batch size crosses the
    one-tenth-of-live-keys switchover."""
    fh, w = _writer(out_path, ["batch_fraction", "batch_size", "strategy",
                               "point_reads", "scan_records", "wall_seconds"])
    base = Path(tempfile.mkdtemp(prefix="logstore-bench-"))
    try:
        store = Store(str(base), partitions=1, cache_bytes=4096, seed=seed)
        for i in range(live_keys):
            store.put(encode_key(i), b"b" * 256)
        store.compact()
        for frac in (0.02, 0.05, 0.09, 0.11, 0.2, 0.4):
            size = int(live_keys * frac)
            keys = [encode_key((j * 7919) % live_keys) for j in range(size)]
            before_point = store.counters.log_point_reads
            before_scan = store.counters.scan_records
            start = time.perf_counter()
            store.batch_get(keys)
            elapsed = time.perf_counter() - start
            points = store.counters.log_point_reads - before_point
            scanned = store.counters.scan_records - before_scan
            w.writerow({"batch_fraction": frac, "batch_size": size,
                        "strategy": "scan" if scanned else "point",
                        "point_reads": points, "scan_records": scanned,
                        "wall_seconds": round(elapsed, 4)})
        store.close()
    finally:
        shutil.rmtree(base, ignore_errors=True)
        fh.close()


def run_scenario(name: str, out_path: str, seed: int = 7) -> None:
    if name not in SCENARIOS:
        raise SystemExit(f"unknown scenario {name!r}; choose from "
                         f"{', '.join(sorted(SCENARIOS))}")
    SCENARIOS[name](out_path, seed=seed)
