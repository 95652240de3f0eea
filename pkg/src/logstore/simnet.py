"""Deterministic in-process cluster simulation.

All correctness tests for replication run here: a seeded discrete-event
transport with programmable delay, drop and duplication (FIFO per link, as a
TCP connection would be), plus a simple executor-time model so pipelining and
multi-partition parallelism are observable in simulated time.  Nodes run the
real engine and replication logic and exchange real wire frames.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from . import wire
from .engine import Partition, Store, route
from .errors import ReadRejectedError
from .replication import (
    GATE_BLOCK,
    GATE_REJECT,
    HEARTBEAT_INTERVAL,
    ROLE_FOLLOWER,
    ROLE_LEADER,
    PartitionReplica,
    freshness_score,
)
from .wal import KIND_DELETE, KIND_PUT


@dataclass
class LinkConfig:
    delay: float = 0.001
    jitter: float = 0.0
    drop_prob: float = 0.0
    dup_prob: float = 0.0


@dataclass
class ExecModel:
    """Simulated executor service time (seconds)."""

    per_record: float = 0.0001
    batch_overhead: float = 0.0002


class SimTransport:
    def __init__(self, seed: int = 0):
        self.now = 0.0
        self._heap: list[tuple[float, int, Callable[[], None]]] = []
        self._seq = 0
        self.rng = random.Random(seed)

    def schedule(self, delay: float, fn: Callable[[], None]) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (self.now + delay, self._seq, fn))

    def schedule_at(self, when: float, fn: Callable[[], None]) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (max(when, self.now), self._seq, fn))

    def run(self, until: float | None = None) -> None:
        while self._heap:
            when, _, fn = self._heap[0]
            if until is not None and when > until:
                break
            heapq.heappop(self._heap)
            self.now = max(self.now, when)
            fn()
        if until is not None:
            self.now = max(self.now, until)

    def pending(self) -> int:
        return len(self._heap)


@dataclass
class SimTicket:
    kind: int
    key: bytes
    value: bytes
    lsn: int = 0
    partition: int = 0
    submit_time: float = 0.0
    reply_time: float = 0.0
    done: bool = False
    result: Any = None


class SimNode:
    def __init__(self, cluster: "SimCluster", node_id: int, store: Store):
        self.cluster = cluster
        self.node_id = node_id
        self.store = store
        self.replicas: dict[int, PartitionReplica] = {}
        self.dead = False
        self.exec_busy: dict[int, float] = {}
        self.exec_scheduled: dict[int, bool] = {}
        self.hb_scheduled: dict[int, bool] = {}
        self.tickets: dict[tuple[int, int], SimTicket] = {}  # (partition, lsn)

    def replica(self, partition: int) -> PartitionReplica:
        return self.replicas[partition]

    def handle_frame(self, src: int, frame: bytes) -> None:
        if self.dead:
            return
        msg_type, payload, _ = wire.decode_frame(frame)
        if msg_type == wire.MSG_APPEND_ENTRIES:
            self._on_append_entries(src, wire.AppendEntries.decode(payload))
        elif msg_type in (wire.MSG_APPEND_ACK, wire.MSG_APPEND_NACK):
            self._on_ack(wire.AppendAck.decode(payload, msg_type))
        else:  # pragma: no cover - no other frames cross the sim transport
            raise ValueError(f"unexpected frame type {msg_type:#x}")

    # -- follower side ---------------------------------------------------

    def _on_append_entries(self, src: int, msg: wire.AppendEntries) -> None:
        cluster = self.cluster
        pid = msg.partition
        replica = self.replicas[pid]
        busy = self.exec_busy.get(pid, 0.0)
        model = cluster.exec_model
        start = max(cluster.transport.now, busy)
        done = start + model.batch_overhead + len(msg.records) * model.per_record
        self.exec_busy[pid] = done

        def apply() -> None:
            if self.dead:
                return
            status, lsn = replica.handle_append_entries(
                msg.epoch, msg.leader_commit_lsn, msg.records
            )
            ack = wire.AppendAck(
                pid, replica.epoch, self.node_id, lsn,
                wire.MSG_APPEND_ACK if status == "ack" else wire.MSG_APPEND_NACK,
            )
            cluster.send(self.node_id, src, ack.encode())

        cluster.transport.schedule_at(done, apply)

    # -- leader side -------------------------------------------------------

    def _on_ack(self, msg: wire.AppendAck) -> None:
        replica = self.replicas.get(msg.partition)
        if replica is None or replica.role != ROLE_LEADER:
            return
        self.cluster.in_flight[(self.node_id, msg.node_id)] -= 1
        if msg.msg_type == wire.MSG_APPEND_NACK:
            replica.reset_peer_cursor(msg.node_id, msg.last_flushed_lsn)
            self.kick_send(msg.partition)
            return
        replica.on_ack(msg.node_id, msg.last_flushed_lsn)
        self.pump_replies(msg.partition)
        self.kick_send(msg.partition)

    def submit(self, kind: int, key: bytes, value: bytes) -> SimTicket:
        pid = route(key, len(self.store.partitions))
        replica = self.replicas[pid]
        lsn = replica.dispatch(kind, key, value)
        ticket = SimTicket(
            kind, key, value, lsn=lsn, partition=pid,
            submit_time=self.cluster.transport.now,
        )
        self.tickets[(pid, lsn)] = ticket
        self.kick_executor(pid)
        self.kick_send(pid)
        return ticket

    def kick_executor(self, pid: int) -> None:
        replica = self.replicas[pid]
        if self.exec_scheduled.get(pid) or not replica.pending_exec:
            return
        self.exec_scheduled[pid] = True
        cluster = self.cluster
        model = cluster.exec_model
        start = max(cluster.transport.now, self.exec_busy.get(pid, 0.0))
        k = min(len(replica.pending_exec), replica.max_batch)
        done = start + model.batch_overhead + k * model.per_record
        self.exec_busy[pid] = done

        def finish() -> None:
            self.exec_scheduled[pid] = False
            if self.dead:
                return
            replica.exec_batch(k)
            self.pump_replies(pid)
            self.kick_send(pid)
            self.kick_executor(pid)

        cluster.transport.schedule_at(done, finish)

    def kick_send(self, pid: int) -> None:
        """Send stage: ship every unsent record now; never waits for acks."""
        if self.dead:
            return
        replica = self.replicas[pid]
        if replica.role != ROLE_LEADER:
            return
        for peer in replica.sent_to:
            if self.cluster.nodes[peer].dead:
                continue
            records = replica.take_unsent(peer)
            if records is None:
                self._maybe_schedule_heartbeat(pid, peer)
                continue
            msg = wire.AppendEntries(
                pid, replica.epoch, replica.commit_lsn_for_send(peer), records
            )
            self.cluster.in_flight[(self.node_id, peer)] += 1
            self.cluster.note_in_flight(self.node_id, peer)
            self.cluster.send(self.node_id, peer, msg.encode())

    def _maybe_schedule_heartbeat(self, pid: int, peer: int) -> None:
        replica = self.replicas[pid]
        if not replica.needs_commit_heartbeat(peer):
            return
        key = pid
        if self.hb_scheduled.get(key):
            return
        self.hb_scheduled[key] = True

        def beat() -> None:
            self.hb_scheduled[key] = False
            if self.dead or replica.role != ROLE_LEADER:
                return
            for p in replica.sent_to:
                if self.cluster.nodes[p].dead:
                    continue
                if replica.needs_commit_heartbeat(p) and replica.take_unsent(p) is None:
                    msg = wire.AppendEntries(
                        pid, replica.epoch, replica.commit_lsn_for_send(p), []
                    )
                    self.cluster.in_flight[(self.node_id, p)] += 1
                    self.cluster.send(self.node_id, p, msg.encode())

        self.cluster.transport.schedule(HEARTBEAT_INTERVAL, beat)

    def pump_replies(self, pid: int) -> None:
        replica = self.replicas[pid]
        for obj in replica.ready_replies():
            ticket = self.tickets.pop((pid, obj.lsn), None)
            if ticket is not None:
                ticket.done = True
                ticket.reply_time = self.cluster.transport.now
                ticket.result = obj.result
            if self.cluster.on_reply is not None:
                self.cluster.on_reply(self, pid, obj.lsn)


class SimCluster:
    """N nodes x P partitions over the simulated transport."""

    def __init__(
        self,
        root_dir: Path | str,
        nodes: int = 3,
        partitions: int = 1,
        seed: int = 0,
        link: LinkConfig | None = None,
        exec_model: ExecModel | None = None,
        leader_node: int = 0,
        max_batch: int = 64,
        cache_bytes: int = 16 * 1024 * 1024,
        segment_bytes: int = 64 * 1024 * 1024,
    ):
        self.root_dir = Path(root_dir)
        self.link = link if link is not None else LinkConfig()
        self.exec_model = exec_model if exec_model is not None else ExecModel()
        self.transport = SimTransport(seed)
        self.leader_map = {pid: leader_node for pid in range(partitions)}
        self.on_reply: Callable | None = None
        self.in_flight: dict[tuple[int, int], int] = {}
        self.max_in_flight: dict[tuple[int, int], int] = {}
        self._link_clock: dict[tuple[int, int], float] = {}
        self.nodes: dict[int, SimNode] = {}
        node_ids = list(range(nodes))
        for nid in node_ids:
            store = Store(
                self.root_dir / f"node_{nid}",
                partitions=partitions,
                cache_bytes=cache_bytes,
                seed=seed + nid,
                segment_bytes=segment_bytes,
            )
            node = SimNode(self, nid, store)
            for pid in range(partitions):
                peers = [p for p in node_ids if p != nid]
                role = ROLE_LEADER if nid == leader_node else ROLE_FOLLOWER
                node.replicas[pid] = PartitionReplica(
                    store.partitions[pid], nid, nodes,
                    role=role, peer_ids=peers, max_batch=max_batch,
                )
            self.nodes[nid] = node
        for a in node_ids:
            for b in node_ids:
                if a != b:
                    self.in_flight[(a, b)] = 0
                    self.max_in_flight[(a, b)] = 0

    # -- transport glue ----------------------------------------------------

    def send(self, src: int, dst: int, frame: bytes) -> None:
        if self.nodes[src].dead or self.nodes[dst].dead:
            return
        rng = self.transport.rng
        if self.link.drop_prob and rng.random() < self.link.drop_prob:
            return
        copies = 1
        if self.link.dup_prob and rng.random() < self.link.dup_prob:
            copies = 2
        for _ in range(copies):
            delay = self.link.delay
            if self.link.jitter:
                delay += rng.uniform(0, self.link.jitter)
            # FIFO per link, like a TCP connection: never deliver out of order
            at = max(self.transport.now + delay, self._link_clock.get((src, dst), 0.0))
            self._link_clock[(src, dst)] = at
            self.transport.schedule_at(at, lambda f=frame: self.nodes[dst].handle_frame(src, f))

    def note_in_flight(self, src: int, dst: int) -> None:
        cur = self.in_flight[(src, dst)]
        if cur > self.max_in_flight[(src, dst)]:
            self.max_in_flight[(src, dst)] = cur

    # -- client operations ----------------------------------------------------

    def leader_for(self, key: bytes) -> SimNode:
        pid = route(key, len(self.leader_map))
        return self.nodes[self.leader_map[pid]]

    def put(self, key: bytes, value: bytes) -> SimTicket:
        return self.leader_for(key).submit(KIND_PUT, key, value)

    def delete(self, key: bytes) -> SimTicket:
        return self.leader_for(key).submit(KIND_DELETE, key, b"")

    def get(self, key: bytes, node_id: int | None = None) -> bytes | None:
        node = self.leader_for(key) if node_id is None else self.nodes[node_id]
        return node.store.get(key)

    def read_follower(
        self, node_id: int, key: bytes, read_view_lsn: int, timeout: float = 5.0
    ) -> bytes | None:
        """Follower read through the freshness gate; pumps while blocked."""
        node = self.nodes[node_id]
        pid = route(key, len(node.store.partitions))
        replica = node.replicas[pid]
        deadline = self.transport.now + timeout
        while True:
            decision = replica.read_gate(read_view_lsn)
            if decision.action == GATE_REJECT:
                raise ReadRejectedError(f"view lsn {read_view_lsn} beyond log")
            if decision.action != GATE_BLOCK:
                return node.store.partitions[pid].get(key)
            if self.transport.now >= deadline or not self.transport.pending():
                raise ReadRejectedError("read gate timeout")
            self.step()

    # -- control -----------------------------------------------------------------

    def step(self) -> None:
        """Deliver exactly the next simulated event."""
        if self.transport._heap:
            when = self.transport._heap[0][0]
            self.transport.run(until=when)

    def run(self, until: float | None = None) -> None:
        self.transport.run(until)

    def run_idle(self) -> None:
        self.transport.run()

    def crash(self, node_id: int) -> None:
        self.nodes[node_id].dead = True

    def promote(self, node_id: int, partition: int) -> None:
        node = self.nodes[node_id]
        peer_flushed = {
            nid: other.replicas[partition].state.flushed
            for nid, other in self.nodes.items()
            if nid != node_id and not other.dead
        }
        node.replicas[partition].promote(peer_flushed)
        self.leader_map[partition] = node_id
        node.kick_send(partition)

    def freshness(self, partition: int, follower: int) -> float:
        leader = self.nodes[self.leader_map[partition]]
        blsn = self.nodes[follower].replicas[partition].state.flushed
        plsn = leader.replicas[partition].state.flushed
        return freshness_score(blsn, plsn)

    def close(self) -> None:
        for node in self.nodes.values():
            node.store.close()
