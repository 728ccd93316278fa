"""Closed-loop READ workloads over the simulator, one per sharing mode.

Every connection keeps exactly one READ of ``msg_size`` bytes outstanding
and issues the next as soon as the previous one is reported complete.
Throughput counts bytes completed inside the measurement window that
follows ``warmup``.
"""

from __future__ import annotations

import random

from ..daemon import Cluster
from ..ipc import Op, RequestRecord
from ..verbs import Fabric, RemoteRef, Sge, TransportMode, Verb, WorkRequest
from .accounting import resource_accounting
from .locked import LockedQpAdapter
from .report import MetricsReport, Row
from .scenario import BenchScenario, Mode

NS = 1e9


class _Window:
    def __init__(self, start: float, end: float):
        self.start = start
        self.end = end
        self.bytes = 0
        self.ops = 0
        self.latency = 0.0

    def record(self, now: float, nbytes: int, latency: float) -> None:
        if self.start <= now <= self.end:
            self.bytes += nbytes
            self.ops += 1
            self.latency += latency

    def throughput(self) -> float:
        return self.bytes / ((self.end - self.start) / NS)

    def mean_latency(self) -> float:
        return self.latency / self.ops if self.ops else 0.0


def _fabric(scn: BenchScenario) -> Fabric:
    fabric = Fabric(scn.sim.nic, scn.sim.fabric, auto_progress=False)
    fabric.add_node("client", arena_bytes=64 << 20)
    fabric.add_node("server", arena_bytes=64 << 20)
    return fabric


def _naive_point(scn: BenchScenario, n: int) -> tuple[_Window, float]:
    fabric = _fabric(scn)
    rng = random.Random(scn.seed * 1_000_003 + n)
    cq = fabric.create_cq("client")
    scq = fabric.create_cq("server")
    local = fabric.register_mr("client", scn.msg_size)
    remote = fabric.register_mr("server", scn.remote_bytes)
    slots = scn.remote_bytes // scn.msg_size
    qps = []
    for _ in range(n):
        qa = fabric.create_qp("client", TransportMode.RC, cq, sq_depth=4, rq_depth=1)
        qb = fabric.create_qp("server", TransportMode.RC, scq, sq_depth=4, rq_depth=1)
        fabric.connect_qp(qa, qb)
        qps.append(qa)
    start = scn.warmup * NS
    window = _Window(start, start + scn.duration * NS)
    issued = [0.0] * n

    def post(i: int) -> None:
        off = rng.randrange(slots) * scn.msg_size
        issued[i] = fabric.now
        fabric.post_send(qps[i], WorkRequest(i, Verb.READ, Sge(local.mr_id, 0, scn.msg_size),
                                             remote=RemoteRef(remote.rkey, off)))

    def on_cqe(queue) -> None:
        while queue.entries:
            cqe = queue.entries.popleft()
            window.record(fabric.now, cqe.byte_count, fabric.now - issued[cqe.wr_id])
            post(cqe.wr_id)

    cq.add_listener(on_cqe)
    for i in range(n):
        post(i)
    nic = fabric.node("client").nic
    fabric.run(until=start)
    nic.reset_stats()
    fabric.run(until=window.end)
    return window, nic.hit_rate()


def _locked_point(scn: BenchScenario, n: int, *, locking: bool = True) -> tuple[_Window, float]:
    fabric = _fabric(scn)
    threads = min(scn.threads, n)
    adapter = LockedQpAdapter(scn.q or 1, threads, penalty_ns=scn.lock_penalty_ns,
                              hold_ns=scn.lock_hold_ns, locking=locking)
    rng = random.Random(scn.seed * 1_000_003 + n)
    scq = fabric.create_cq("server")
    local = fabric.register_mr("client", scn.msg_size)
    remote = fabric.register_mr("server", scn.remote_bytes)
    slots = scn.remote_bytes // scn.msg_size
    qps, cqs = [], []
    for _ in range(adapter.qp_count):
        cq = fabric.create_cq("client")
        qa = fabric.create_qp("client", TransportMode.RC, cq, sq_depth=n + 1, rq_depth=1)
        qb = fabric.create_qp("server", TransportMode.RC, scq, sq_depth=4, rq_depth=1)
        fabric.connect_qp(qa, qb)
        qps.append(qa)
        cqs.append(cq)
    start = scn.warmup * NS
    window = _Window(start, start + scn.duration * NS)
    issued = [0.0] * n
    owner = [i % threads for i in range(n)]

    def post(conn: int, ready_at: float) -> None:
        thread = owner[conn]
        at = adapter.acquire_at(thread, ready_at)
        adapter.began(thread)
        off = rng.randrange(slots) * scn.msg_size
        fabric.post_send(qps[adapter.qp_of(thread)],
                         WorkRequest(conn, Verb.READ, Sge(local.mr_id, 0, scn.msg_size),
                                     remote=RemoteRef(remote.rkey, off)), at=at)

    def on_cqe(queue) -> None:
        while queue.entries:
            cqe = queue.entries.popleft()
            window.record(fabric.now, cqe.byte_count, fabric.now - issued[cqe.wr_id])
            issued[cqe.wr_id] = fabric.now
            adapter.finished(owner[cqe.wr_id])
            post(cqe.wr_id, fabric.now)

    for cq in cqs:
        cq.add_listener(on_cqe)
    for conn in range(n):
        post(conn, 0.0)
    nic = fabric.node("client").nic
    fabric.run(until=start)
    nic.reset_stats()
    fabric.run(until=window.end)
    _locked_point.last_adapter = adapter
    return window, nic.hit_rate()


def _raas_point(scn: BenchScenario, n: int) -> tuple[_Window, float]:
    cluster = Cluster(scn.sim, auto_progress=False)
    cluster.add_node("client", arena_bytes=128 << 20)
    server = cluster.add_node("server", arena_bytes=128 << 20)
    daemon = cluster.start_daemon("client")
    cluster.start_daemon("server")
    fabric = cluster.fabric
    apps = min(scn.threads, n)
    buffers = [fabric.register_mr("client", scn.msg_size, owner=f"app{a}") for a in range(apps)]
    vcs = []
    done: list = []
    for i in range(n):
        vc = cluster.connect(daemon, f"app{i % apps}", server)
        vc.channel.add_listener(lambda _ch, vc=vc: done.append(vc))
        vcs.append(vc)
    seq = [0] * n
    issued = [0.0] * n
    index = {id(vc): i for i, vc in enumerate(vcs)}

    def enqueue(i: int, op: Op, region: int = 0, length: int = 0) -> None:
        seq[i] += 1
        issued[i] = fabric.now
        vc = vcs[i]
        if not vc.request_ring.enqueue(RequestRecord(op, vc.fd, region, 0, length, 0, seq[i])):
            raise RuntimeError("request ring overflow in closed loop")
        daemon.submit(vc)

    for i in range(n):
        enqueue(i, Op.CONNECT)
    start = scn.warmup * NS
    window = _Window(start, start + scn.duration * NS)
    nic = fabric.node("client").nic
    reset = False
    while fabric.now < window.end:
        while daemon.step():
            pass
        batch, done[:] = list(done), []
        for vc in batch:
            i = index[id(vc)]
            while True:
                resp = vc.response_ring.dequeue()
                if resp is None:
                    break
                if resp.op == Op.READ:
                    window.record(fabric.now, resp.byte_count, fabric.now - issued[i])
                enqueue(i, Op.READ, buffers[i % apps].mr_id, scn.msg_size)
        while daemon.step():
            pass
        if not reset and fabric.now >= start:
            nic.reset_stats()
            reset = True
        fabric.run(until=fabric.now + scn.tick_ns)
    return window, nic.hit_rate()


def run_point(scn: BenchScenario, n: int) -> Row:
    if scn.mode is Mode.NAIVE:
        window, hit = _naive_point(scn, n)
    elif scn.mode is Mode.RAAS:
        window, hit = _raas_point(scn, n)
    else:
        window, hit = _locked_point(scn, n)
    mem, cpu = resource_accounting(scn.mode, n, scn.sim, scn.q or 1)
    return Row(n, window.throughput(), window.mean_latency(), mem, cpu, hit)


def run_scenario(scn: BenchScenario) -> MetricsReport:
    scn.validate()
    report = MetricsReport(scn.name, scn.mode.value)
    for n in scn.connections:
        report.rows.append(run_point(scn, n))
    return report


def lock_free_point(scn: BenchScenario, n: int) -> Row:
    """Per-thread QPs with the same thread model but no mutex."""
    window, hit = _locked_point(scn.with_(q=1), n, locking=False)
    return Row(n, window.throughput(), window.mean_latency(), 0.0, 0.0, hit)
