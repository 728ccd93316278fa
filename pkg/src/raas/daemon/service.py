"""The per-node RDMA service: workers, poller and virtual connections.

Ownership, which is what keeps the data path free of locks:

* a worker owns the request rings of its connections, the send side of the
  shared QPs of its shard, its staging and pull pools, and the sender-side
  allocator of each peer receive pool it writes into;
* the poller owns the daemon CQ, the SRQ, the inbox and every response ring.

They talk through single-producer/single-consumer object rings: each shared
QP carries a ring of WR contexts (worker to poller, in posting order, which
is also completion order on RC), and each worker has a command ring (poller
to worker) and an event ring (worker to poller).  Connection tables change
only under the cluster's control-plane mutex and are published by swapping
in a fresh dict, so readers never block.
"""

from __future__ import annotations

import collections
import enum
import itertools
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Optional

from ..config import DaemonConfig, PolicyConfig
from ..errors import BatchError, RaasError, Status
from ..ipc import END_OF_MESSAGE, ZERO_COPY, EventChannel, ObjectRing, Op, RequestRecord, \
    ResponseRecord, SpscRing
from ..verbs import (
    CQE_BYTES,
    QP_CONTEXT_BYTES,
    WQE_BYTES,
    Dest,
    Extents,
    MemoryRegion,
    RemoteRef,
    Sge,
    Side,
    TransportMode,
    Verb,
    WorkRequest,
)
from .addr import Addr
from .flags import Flags, check_flags
from .policy import LoadStats, LoadTracker, select_path
from .wire import HEADER_SIZE, PULL_BIT, Header, Kind, encode_wr, pack_wr_id, unpack_wr_id

CTX_RING = 4096
CMD_RING = 4096
CQ_DEPTH = 16384
POLL_BATCH = 64

METRICS_HEADER = "ts,node,qps_active,cache_hit_rate,msgs,bytes,mean_ns,cpu_load,mem_units"


class VcState(enum.Enum):
    CONNECTING = "CONNECTING"
    OPEN = "OPEN"
    CLOSED = "CLOSED"


@dataclass(eq=False)
class Segment:
    """Inbound message bytes held in daemon memory until the app is done."""

    mr: Optional[MemoryRegion]
    offset: int
    length: int
    release: tuple = ()
    ready: bool = True


@dataclass(eq=False)
class VirtualConnection:
    vqpn: int
    fd: int
    owner_app: str
    dest: Addr
    dest_node: str
    shared_qp: int
    flags_default: Flags
    transport: TransportMode
    worker: int
    request_ring: SpscRing
    response_ring: SpscRing
    channel: EventChannel
    state: VcState = VcState.CONNECTING
    peer_vqpn: Optional[int] = None
    peer_closed: bool = False
    # poller-owned
    inbound: deque = field(default_factory=deque)
    waiting: deque = field(default_factory=deque)
    lent: Optional[Segment] = None
    backlog: deque = field(default_factory=deque)
    msgs_in: int = 0
    # far end of a connection nobody accepted: inbound data is discarded
    sink: bool = False


class Ctx:
    """What the poller needs to know about one posted WR."""

    USER, INTERNAL, PULL_NOTICE, PULL_READ, READ_OP, CLOSE = range(6)
    __slots__ = ("kind", "vc", "seq", "length", "staging", "aux", "posted_at", "void")

    def __init__(self, kind, vc, seq=0, length=0, staging=-1, aux=None, posted_at=0.0):
        self.kind = kind
        self.vc = vc
        self.seq = seq
        self.length = length
        self.staging = staging
        self.aux = aux
        self.posted_at = posted_at
        self.void = False


@dataclass(eq=False)
class Link:
    """One end of a shared RC QP pair between two daemons."""

    peer_node: Optional[str]
    index: int
    qp_id: int
    owner: int
    local_pool: Optional[MemoryRegion] = None
    remote_rkey: int = 0
    remote_pool_size: int = 0
    remote_alloc: Optional[Extents] = None
    inflight: ObjectRing = field(default_factory=lambda: ObjectRing(CTX_RING))
    deferred: deque = field(default_factory=deque)

    @property
    def outstanding(self) -> int:
        return len(self.inflight)


class _Outbox:
    """SPSC ring plus a producer-local overflow list, so puts never fail."""

    def __init__(self, capacity: int):
        self.ring: ObjectRing = ObjectRing(capacity)
        self._overflow: deque = deque()

    def put(self, item) -> None:
        if self._overflow or not self.ring.enqueue(item):
            self._overflow.append(item)

    def flush(self) -> None:
        while self._overflow and self.ring.enqueue(self._overflow[0]):
            self._overflow.popleft()

    def pending(self) -> int:
        return len(self._overflow) + len(self.ring)


_DEFER = object()


class Worker:
    """Drains request rings and turns requests into batched WRs."""

    def __init__(self, daemon: "Daemon", index: int):
        self.daemon = daemon
        self.index = index
        self.fabric = daemon.fabric
        self.node = daemon.node
        self.ready: deque[int] = deque()
        self.doorbell = EventChannel(index)
        self.commands = ObjectRing(CMD_RING)     # poller -> worker
        self.events = _Outbox(CMD_RING)          # worker -> poller
        cfg = daemon.config
        self.staging_mr = daemon._register(cfg.staging_bytes)
        self.staging = Extents(cfg.staging_bytes)
        self.pull_mr = daemon._register(cfg.pull_pool_bytes)
        self.pull = Extents(cfg.pull_pool_bytes)
        self.pull_waiting: deque = deque()
        self.busy_ns = 0.0
        self.posted = 0
        self.batches = 0
        # posted WRs by verb, e.g. to see what the policy picked
        self.verbs: collections.Counter = collections.Counter()
        self.thread: Optional[threading.Thread] = None
        # test hook: called between dequeue and post
        self.pause_hook = None

    def kick(self, fd: int) -> None:
        self.ready.append(fd)
        self.doorbell.signal()

    def idle(self) -> bool:
        return (not self.ready and not len(self.commands) and not self.events.pending()
                and not self.pull_waiting
                and not any(link.deferred for link in self.daemon._owned_links(self.index)))

    # -- main entry --------------------------------------------------------

    def drain(self) -> int:
        """One pass over commands, deferred work and ready rings."""
        daemon = self.daemon
        batches: dict[int, list] = {}
        work = self._run_commands(batches)
        for link in daemon._owned_links(self.index):
            while link.deferred:
                vc, req = link.deferred[0]
                if self._process(vc, req, batches) is _DEFER:
                    break
                link.deferred.popleft()
                work += 1
        window = daemon.policy.batching_window
        vcs = daemon._vcs_by_fd
        seen = set()
        for _ in range(len(self.ready)):
            key = self.ready.popleft()
            if key in seen:
                continue
            seen.add(key)
            vc = vcs.get(key)
            if vc is None:
                continue
            link = daemon._link_for(vc)
            ring = vc.request_ring
            while True:
                if link is not None and len(batches.get(link.qp_id, ())) >= window:
                    self.ready.append(key)  # more next round
                    break
                req = ring.dequeue()
                if req is None:
                    break
                work += 1
                self.busy_ns += daemon.config.worker_cpu_ns
                if link is not None and link.deferred:
                    link.deferred.append((vc, req))
                elif self._process(vc, req, batches) is _DEFER:
                    link.deferred.append((vc, req))
        if self.pause_hook is not None and batches:
            self.pause_hook(self)
        posted = self._post(batches)
        self.events.flush()
        return work + posted

    # -- request handling --------------------------------------------------

    def _respond(self, vc, req, status, byte_count=0) -> None:
        self.events.put(("respond", vc, ResponseRecord(req.op, req.fd, req.seq, status,
                                                      byte_count)))

    def _process(self, vc: VirtualConnection, req: RequestRecord, batches):
        op = req.op
        try:
            if op == Op.CONNECT:
                if vc.state is VcState.CONNECTING:
                    vc.state = VcState.OPEN
                self._respond(vc, req, Status.OK if vc.state is VcState.OPEN else Status.BAD_FD)
                return None
            if vc.state is not VcState.OPEN:
                self._respond(vc, req, Status.BAD_FD)
                return None
            if op == Op.SEND:
                return self._send(vc, req, batches)
            if op == Op.RECV_READY:
                if req.flags & ZERO_COPY:
                    self._app_region(vc, req.region, 0, 1, Status.BAD_MR)
                self.events.put(("recv", vc, req))
                return None
            if op == Op.READ:
                return self._read(vc, req, batches)
            if op == Op.CLOSE:
                return self._close(vc, req, batches)
            raise RaasError(Status.BAD_REQUEST, f"unknown op {op}")
        except RaasError as exc:
            self._respond(vc, req, exc.status)
            return None

    def _app_region(self, vc, region: int, offset: int, length: int,
                    status: Status = Status.BAD_LKEY) -> MemoryRegion:
        mr = self.fabric.node(self.node).mrs.get(region)
        if mr is None or mr.owner != vc.owner_app:
            raise RaasError(status, f"region {region} does not belong to {vc.owner_app}")
        if offset < 0 or offset + length > mr.length:
            raise RaasError(status, "request range outside its region")
        return mr

    def _send(self, vc, req, batches):
        if req.length < 1:
            raise RaasError(Status.BAD_LENGTH, "empty send")
        mr = self._app_region(vc, req.region, req.offset, req.length)
        if vc.peer_closed:
            raise RaasError(Status.PEER_CLOSED, "peer closed the connection")
        daemon = self.daemon
        flags = int(vc.flags_default) if req.flags == 0 else int(req.flags)
        mode, verb = select_path(req.length, flags, daemon.load_stats(),
                                 daemon.cluster.load_stats(vc.dest_node), daemon.policy)
        if mode is TransportMode.UD or vc.transport is TransportMode.UD:
            if verb is not Verb.SEND:
                raise RaasError(Status.CONTRADICTORY_FLAGS, "UD carries SEND only")
            return self._send_ud(vc, req, mr, batches)
        link = daemon._link_for(vc)
        if verb is Verb.SEND:
            if req.length + HEADER_SIZE > daemon.config.srq_buffer_bytes:
                raise RaasError(Status.MSG_TOO_LARGE, "SEND payload exceeds the receive buffer")
            return self._message(link, vc, Header(Kind.DATA, c=req.length), batches,
                                 Ctx.USER, req.seq, req.length, payload=(mr, req.offset))
        if verb is Verb.WRITE:
            if req.length > link.remote_pool_size:
                raise RaasError(Status.MSG_TOO_LARGE, "message exceeds the peer receive pool")
            if not self._room(link, batches, 2):
                return _DEFER
            off = link.remote_alloc.try_alloc(req.length)
            if off is None:
                return _DEFER
            staged = self._stage(Header(Kind.WRITE_NOTICE, a=link.index, b=off, c=req.length))
            if staged is None:
                link.remote_alloc.free(off)
                return _DEFER
            wr = encode_wr(vc, Verb.WRITE, Sge(mr.mr_id, req.offset, req.length), seq=req.seq,
                           remote=RemoteRef(link.remote_rkey, off))
            self._add(batches, link, wr, Ctx(Ctx.INTERNAL, vc, req.seq))
            notice = WorkRequest(pack_wr_id(vc.vqpn, 0), Verb.SEND,
                                 Sge(self.staging_mr.mr_id, staged, HEADER_SIZE),
                                 imm_data=vc.vqpn)
            self._add(batches, link, notice, Ctx(Ctx.USER, vc, req.seq, req.length, staged,
                                                 aux=("pool", off)))
            return None
        # READ: the peer pulls straight out of the app's region
        return self._message(link, vc, Header(Kind.PULL, a=mr.remote_key, b=req.offset,
                                              c=req.length, d=req.seq),
                             batches, Ctx.PULL_NOTICE, req.seq, req.length)

    def _send_ud(self, vc, req, mr, batches):
        daemon = self.daemon
        if req.length + HEADER_SIZE > daemon.fabric.nic_config.mtu:
            raise RaasError(Status.MSG_TOO_LARGE, "datagram exceeds the MTU")
        link = daemon.ud_links[self.index]
        peer = daemon.cluster.daemon_at(vc.dest_node)
        return self._message(link, vc, Header(Kind.DATA, c=req.length), batches, Ctx.USER,
                             req.seq, req.length, payload=(mr, req.offset),
                             dest=Dest(peer.node, peer.ud_links[0].qp_id))

    def _read(self, vc, req, batches):
        mr = self._app_region(vc, req.region, req.offset, req.length)
        link = self.daemon._link_for(vc)
        if link is None:
            raise RaasError(Status.ILLEGAL_VERB, "READ needs an RC connection")
        if req.length < 1 or req.length > link.remote_pool_size:
            raise RaasError(Status.BAD_LENGTH, "READ length outside the peer pool")
        if not self._room(link, batches, 1):
            return _DEFER
        wr = encode_wr(vc, Verb.READ, Sge(mr.mr_id, req.offset, req.length), seq=req.seq,
                       remote=RemoteRef(link.remote_rkey, 0))
        self._add(batches, link, wr, Ctx(Ctx.READ_OP, vc, req.seq, req.length))
        return None

    def _close(self, vc, req, batches):
        link = self.daemon._link_for(vc)
        if link is None:
            vc.state = VcState.CLOSED
            self.events.put(("closed", vc, req))
            return None
        result = self._message(link, vc, Header(Kind.CLOSE), batches, Ctx.CLOSE, req.seq)
        if result is None:
            vc.state = VcState.CLOSED
        return result

    # -- WR building ---------------------------------------------------------

    def _room(self, link: Link, batches, n: int) -> bool:
        pending = len(batches.get(link.qp_id, ()))
        return link.outstanding + pending + n < link.inflight.capacity

    def _stage(self, header: Header, payload=None, length: int = 0) -> Optional[int]:
        off = self.staging.try_alloc(HEADER_SIZE + length)
        if off is None:
            return None
        view = self.staging_mr.view
        header.pack_into(view, off)
        if length:
            src, src_off = payload
            view[off + HEADER_SIZE:off + HEADER_SIZE + length] = src.view[src_off:src_off + length]
            self.busy_ns += self.fabric.memcpy_cost(length)
        return off

    def _message(self, link, vc, header, batches, kind, seq, length=0, payload=None, dest=None):
        """Queue a daemon SEND carrying ``header`` (and payload bytes)."""
        if not self._room(link, batches, 1):
            return _DEFER
        body = length if payload is not None else 0
        off = self._stage(header, payload, body)
        if off is None:
            return _DEFER
        wr = WorkRequest(pack_wr_id(vc.vqpn, seq), Verb.SEND,
                         Sge(self.staging_mr.mr_id, off, HEADER_SIZE + body),
                         imm_data=vc.vqpn, dest=dest)
        self._add(batches, link, wr, Ctx(kind, vc, seq, length, off))
        return None

    def _add(self, batches, link: Link, wr: WorkRequest, ctx: Ctx) -> None:
        batches.setdefault(link.qp_id, []).append((wr, ctx))

    def _post(self, batches) -> int:
        daemon = self.daemon
        total = 0
        for qp_id, items in batches.items():
            link = daemon._links_by_qp[qp_id]
            now = self.fabric.now
            for _, ctx in items:
                ctx.posted_at = now
                link.inflight.enqueue(ctx)
            wrs = [wr for wr, _ in items]
            self.busy_ns += daemon.config.doorbell_cpu_ns
            try:
                accepted = self.fabric.post_batch(qp_id, wrs)
            except BatchError as exc:
                accepted = exc.index
                for _, ctx in items[accepted:]:
                    ctx.void = True
                    self._abandon(ctx, exc.cause.status)
            self.posted += accepted
            self.batches += 1
            for wr in wrs[:accepted]:
                self.verbs[wr.verb] += 1
            total += accepted
        return total

    def _abandon(self, ctx: Ctx, status: Status) -> None:
        if ctx.staging >= 0:
            self.staging.free(ctx.staging)
        if ctx.kind in (Ctx.USER, Ctx.PULL_NOTICE, Ctx.READ_OP, Ctx.CLOSE):
            op = {Ctx.CLOSE: Op.CLOSE, Ctx.READ_OP: Op.READ}.get(ctx.kind, Op.SEND)
            self.events.put(("respond", ctx.vc, ResponseRecord(op, ctx.vc.fd, ctx.seq, status)))
        if ctx.aux and ctx.aux[0] == "pool":
            link = self.daemon._link_for(ctx.vc)
            link.remote_alloc.free(ctx.aux[1])
        if ctx.kind == Ctx.PULL_READ:
            self.pull.free(ctx.aux[0])

    # -- commands from the poller -------------------------------------------

    def _run_commands(self, batches) -> int:
        n = 0
        daemon = self.daemon
        while True:
            cmd = self.commands.dequeue()
            if cmd is None:
                break
            n += 1
            kind = cmd[0]
            if kind == "free_staging":
                self.staging.free(cmd[1])
            elif kind == "free_pool":
                link = daemon._link(cmd[1], cmd[2])
                if link is not None and link.remote_alloc.owns(cmd[3]):
                    link.remote_alloc.free(cmd[3])
            elif kind == "free_pull":
                self.pull.free(cmd[1])
            elif kind == "pull":
                self.pull_waiting.append(cmd[1:])
            elif kind in ("credit", "pull_done"):
                self.pull_waiting.append(cmd)
        # pulls and replies share one FIFO so a stalled pull keeps its order
        while self.pull_waiting:
            item = self.pull_waiting[0]
            if item[0] == "credit":
                _, vc, index, off, length = item
                link = daemon._link_for(vc)
                res = None
                if link is not None:
                    res = self._message(link, vc, Header(Kind.CREDIT, a=index, b=off, c=length),
                                        batches, Ctx.INTERNAL, 0)
            elif item[0] == "pull_done":
                _, vc, seq, length = item
                link = daemon._link_for(vc)
                res = None
                if link is not None:
                    res = self._message(link, vc, Header(Kind.PULL_DONE, c=length, d=seq),
                                        batches, Ctx.INTERNAL, 0)
            else:
                res = self._start_pull(batches, *item)
            if res is _DEFER:
                break
            self.pull_waiting.popleft()
            n += 1
        return n

    def _start_pull(self, batches, vc, rkey, offset, length, seq):
        link = self.daemon._link_for(vc)
        if link is None:
            return None
        if not self._room(link, batches, 1):
            return _DEFER
        poff = self.pull.try_alloc(length)
        if poff is None:
            return _DEFER
        wr = WorkRequest(pack_wr_id(vc.vqpn, PULL_BIT | (poff // Extents.ALIGN)), Verb.READ,
                         Sge(self.pull_mr.mr_id, poff, length), remote=RemoteRef(rkey, offset))
        self._add(batches, link, wr, Ctx(Ctx.PULL_READ, vc, seq, length, aux=(poff,)))
        return None

    # -- thread body ---------------------------------------------------------

    def run_forever(self, stop: threading.Event) -> None:
        # the poller decides when shutdown is quiescent; until then it may
        # still hand us commands produced by late completions
        done = self.daemon._done
        while True:
            if self.drain() == 0:
                if done.is_set():
                    self.drain()
                    return
                self.doorbell.wait(0.001)


class Poller:
    """Owns the CQ, the SRQ and all response rings."""

    def __init__(self, daemon: "Daemon"):
        self.daemon = daemon
        self.fabric = daemon.fabric
        cfg = daemon.config
        self.cq = daemon.cq
        self.srq = daemon.srq
        self.rx_bufs: list[tuple] = []
        self.srq_mr = daemon._register(cfg.srq_depth * cfg.srq_buffer_bytes)
        self._free_rx: list[int] = []
        for i in range(cfg.srq_depth):
            self.rx_bufs.append((self.srq_mr, i * cfg.srq_buffer_bytes, cfg.srq_buffer_bytes,
                                 self.srq))
            self._post_rx(i)
        self.inbox_mr = daemon._register(cfg.inbox_bytes)
        self.inbox = Extents(cfg.inbox_bytes)
        self.unknown_vqpn = 0
        self.msgs = 0
        self.bytes = 0
        self.latency_ns = 0.0
        self.busy_ns = 0.0
        self.thread: Optional[threading.Thread] = None
        self._touched: set = set()
        self._backlogged: set = set()

    def add_ud_buffers(self, qp_id: int, count: int, size: int) -> None:
        mr = self.daemon._register(count * size)
        for i in range(count):
            self.rx_bufs.append((mr, i * size, size, qp_id))
            self._post_rx(len(self.rx_bufs) - 1)

    def _post_rx(self, index: int) -> None:
        mr, off, size, target = self.rx_bufs[index]
        self.fabric.post_recv(target, WorkRequest(index, Verb.RECV, Sge(mr.mr_id, off, size)))

    # -- main entry --------------------------------------------------------

    def poll(self) -> int:
        work = 0
        for worker in self.daemon.workers:
            while True:
                item = worker.events.ring.dequeue()
                if item is None:
                    break
                work += 1
                self._event(item)
        while True:
            cqes = self.fabric.poll_cq(self.cq, POLL_BATCH)
            for cqe in cqes:
                if cqe.side is Side.SEND_COMPLETION:
                    self._send_done(cqe)
                else:
                    self._recv_done(cqe)
            work += len(cqes)
            if len(cqes) < POLL_BATCH:
                break
        if self._free_rx and len(self.srq) < self.daemon.config.srq_low_watermark:
            for index in self._free_rx:
                self._post_rx(index)
            self._free_rx.clear()
        for vc in self._touched:
            self._deliver(vc)
        self._touched.clear()
        if self._backlogged:
            for vc in list(self._backlogged):
                self._flush_backlog(vc)
                if not vc.backlog:
                    self._backlogged.discard(vc)
        return work

    # -- responses -----------------------------------------------------------

    def _respond(self, vc: VirtualConnection, resp: ResponseRecord) -> None:
        if vc.backlog or not vc.response_ring.enqueue(resp):
            vc.backlog.append(resp)
            self._backlogged.add(vc)
            return
        vc.channel.signal()

    def _flush_backlog(self, vc) -> None:
        while vc.backlog and vc.response_ring.enqueue(vc.backlog[0]):
            vc.backlog.popleft()
            vc.channel.signal()

    def _event(self, item) -> None:
        kind, vc = item[0], item[1]
        if kind == "respond":
            self._respond(vc, item[2])
        elif kind == "recv":
            req = item[2]
            self._release_lent(vc)
            vc.waiting.append(req)
            self._touched.add(vc)
        elif kind == "closed":
            self._finish_close(vc, item[2])

    # -- completions ---------------------------------------------------------

    def _send_done(self, cqe) -> None:
        daemon = self.daemon
        link = daemon._links_by_qp.get(cqe.qp_id)
        if link is None:
            return
        ctx = link.inflight.dequeue()
        while ctx is not None and ctx.void:
            ctx = link.inflight.dequeue()
        if ctx is None:
            return
        worker = daemon.workers[link.owner]
        if ctx.staging >= 0:
            self._command(worker, ("free_staging", ctx.staging))
        vqpn, seq = unpack_wr_id(cqe.wr_id)
        vc = daemon._vcs_by_vqpn.get(vqpn)
        if vc is None or vc is not ctx.vc:
            self.unknown_vqpn += 1
            return
        ok = cqe.status is Status.OK
        kind = ctx.kind
        if kind == Ctx.PULL_READ:
            if ok:
                self._command(daemon.workers[vc.worker], ("pull_done", vc, ctx.seq, ctx.length))
            self._fill_pull(vc, ctx, ok)
            return
        if kind == Ctx.CLOSE:
            self._finish_close(vc, RequestRecord(Op.CLOSE, vc.fd, seq=ctx.seq))
            return
        if kind == Ctx.INTERNAL:
            return
        if not ok and ctx.aux and ctx.aux[0] == "pool":
            self._command(worker, ("free_pool", link.peer_node, link.index, ctx.aux[1]))
        if kind == Ctx.PULL_NOTICE and ok:
            return  # answered when the peer reports the pull finished
        op = Op.READ if kind == Ctx.READ_OP else Op.SEND
        count = ctx.length if ok else 0
        if ok:
            self.msgs += 1
            self.bytes += ctx.length
            self.latency_ns += cqe.timestamp - ctx.posted_at
        self._respond(vc, ResponseRecord(op, vc.fd, ctx.seq, cqe.status, count))

    def _fill_pull(self, vc, ctx, ok) -> None:
        poff = ctx.aux[0]
        for seg in vc.inbound:
            if not seg.ready and seg.release == ("pull_wait", ctx.seq):
                if ok:
                    worker = self.daemon.workers[vc.worker]
                    seg.mr, seg.offset, seg.length = worker.pull_mr, poff, ctx.length
                    seg.release = ("pull", vc.worker, poff)
                    seg.ready = True
                else:
                    vc.inbound.remove(seg)
                    self._command(self.daemon.workers[vc.worker], ("free_pull", poff))
                break
        self._touched.add(vc)

    def _recv_done(self, cqe) -> None:
        daemon = self.daemon
        index = cqe.wr_id
        mr, off, _, target = self.rx_bufs[index]
        recycle = True
        try:
            if cqe.status is not Status.OK or cqe.byte_count < HEADER_SIZE:
                return
            link = daemon._links_by_qp.get(cqe.qp_id)
            if link is not None and link.peer_node is not None:
                src = link.peer_node
            else:
                src = self.fabric.qp(cqe.src_qp).node if cqe.src_qp else None
            hdr = Header.unpack_from(mr.view, off)
            if hdr.kind is Kind.CREDIT:
                mine = daemon._link(src, hdr.a)
                if mine is not None:
                    self._command(daemon.workers[mine.owner], ("free_pool", src, hdr.a, hdr.b))
                return
            if hdr.kind is Kind.CLOSE:
                vc = daemon.cluster._peer_closed(daemon, src, cqe.imm_data)
                if vc is not None:
                    self._touched.add(vc)
                return
            vc = daemon._demux.get((src, cqe.imm_data))
            if vc is None:
                self.unknown_vqpn += 1
                if hdr.kind is Kind.WRITE_NOTICE:
                    self._return_pool(src, hdr)
                return
            if hdr.kind is Kind.DATA:
                length = hdr.c
                vc.msgs_in += 1
                dst = self.inbox.try_alloc(length)
                if dst is None:
                    # inbox full: lend the receive buffer itself
                    vc.inbound.append(Segment(mr, off + HEADER_SIZE, length, ("rx", index)))
                    recycle = False
                else:
                    self.inbox_mr.view[dst:dst + length] = \
                        mr.view[off + HEADER_SIZE:off + HEADER_SIZE + length]
                    self.busy_ns += self.fabric.memcpy_cost(length)
                    vc.inbound.append(Segment(self.inbox_mr, dst, length, ("inbox", dst)))
            elif hdr.kind is Kind.WRITE_NOTICE:
                pool_link = daemon._link(src, hdr.a)
                vc.msgs_in += 1
                vc.inbound.append(Segment(pool_link.local_pool, hdr.b, hdr.c,
                                          ("pool", hdr.a, hdr.b, hdr.c)))
            elif hdr.kind is Kind.PULL:
                vc.msgs_in += 1
                vc.inbound.append(Segment(None, 0, hdr.c, ("pull_wait", hdr.d), ready=False))
                self._command(daemon.workers[vc.worker], ("pull", vc, hdr.a, hdr.b, hdr.c, hdr.d))
            elif hdr.kind is Kind.PULL_DONE:
                self.msgs += 1
                self.bytes += hdr.c
                self._respond(vc, ResponseRecord(Op.SEND, vc.fd, hdr.d, Status.OK, hdr.c))
            self._touched.add(vc)
        finally:
            if recycle:
                self._free_rx.append(index)

    def _return_pool(self, src, hdr) -> None:
        # the connection is gone; hand the pool space straight back
        for vc in self.daemon._vcs_by_fd.values():
            if vc.dest_node == src and self.daemon._link_for(vc) is not None:
                self._command(self.daemon.workers[vc.worker], ("credit", vc, hdr.a, hdr.b, hdr.c))
                return

    def _command(self, worker: Worker, cmd) -> None:
        while not worker.commands.enqueue(cmd):
            # the worker is behind; let it catch up
            if self.daemon.threaded:
                time.sleep(0)
            else:
                worker.drain()
        worker.doorbell.signal()

    # -- delivery ------------------------------------------------------------

    def _release(self, vc, seg: Segment) -> None:
        rel = seg.release
        if not rel:
            return
        if rel[0] == "inbox":
            self.inbox.free(rel[1])
        elif rel[0] == "rx":
            self._free_rx.append(rel[1])
        elif rel[0] == "pool":
            self._command(self.daemon.workers[vc.worker], ("credit", vc) + rel[1:])
        elif rel[0] == "pull":
            self._command(self.daemon.workers[rel[1]], ("free_pull", rel[2]))
        seg.release = ()

    def _release_lent(self, vc) -> None:
        if vc.lent is not None:
            self._release(vc, vc.lent)
            vc.lent = None

    def _deliver(self, vc) -> None:
        if vc.sink:
            while vc.inbound and vc.inbound[0].ready:
                self._release(vc, vc.inbound.popleft())
            return
        while vc.waiting:
            req = vc.waiting[0]
            if vc.inbound and vc.inbound[0].ready:
                seg = vc.inbound[0]
                if req.flags & ZERO_COPY:
                    mr = self.fabric.node(self.daemon.node).mrs.get(req.region)
                    if mr is None:
                        resp = ResponseRecord(Op.RECV_READY, vc.fd, req.seq, Status.BAD_MR)
                    elif seg.length > mr.length:
                        resp = ResponseRecord(Op.RECV_READY, vc.fd, req.seq, Status.MR_TOO_SMALL,
                                              seg.length)
                    else:
                        mr.view[:seg.length] = seg.mr.view[seg.offset:seg.offset + seg.length]
                        self.busy_ns += self.fabric.memcpy_cost(seg.length)
                        vc.inbound.popleft()
                        self._release(vc, seg)
                        resp = ResponseRecord(Op.RECV_READY, vc.fd, req.seq, Status.OK,
                                              seg.length, mr.mr_id, 0, END_OF_MESSAGE | ZERO_COPY)
                else:
                    vc.inbound.popleft()
                    vc.lent = seg
                    resp = ResponseRecord(Op.RECV_READY, vc.fd, req.seq, Status.OK, seg.length,
                                          seg.mr.mr_id, seg.offset, END_OF_MESSAGE)
            elif not vc.inbound and (vc.peer_closed or vc.state is VcState.CLOSED):
                resp = ResponseRecord(Op.RECV_READY, vc.fd, req.seq, Status.PEER_CLOSED, 0)
            else:
                return
            vc.waiting.popleft()
            self._respond(vc, resp)

    def _finish_close(self, vc, req) -> None:
        self._release_lent(vc)
        while vc.inbound:
            seg = vc.inbound.popleft()
            if seg.ready:
                self._release(vc, seg)
        while vc.waiting:
            w = vc.waiting.popleft()
            self._respond(vc, ResponseRecord(Op.RECV_READY, vc.fd, w.seq,
                                             Status.CLOSED_WHILE_WAITING))
        self._respond(vc, ResponseRecord(Op.CLOSE, vc.fd, req.seq, Status.OK))
        self.daemon.cluster._forget(self.daemon, vc)

    def idle(self) -> bool:
        daemon = self.daemon
        if any(link.outstanding for link in daemon._links_by_qp.values()):
            return False
        if any(len(w.events.ring) for w in daemon.workers):
            return False
        return not self._backlogged

    def run_forever(self, stop: threading.Event) -> None:
        while True:
            if self.poll() == 0:
                if stop.is_set() and self.idle() and all(w.idle() for w in self.daemon.workers):
                    self.daemon._done.set()
                    return
                time.sleep(0.0001)


class Daemon:
    """One RDMA service instance per fabric node."""

    def __init__(self, cluster, node: str, config: DaemonConfig | None = None,
                 policy: PolicyConfig | None = None):
        self.cluster = cluster
        self.fabric = cluster.fabric
        self.node = node
        self.config = config or DaemonConfig()
        self.config.validate()
        self.policy = policy or cluster.config.policy
        self.policy.validate()
        self.owner = f"raasd@{node}"
        self.memory_bytes = 0
        self.cq = self.fabric.create_cq(node, CQ_DEPTH)
        self.srq = self.fabric.create_srq(node, self.config.srq_depth)
        self.memory_bytes += CQE_BYTES * CQ_DEPTH + WQE_BYTES * self.config.srq_depth
        self.workers = [Worker(self, i) for i in range(self.config.worker_count)]
        self.poller = Poller(self)
        self.load = LoadTracker(self.config.load_alpha, self.config.load_window_ns)
        self._busy_seen = 0.0
        # connection tables, replaced wholesale under the control mutex
        self._vcs_by_fd: dict[Any, VirtualConnection] = {}
        self._vcs_by_vqpn: dict[int, VirtualConnection] = {}
        self._demux: dict[tuple, VirtualConnection] = {}
        self._links: dict[tuple, Link] = {}
        self._links_by_qp: dict[int, Link] = {}
        self._owned: list[list[Link]] = [[] for _ in self.workers]
        self._vqpn_used: set[int] = set()
        self._vqpn_next = 0
        self._fds = itertools.count(3)
        self._rr = itertools.count()
        self.ud_links: list[Link] = []
        for i, _ in enumerate(self.workers):
            qp = self.fabric.create_qp(node, TransportMode.UD, self.cq, sq_depth=1024,
                                       rq_depth=self.config.ud_recv_depth)
            self.memory_bytes += QP_CONTEXT_BYTES + WQE_BYTES * (1024 + self.config.ud_recv_depth)
            link = Link(None, i, qp, i)
            self.ud_links.append(link)
            self._publish_link(link)
            self.poller.add_ud_buffers(qp, self.config.ud_recv_depth, self.fabric.nic_config.mtu)
        self.threaded = False
        self.running = True
        self._stop = threading.Event()
        self._done = threading.Event()

    # -- helpers -------------------------------------------------------------

    def _register(self, length: int) -> MemoryRegion:
        mr = self.fabric.register_mr(self.node, length, owner=self.owner)
        self.memory_bytes += length
        return mr

    def _publish_link(self, link: Link) -> None:
        links = dict(self._links_by_qp)
        links[link.qp_id] = link
        self._links_by_qp = links
        if link.peer_node is not None:
            by_key = dict(self._links)
            by_key[(link.peer_node, link.index)] = link
            self._links = by_key
        owned = list(self._owned[link.owner])
        owned.append(link)
        self._owned[link.owner] = owned

    def _owned_links(self, worker: int) -> list[Link]:
        return self._owned[worker]

    def _link(self, peer: str, index: int) -> Optional[Link]:
        return self._links.get((peer, index))

    def _link_for(self, vc: VirtualConnection) -> Optional[Link]:
        if vc.transport is TransportMode.UD:
            return self.ud_links[vc.worker]
        return self._links.get((vc.dest_node, self._link_index(vc.worker)))

    def _link_index(self, worker: int) -> int:
        return 0 if self.config.qps_per_node == 1 else worker

    @property
    def rc_qp_count(self) -> int:
        return len(self._links)

    def load_stats(self) -> LoadStats:
        return self.cluster.load_stats(self.node)

    def _account(self) -> None:
        busy = sum(w.busy_ns for w in self.workers) + self.poller.busy_ns
        delta = busy - self._busy_seen
        self._busy_seen = busy
        share = delta / (len(self.workers) + 1)
        self.load.record(self.fabric.now, share)
        self.cluster._publish_load(self.node, LoadStats(
            min(1.0, max(0.0, self.load.value(self.fabric.now))), self.memory_bytes,
            self.config.load_window_ns))

    # -- vqpn allocation -------------------------------------------------------

    def _alloc_vqpn(self) -> int:
        space = 1 << self.config.vqpn_bits
        if len(self._vqpn_used) >= space:
            raise RaasError(Status.VQPN_EXHAUSTED, f"all {space} vQPNs in use")
        v = self._vqpn_next
        while v in self._vqpn_used:
            v = (v + 1) % space
        self._vqpn_used.add(v)
        self._vqpn_next = (v + 1) % space
        return v

    def release_vqpn(self, vqpn: int) -> None:
        self._vqpn_used.discard(vqpn)

    def vqpn_alloc(self, app: str, dest, *, flags: int = 0,
                   fd: Optional[int] = None) -> VirtualConnection:
        """Create a virtual connection towards ``dest`` (control plane)."""
        with self.cluster.control:
            return self._new_vc(app, Addr.parse(dest), check_flags(flags), fd)

    def _new_vc(self, app: str, dest: Addr, flags: Flags, fd=None) -> VirtualConnection:
        if not self.running:
            raise RaasError(Status.SHUTDOWN, "daemon stopped")
        dest_node = self.cluster.resolve(dest)
        peer = self.cluster.daemon_at(dest_node)
        if dest_node == self.node:
            raise RaasError(Status.DEST_UNREACHABLE, "loopback connections are not supported")
        mode, _ = _split_mode(flags)
        vqpn = self._alloc_vqpn()
        worker = next(self._rr) % len(self.workers)
        if mode is TransportMode.UD:
            qp = self.ud_links[worker].qp_id
        else:
            qp = self.cluster._ensure_link(self, peer, self._link_index(worker)).qp_id
        cap = self.config.ring_capacity
        fd = next(self._fds) if fd is None else fd
        vc = VirtualConnection(vqpn, fd, app, dest, dest_node, qp, flags, mode, worker,
                               SpscRing(cap, RequestRecord), SpscRing(cap, ResponseRecord),
                               EventChannel(fd))
        self.memory_bytes += 2 * SpscRing.nbytes_for(cap)
        self.fabric.node(self.node).cpu_ns += self.config.vc_setup_ns
        by_fd = dict(self._vcs_by_fd)
        by_fd[(app, fd)] = vc
        self._vcs_by_fd = by_fd
        by_vqpn = dict(self._vcs_by_vqpn)
        by_vqpn[vqpn] = vc
        self._vcs_by_vqpn = by_vqpn
        return vc

    def _map_peer(self, vc: VirtualConnection, peer_node: str, peer_vqpn: int) -> None:
        vc.peer_vqpn = peer_vqpn
        demux = dict(self._demux)
        demux[(peer_node, peer_vqpn)] = vc
        self._demux = demux

    def _unmap(self, vc: VirtualConnection) -> None:
        by_fd = dict(self._vcs_by_fd)
        by_fd.pop((vc.owner_app, vc.fd), None)
        self._vcs_by_fd = by_fd
        by_vqpn = dict(self._vcs_by_vqpn)
        if by_vqpn.get(vc.vqpn) is vc:
            del by_vqpn[vc.vqpn]
        self._vcs_by_vqpn = by_vqpn
        if vc.peer_vqpn is not None:
            key = (vc.dest_node, vc.peer_vqpn)
            if self._demux.get(key) is vc:
                demux = dict(self._demux)
                del demux[key]
                self._demux = demux

    def submit(self, vc: VirtualConnection) -> None:
        """Client doorbell: ``vc`` has new records in its request ring."""
        self.workers[vc.worker].kick((vc.owner_app, vc.fd))

    # -- lifecycle -------------------------------------------------------------

    def step(self) -> int:
        """Stepped mode: one drain per worker plus one poll."""
        work = 0
        for worker in self.workers:
            work += worker.drain()
        work += self.poller.poll()
        self._account()
        return work

    def start(self) -> "Daemon":
        if self.threaded:
            return self
        self.threaded = True
        self._stop.clear()
        self._done.clear()
        for w in self.workers:
            w.thread = threading.Thread(target=w.run_forever, args=(self._stop,),
                                        name=f"raas-worker-{self.node}-{w.index}", daemon=True)
            w.thread.start()
        self.poller.thread = threading.Thread(target=self.poller.run_forever, args=(self._stop,),
                                              name=f"raas-poller-{self.node}", daemon=True)
        self.poller.thread.start()
        return self

    def alive_threads(self) -> int:
        threads = [w.thread for w in self.workers] + [self.poller.thread]
        return sum(1 for t in threads if t is not None and t.is_alive())

    def quiescent(self) -> bool:
        return (all(w.idle() for w in self.workers) and self.poller.idle()
                and all(len(vc.request_ring) == 0 for vc in self._vcs_by_fd.values()))

    def stop(self, timeout: float = 30.0) -> None:
        """Answer every accepted request, then release connections and QPs."""
        if not self.running:
            return
        if self.threaded:
            self._stop.set()
            for w in self.workers:
                w.doorbell.signal()
            for t in [w.thread for w in self.workers] + [self.poller.thread]:
                t.join(timeout)
            self.threaded = False
        else:
            for _ in range(100000):
                if self.step() == 0 and self.quiescent():
                    break
        self.running = False
        self.cluster._detach(self)

    def metrics_row(self) -> str:
        n = self.fabric.node(self.node)
        p = self.poller
        mean = p.latency_ns / p.msgs if p.msgs else 0.0
        from ..resources import naive_app_bytes
        units = self.memory_bytes / naive_app_bytes(self.fabric)
        return (f"{self.fabric.now:.1f},{self.node},{len(self._links_by_qp)},"
                f"{n.nic.hit_rate():.4f},{p.msgs},{p.bytes},{mean:.1f},"
                f"{self.load.value(self.fabric.now):.4f},{units:.3f}")


def _split_mode(flags: Flags) -> tuple[TransportMode, Optional[Verb]]:
    from .flags import split_flags
    mode, verb = split_flags(flags)
    return mode or TransportMode.RC, verb
