"""In-process lossless fabric driving the verbs queuing model in logical time.

Every node owns one NIC modelled as a FIFO single server.  A work request
turns into NIC jobs:

* an *issue* job on the requester (touches the QP context, moves outbound
  bytes for SEND/WRITE),
* a *receive* job on the responder (touches the context for SEND only;
  one-sided verbs pass through at zero cost so that per-QP order holds),
* a *completion* job on the requester when the ACK or READ response comes
  back (touches the context again, moves inbound bytes for READ).

Jobs start in logical-time order, so the NIC cache sees the true access
interleaving across queue pairs.  Unreliable transports complete locally
after the issue job and never retry.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import random
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, TextIO, Union

from ..config import FabricConfig, NicConfig
from ..errors import BatchError, RaasError, Status
from .arena import Arena
from .nic import NicModel
from .types import (
    CompletionEntry,
    MemoryRegion,
    Side,
    TransportMode,
    Verb,
    WorkRequest,
    is_legal,
    max_message,
)

TRACE_HEADER = "ts,node,qp,verb,bytes,cache_hit"

# host memory footprint of verbs objects, used for resource accounting
WQE_BYTES = 64
CQE_BYTES = 32
QP_CONTEXT_BYTES = 256
# pass as ``rnr_retry`` to wait for a receive indefinitely instead of failing
RNR_UNBOUNDED = -1


class QpState(enum.Enum):
    RESET = "RESET"
    READY = "READY"
    ERROR = "ERROR"


class CompletionQueue:
    def __init__(self, cq_id: int, node: str):
        self.cq_id = cq_id
        self.node = node
        self.entries: deque[CompletionEntry] = deque()
        self._listeners: list[Callable[["CompletionQueue"], None]] = []

    def add_listener(self, fn: Callable[["CompletionQueue"], None]) -> None:
        """Register a completion-channel callback, run inside the fabric."""
        self._listeners.append(fn)

    def _push(self, entry: CompletionEntry) -> None:
        self.entries.append(entry)
        for fn in self._listeners:
            fn(self)

    def __len__(self) -> int:
        return len(self.entries)


class SharedReceiveQueue:
    def __init__(self, srq_id: int, node: str, depth: int):
        self.srq_id = srq_id
        self.node = node
        self.depth = depth
        self.recv_queue: deque[WorkRequest] = deque()
        self.attached_qps: set[int] = set()
        # QPs whose head message waits for a receive (unbounded RNR)
        self.waiters: list = []

    def __len__(self) -> int:
        return len(self.recv_queue)


@dataclass(eq=False)
class QueuePair:
    qp_id: int
    node: str
    mode: TransportMode
    cq: CompletionQueue
    srq: Optional[SharedReceiveQueue]
    sq_depth: int
    rq_depth: int
    peer: Optional[int] = None
    state: QpState = QpState.RESET
    recv_queue: deque = field(default_factory=deque)
    outstanding: int = 0
    # in-order completion bookkeeping
    next_ssn: int = 0
    next_done: int = 0
    parked: dict = field(default_factory=dict)
    # inbound messages, processed strictly one at a time
    rx: deque = field(default_factory=deque)
    rx_busy: bool = False
    rnr_retry: int = 0
    rnr_waiting: bool = False


class _Inflight:
    __slots__ = ("qp", "wr", "ssn", "discount", "data", "done", "rnr_left", "target", "posted_at")

    def __init__(self, qp: QueuePair, wr: WorkRequest, ssn: int, rnr_left: int, posted_at: float):
        self.qp = qp
        self.wr = wr
        self.ssn = ssn
        self.discount = 1.0
        self.data: Optional[bytes] = None
        self.done = False
        self.rnr_left = rnr_left
        self.target: Optional[QueuePair] = None
        self.posted_at = posted_at


class _Job:
    __slots__ = ("qp_id", "access", "discount", "nbytes", "verb", "callback", "args")

    def __init__(self, qp_id, access, discount, nbytes, verb, callback, args):
        self.qp_id = qp_id
        self.access = access
        self.discount = discount
        self.nbytes = nbytes
        self.verb = verb
        self.callback = callback
        self.args = args


class Node:
    def __init__(self, name: str, arena_bytes: int, nic: NicModel):
        self.name = name
        self.arena = Arena(arena_bytes)
        self.nic = nic
        self.mrs: dict[int, MemoryRegion] = {}
        self.mrs_by_rkey: dict[int, MemoryRegion] = {}
        self.qps: set[int] = set()
        self.jobs: deque[_Job] = deque()
        self.nic_busy = False
        self.nic_busy_ns = 0.0
        self.cpu_ns = 0.0
        self.queue_bytes = 0
        self.wr_count = 0
        self.bytes_moved = 0

    @property
    def registered_bytes(self) -> int:
        return sum(mr.length for mr in self.mrs.values())


class Fabric:
    """Simulated cluster interconnect plus the verbs entry points.

    With ``auto_progress`` (the default) ``poll_cq`` first runs the event
    queue to quiescence, which makes the fabric behave like infinitely fast
    hardware in wall-clock terms while still accounting logical time.  The
    benchmark turns it off and advances time explicitly with ``run``.
    """

    def __init__(self, nic: NicConfig | None = None, config: FabricConfig | None = None,
                 *, auto_progress: bool = True, trace: TextIO | None = None):
        self.nic_config = nic or NicConfig()
        self.nic_config.validate()
        self.config = config or FabricConfig()
        self.config.validate()
        self.auto_progress = auto_progress
        self.now = 0.0
        self.nodes: dict[str, Node] = {}
        self._qps: dict[int, QueuePair] = {}
        self._cqs: dict[int, CompletionQueue] = {}
        self._srqs: dict[int, SharedReceiveQueue] = {}
        self._events: list = []
        self._seq = itertools.count()
        self._qp_ids = itertools.count(1)
        self._obj_ids = itertools.count(1)
        self._mr_ids = itertools.count(1)
        self._keys = random.Random(self.config.seed)
        self._used_keys: set[int] = set()
        self._lock = threading.RLock()
        self._trace = trace
        if trace is not None:
            trace.write(TRACE_HEADER + "\n")

    # -- topology ---------------------------------------------------------

    def add_node(self, name: str, *, arena_bytes: int | None = None,
                 nic: NicConfig | None = None) -> Node:
        with self._lock:
            if name in self.nodes:
                raise RaasError(Status.BAD_CONFIG, f"node {name!r} exists")
            node = Node(name, arena_bytes or self.config.arena_bytes,
                        NicModel(nic or self.nic_config))
            self.nodes[name] = node
            return node

    def node(self, name: str) -> Node:
        try:
            return self.nodes[name]
        except KeyError:
            raise RaasError(Status.NODE_UNKNOWN, repr(name)) from None

    def qp(self, qp_id: int) -> QueuePair:
        try:
            return self._qps[qp_id]
        except KeyError:
            raise RaasError(Status.BAD_WR, f"no QP {qp_id}") from None

    def create_cq(self, node: str, depth: int | None = None) -> CompletionQueue:
        with self._lock:
            n = self.node(node)
            n.queue_bytes += CQE_BYTES * (depth or self.config.sq_depth)
            cq = CompletionQueue(next(self._obj_ids), node)
            self._cqs[cq.cq_id] = cq
            return cq

    def create_srq(self, node: str, depth: int | None = None) -> SharedReceiveQueue:
        with self._lock:
            n = self.node(node)
            srq = SharedReceiveQueue(next(self._obj_ids), node, depth or self.config.rq_depth)
            n.queue_bytes += WQE_BYTES * srq.depth
            self._srqs[srq.srq_id] = srq
            return srq

    def create_qp(self, node: str, mode: TransportMode, cq: CompletionQueue,
                  srq: SharedReceiveQueue | None = None, *,
                  sq_depth: int | None = None, rq_depth: int | None = None,
                  rnr_retry: int | None = None) -> int:
        """Create a QP; ``rnr_retry=RNR_UNBOUNDED`` makes SENDs wait for receives."""
        with self._lock:
            n = self.node(node)
            if srq is not None and mode is not TransportMode.RC:
                raise RaasError(Status.SRQ_UNSUPPORTED, f"{mode.value} QPs cannot use an SRQ")
            if cq.node != node or (srq is not None and srq.node != node):
                raise RaasError(Status.BAD_CONFIG, "CQ/SRQ belong to another node")
            qp = QueuePair(next(self._qp_ids), node, mode, cq, srq,
                           sq_depth or self.config.sq_depth, rq_depth or self.config.rq_depth)
            qp.rnr_retry = self.config.rnr_retry if rnr_retry is None else rnr_retry
            if qp.rnr_retry < RNR_UNBOUNDED:
                raise RaasError(Status.BAD_CONFIG, "rnr_retry must be >= 0 or RNR_UNBOUNDED")
            n.queue_bytes += QP_CONTEXT_BYTES + WQE_BYTES * (qp.sq_depth + qp.rq_depth)
            n.cpu_ns += self.config.qp_create_ns
            self._qps[qp.qp_id] = qp
            n.qps.add(qp.qp_id)
            n.nic.register(qp.qp_id)
            if srq is not None:
                srq.attached_qps.add(qp.qp_id)
            return qp.qp_id

    def connect_qp(self, qp_id: int, peer_qp_id: int) -> QpState:
        with self._lock:
            if qp_id == peer_qp_id:
                raise RaasError(Status.SELF_CONNECT, "a QP cannot connect to itself")
            a, b = self.qp(qp_id), self.qp(peer_qp_id)
            if TransportMode.UD in (a.mode, b.mode):
                raise RaasError(Status.UD_NOT_CONNECTABLE, "UD is connectionless")
            if a.mode is not b.mode:
                raise RaasError(Status.MODE_MISMATCH, f"{a.mode.value} vs {b.mode.value}")
            if a.state is not QpState.RESET or b.state is not QpState.RESET:
                raise RaasError(Status.ALREADY_CONNECTED, "both QPs must be in RESET")
            a.peer, b.peer = b.qp_id, a.qp_id
            a.state = b.state = QpState.READY
            return QpState.READY

    def destroy_qp(self, qp_id: int) -> None:
        with self._lock:
            qp = self._qps.pop(qp_id, None)
            if qp is None:
                return
            n = self.nodes[qp.node]
            n.qps.discard(qp_id)
            n.nic.unregister(qp_id)
            if qp.srq is not None:
                qp.srq.attached_qps.discard(qp_id)
            qp.state = QpState.ERROR

    # -- memory -----------------------------------------------------------

    def _fresh_key(self) -> int:
        while True:
            key = self._keys.getrandbits(32)
            if key and key not in self._used_keys:
                self._used_keys.add(key)
                return key

    def registration_cost(self, length: int) -> float:
        return self.config.reg_fixed_ns + self.config.reg_per_byte_ns * length

    def memcpy_cost(self, length: int) -> float:
        return self.config.memcpy_per_byte_ns * length

    def _register(self, n: Node, base, view, length, owner) -> MemoryRegion:
        cost = self.registration_cost(length)
        mr = MemoryRegion(next(self._mr_ids), n.name, base, length, self._fresh_key(),
                          self._fresh_key(), self.now, owner, cost, view)
        n.mrs[mr.mr_id] = mr
        n.mrs_by_rkey[mr.remote_key] = mr
        n.cpu_ns += cost
        self._advance(cost)
        return mr

    def register_mr(self, node: str, length: int, *, owner: str | None = None) -> MemoryRegion:
        """Carve ``length`` bytes out of the node arena and register them."""
        with self._lock:
            n = self.node(node)
            if length <= 0:
                raise RaasError(Status.BAD_LENGTH, "zero-length region")
            base = n.arena.alloc(length)
            return self._register(n, base, n.arena.view[base:base + length], length, owner)

    def register_buffer(self, node: str, buffer, *, owner: str | None = None) -> MemoryRegion:
        """Register caller-owned memory in place (the memreg send path)."""
        with self._lock:
            n = self.node(node)
            view = memoryview(buffer).cast("B")
            if len(view) == 0:
                raise RaasError(Status.BAD_LENGTH, "zero-length region")
            return self._register(n, None, view, len(view), owner)

    def deregister_mr(self, mr: MemoryRegion) -> None:
        with self._lock:
            n = self.node(mr.node)
            if n.mrs.pop(mr.mr_id, None) is None:
                return
            n.mrs_by_rkey.pop(mr.remote_key, None)
            if mr.base is not None:
                n.arena.free(mr.base)

    def mr(self, node: str, mr_id: int) -> MemoryRegion:
        try:
            return self.node(node).mrs[mr_id]
        except KeyError:
            raise RaasError(Status.BAD_LKEY, f"no region {mr_id} on {node}") from None

    # -- event engine -----------------------------------------------------

    def schedule(self, at: float, fn: Callable, *args) -> None:
        with self._lock:
            heapq.heappush(self._events, (max(at, self.now), next(self._seq), fn, args))

    def pending(self) -> int:
        return len(self._events)

    def next_event_time(self) -> Optional[float]:
        return self._events[0][0] if self._events else None

    def run(self, until: float | None = None) -> float:
        """Process events up to ``until`` (or to quiescence); return ``now``."""
        with self._lock:
            events = self._events
            while events and (until is None or events[0][0] <= until):
                at, _, fn, args = heapq.heappop(events)
                if at > self.now:
                    self.now = at
                fn(*args)
            if until is not None and until > self.now:
                self.now = until
            return self.now

    def _advance(self, ns: float) -> None:
        if ns > 0:
            self.run(until=self.now + ns)

    def _nic_submit(self, node: Node, job: _Job) -> None:
        node.jobs.append(job)
        if not node.nic_busy:
            self._nic_start(node)

    def _nic_start(self, node: Node) -> None:
        job = node.jobs.popleft()
        node.nic_busy = True
        cost = self.nic_config.per_byte_cost_ns * job.nbytes
        hit = ""
        if job.access:
            nic = node.nic
            hit_flag = nic.access(job.qp_id)
            cfg = nic.config
            cost += (cfg.hit_cost_ns if hit_flag else cfg.miss_cost_ns) * job.discount
            hit = "1" if hit_flag else "0"
        if self._trace is not None:
            self._trace.write(f"{self.now:.1f},{node.name},{job.qp_id},{job.verb.value},"
                              f"{job.nbytes},{hit}\n")
        node.nic_busy_ns += cost
        heapq.heappush(self._events, (self.now + cost, next(self._seq), self._nic_finish, (node, job)))

    def _nic_finish(self, node: Node, job: _Job) -> None:
        job.callback(*job.args)
        if node.jobs:
            self._nic_start(node)
        else:
            node.nic_busy = False

    # -- posting ----------------------------------------------------------

    def _validate(self, qp: QueuePair, wr: WorkRequest) -> QueuePair:
        """Check ``wr`` against ``qp``; return the target QP."""
        if qp.state is QpState.ERROR:
            raise RaasError(Status.QP_ERROR, f"QP {qp.qp_id} is in error")
        if wr.verb is Verb.RECV or not is_legal(qp.mode, wr.verb):
            raise RaasError(Status.ILLEGAL_VERB, f"{wr.verb.value} on {qp.mode.value}")
        if wr.length > max_message(qp.mode, self.nic_config.mtu):
            raise RaasError(Status.MSG_TOO_LARGE, f"{wr.length} bytes on {qp.mode.value}")
        node = self.nodes[qp.node]
        mr = node.mrs.get(wr.local.mr_id)
        if mr is None or wr.local.offset + wr.local.length > mr.length:
            raise RaasError(Status.BAD_LKEY, "local buffer is not inside a registered region")
        if qp.mode is TransportMode.UD:
            if wr.dest is None:
                raise RaasError(Status.BAD_WR, "UD needs a per-WR destination")
            target = self._qps.get(wr.dest.qp_id)
            if target is None or target.node != wr.dest.node:
                raise RaasError(Status.NODE_UNKNOWN, f"no UD QP at {wr.dest}")
            if target.mode is not TransportMode.UD:
                raise RaasError(Status.MODE_MISMATCH, "UD datagrams need a UD target")
        else:
            if qp.state is not QpState.READY or qp.peer is None:
                raise RaasError(Status.QP_NOT_READY, f"QP {qp.qp_id} is not connected")
            target = self._qps.get(qp.peer)
            if target is None:
                raise RaasError(Status.QP_ERROR, "peer QP destroyed")
        if wr.remote is not None:
            rmr = self.nodes[target.node].mrs_by_rkey.get(wr.remote.rkey)
            if rmr is None or wr.remote.offset < 0 or wr.remote.offset + wr.length > rmr.length:
                raise RaasError(Status.BAD_RKEY, "remote key/range rejected")
        return target

    def post_send(self, qp_id: int, wr: WorkRequest, *, at: float | None = None) -> bool:
        try:
            self.post_batch(qp_id, [wr], at=at)
        except BatchError as exc:
            raise exc.cause from None
        return True

    def post_batch(self, qp_id: int, wrs: Iterable[WorkRequest], *, at: float | None = None) -> int:
        """Post WRs behind one doorbell; all-or-prefix.

        On a bad WR the valid prefix is still posted and ``BatchError``
        reports the failing index.
        """
        with self._lock:
            qp = self.qp(qp_id)
            accepted: list[_Inflight] = []
            failure: Optional[BatchError] = None
            rnr = qp.rnr_retry
            for i, wr in enumerate(wrs):
                try:
                    target = self._validate(qp, wr)
                    if qp.outstanding + len(accepted) >= qp.sq_depth:
                        raise RaasError(Status.QUEUE_FULL, f"send queue of QP {qp_id} is full")
                except RaasError as exc:
                    failure = BatchError(i, exc)
                    break
                inflight = _Inflight(qp, wr, qp.next_ssn, rnr, self.now)
                inflight.target = target
                qp.next_ssn += 1
                accepted.append(inflight)
            if accepted:
                qp.outstanding += len(accepted)
                if len(accepted) >= 2:
                    discount = self.nic_config.batch_discount
                    for inflight in accepted:
                        inflight.discount = discount
                when = self.now if at is None else at
                self.schedule(when, self._doorbell, accepted)
            if failure is not None:
                raise failure
            return len(accepted)

    def post_recv(self, target: Union[int, SharedReceiveQueue], wr: WorkRequest) -> bool:
        with self._lock:
            if wr.verb is not Verb.RECV:
                raise RaasError(Status.ILLEGAL_VERB, "post_recv takes RECV work requests")
            if isinstance(target, SharedReceiveQueue):
                node, queue, depth = target.node, target.recv_queue, target.depth
            else:
                qp = self.qp(target)
                if qp.srq is not None:
                    raise RaasError(Status.BAD_WR, "QP takes receives from its SRQ")
                if qp.state is QpState.ERROR:
                    raise RaasError(Status.QP_ERROR, f"QP {qp.qp_id} is in error")
                node, queue, depth = qp.node, qp.recv_queue, qp.rq_depth
            mr = self.nodes[node].mrs.get(wr.local.mr_id)
            if mr is None or wr.local.offset + wr.local.length > mr.length:
                raise RaasError(Status.BAD_LKEY, "receive buffer is not inside a registered region")
            if len(queue) >= depth:
                raise RaasError(Status.QUEUE_FULL, "receive queue is full")
            queue.append(wr)
            waiters = target.waiters if isinstance(target, SharedReceiveQueue) else None
            if waiters:
                for rqp in waiters:
                    rqp.rnr_waiting = False
                    self.schedule(self.now + self.config.rnr_timer_ns, self._rx_next, rqp)
                waiters.clear()
            elif waiters is None and qp.rnr_waiting:
                qp.rnr_waiting = False
                self.schedule(self.now + self.config.rnr_timer_ns, self._rx_next, qp)
            return True

    def poll_cq(self, cq: CompletionQueue, max_entries: int = 16) -> list[CompletionEntry]:
        if max_entries < 1:
            raise RaasError(Status.BAD_LENGTH, "max_entries must be >= 1")
        with self._lock:
            if self.auto_progress:
                self.run()
            out = []
            entries = cq.entries
            while entries and len(out) < max_entries:
                out.append(entries.popleft())
            return out

    # -- work request lifecycle --------------------------------------------

    def _doorbell(self, batch: list[_Inflight]) -> None:
        for inflight in batch:
            qp = inflight.qp
            node = self.nodes[qp.node]
            wr = inflight.wr
            outbound = 0 if wr.verb is Verb.READ else wr.length
            self._nic_submit(node, _Job(qp.qp_id, True, inflight.discount, outbound,
                                        wr.verb, self._issued, (inflight,)))

    def _issued(self, inflight: _Inflight) -> None:
        qp = inflight.qp
        if qp.state is QpState.ERROR:
            self._complete(inflight, Status.FLUSH_ERROR)
            return
        wr = inflight.wr
        node = self.nodes[qp.node]
        node.wr_count += 1
        if wr.verb is not Verb.READ:
            mr = node.mrs.get(wr.local.mr_id)
            if mr is None:
                self._complete(inflight, Status.BAD_LKEY)
                return
            inflight.data = bytes(mr.view[wr.local.offset:wr.local.offset + wr.length])
        target = inflight.target
        self.schedule(self.now + self.config.propagation_ns, self._rx_arrive, target, inflight)
        if qp.mode is not TransportMode.RC:
            # unreliable transports complete once the data left the wire
            self._complete(inflight, Status.OK)

    def _rx_arrive(self, rqp: QueuePair, inflight: _Inflight) -> None:
        rqp.rx.append(inflight)
        if not rqp.rx_busy:
            self._rx_next(rqp)

    def _rx_next(self, rqp: QueuePair) -> None:
        inflight = rqp.rx[0]
        rqp.rx_busy = True
        verb = inflight.wr.verb
        two_sided = verb is Verb.SEND
        node = self.nodes[rqp.node]
        self._nic_submit(node, _Job(rqp.qp_id, two_sided, 1.0,
                                    inflight.wr.length if two_sided else 0,
                                    verb, self._rx_done, (rqp, inflight)))

    def _rx_pop(self, rqp: QueuePair) -> None:
        rqp.rx.popleft()
        if rqp.rx:
            self._rx_next(rqp)
        else:
            rqp.rx_busy = False

    def _rx_done(self, rqp: QueuePair, inflight: _Inflight) -> None:
        qp = inflight.qp
        reliable = qp.mode is TransportMode.RC
        if qp.state is QpState.ERROR or rqp.state is QpState.ERROR:
            if reliable:
                self._complete(inflight, Status.FLUSH_ERROR)
            self._rx_pop(rqp)
            return
        wr = inflight.wr
        rnode = self.nodes[rqp.node]
        status = Status.OK
        payload = None
        if wr.verb is Verb.SEND:
            queue = rqp.srq.recv_queue if rqp.srq is not None else rqp.recv_queue
            if not queue:
                if not reliable:
                    self._rx_pop(rqp)  # datagram dropped
                    return
                if inflight.rnr_left == RNR_UNBOUNDED:
                    # parked until post_recv wakes the QP up
                    rqp.rnr_waiting = True
                    if rqp.srq is not None:
                        rqp.srq.waiters.append(rqp)
                    return
                if inflight.rnr_left > 0:
                    inflight.rnr_left -= 1
                    self.schedule(self.now + self.config.rnr_timer_ns, self._rx_next, rqp)
                    return
                self._rx_pop(rqp)
                self._fail_qp(qp, inflight, Status.RNR_ERROR)
                return
            rwr = queue.popleft()
            rmr = rnode.mrs.get(rwr.local.mr_id)
            nbytes = len(inflight.data)
            if rmr is None or nbytes > rwr.local.length:
                status = Status.LENGTH_ERROR
                nbytes = 0
            else:
                off = rwr.local.offset
                rmr.view[off:off + nbytes] = inflight.data
            rnode.bytes_moved += nbytes
            rqp.cq._push(CompletionEntry(rwr.wr_id, status, nbytes, wr.imm_data, rqp.qp_id,
                                         Side.RECV_COMPLETION, Verb.RECV, self.now,
                                         inflight.qp.qp_id))
        else:
            rmr = rnode.mrs_by_rkey.get(wr.remote.rkey)
            if rmr is None:
                status = Status.BAD_RKEY
            else:
                off = wr.remote.offset
                if wr.verb is Verb.WRITE:
                    rmr.view[off:off + wr.length] = inflight.data
                else:
                    payload = bytes(rmr.view[off:off + wr.length])
        self._rx_pop(rqp)
        if reliable:
            self.schedule(self.now + self.config.propagation_ns, self._ack_arrive,
                          inflight, status, payload)

    def _ack_arrive(self, inflight: _Inflight, status: Status, payload: Optional[bytes]) -> None:
        qp = inflight.qp
        wr = inflight.wr
        inbound = wr.length if wr.verb is Verb.READ else 0
        self._nic_submit(self.nodes[qp.node], _Job(qp.qp_id, True, 1.0, inbound, wr.verb,
                                                   self._ack_done, (inflight, status, payload)))

    def _ack_done(self, inflight: _Inflight, status: Status, payload: Optional[bytes]) -> None:
        qp = inflight.qp
        if qp.state is QpState.ERROR:
            self._complete(inflight, Status.FLUSH_ERROR)
            return
        if payload is not None and status is Status.OK:
            node = self.nodes[qp.node]
            mr = node.mrs.get(inflight.wr.local.mr_id)
            if mr is None:
                status = Status.BAD_LKEY
            else:
                off = inflight.wr.local.offset
                mr.view[off:off + len(payload)] = payload
                node.bytes_moved += len(payload)
        self._complete(inflight, status)

    def _fail_qp(self, qp: QueuePair, inflight: _Inflight, status: Status) -> None:
        qp.state = QpState.ERROR
        self._complete(inflight, status)

    def _complete(self, inflight: _Inflight, status: Status) -> None:
        if inflight.done:
            return
        inflight.done = True
        qp = inflight.qp
        qp.outstanding -= 1
        qp.parked[inflight.ssn] = (inflight, status)
        while qp.next_done in qp.parked:
            done, st = qp.parked.pop(qp.next_done)
            qp.next_done += 1
            wr = done.wr
            if wr.signaled or st is not Status.OK:
                qp.cq._push(CompletionEntry(wr.wr_id, st, wr.length if st is Status.OK else 0,
                                            None, qp.qp_id, Side.SEND_COMPLETION, wr.verb,
                                            self.now))
