"""Socket-like application library over the daemon's request/response rings.

Message boundaries are preserved: one ``send`` is one inbound message, and
``recv`` never returns bytes from two messages at once.  A short ``recv``
leaves the rest of the message for the next call.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import Optional

from .errors import RaasError, Status, WouldBlock
from .daemon import Addr, Flags, VcState, check_flags, copy_or_register
from .daemon.cluster import Cluster, Listener
from .daemon.policy import CopyMode
from .daemon.service import VirtualConnection
from .ipc import ZERO_COPY, Op, RequestRecord
from .verbs import Extents, MemoryRegion

STALL_ROUNDS = 64
WAIT_TIMEOUT_S = 60.0


@dataclass(eq=False)
class ConnectionHandle:
    fd: int
    dest: Addr
    default_flags: Flags
    vc: VirtualConnection
    state: VcState = VcState.CONNECTING
    blocking: bool = True
    seqs: itertools.count = field(default_factory=lambda: itertools.count(1))
    responses: dict = field(default_factory=dict)
    outstanding: dict = field(default_factory=dict)
    staging_mr: Optional[MemoryRegion] = None
    staging: Optional[Extents] = None
    current: Optional[list] = None
    recv_seq: Optional[int] = None
    error: Optional[RaasError] = None

    @property
    def rings(self):
        return self.vc.request_ring, self.vc.response_ring, self.vc.channel


class Client:
    """One application's view of the local daemon."""

    def __init__(self, cluster: Cluster, node: str, app: str):
        self.cluster = cluster
        self.fabric = cluster.fabric
        self.node = node
        self.app = app
        self.daemon = cluster.daemon_at(node)
        self._handles: dict[int, ConnectionHandle] = {}
        self._listeners: dict[int, Listener] = {}

    # -- memory ----------------------------------------------------------------

    def register(self, length: int) -> MemoryRegion:
        """Pre-register application memory (for zero-copy receive)."""
        return self.fabric.register_mr(self.node, length, owner=self.app)

    def deregister(self, mr: MemoryRegion) -> None:
        self.fabric.deregister_mr(mr)

    # -- connection setup --------------------------------------------------------

    def connect(self, addr: str | Addr, flags: int = Flags.DEFAULT) -> int:
        flags = check_flags(flags)
        addr = Addr.parse(addr)
        vc = self.cluster.connect(self.daemon, self.app, addr, flags)
        return self._open(vc, addr, flags)

    def listen(self, addr: str | Addr) -> int:
        addr = Addr.parse(addr)
        if self.cluster.resolve(addr) != self.node:
            raise RaasError(Status.BAD_REQUEST, f"{addr} is not a local address")
        listener = self.cluster.listen(self.daemon, self.app, addr.port)
        self._listeners[listener.fd] = listener
        return listener.fd

    def accept(self, listen_fd: int, timeout: float | None = None) -> int:
        listener = self._listeners.get(listen_fd)
        if listener is None or listener.closed:
            raise RaasError(Status.BAD_FD, f"{listen_fd} is not a listening fd")
        deadline = time.monotonic() + (WAIT_TIMEOUT_S if timeout is None else timeout)
        stalls = 0
        while not listener.backlog:
            if listener.closed:
                raise RaasError(Status.CLOSED_WHILE_WAITING, "listener closed during accept")
            if self.daemon.threaded:
                listener.ready.acquire(timeout=0.05)
            elif self.cluster.progress() == 0:
                stalls += 1
                if stalls > STALL_ROUNDS:
                    raise RaasError(Status.TIMEOUT, "no incoming connection")
            if time.monotonic() > deadline:
                raise RaasError(Status.TIMEOUT, "accept timed out")
        vc = listener.backlog.popleft()
        return self._open(vc, vc.dest, vc.flags_default)

    def _open(self, vc: VirtualConnection, addr: Addr, flags: Flags) -> int:
        h = ConnectionHandle(vc.fd, addr, flags, vc)
        self._handles[vc.fd] = h
        seq = self._submit(h, RequestRecord(Op.CONNECT, vc.fd))
        self._expect(h, self._wait(h, seq, force=True))
        h.state = VcState.OPEN
        return vc.fd

    def setblocking(self, fd: int, blocking: bool) -> None:
        self._handle(fd).blocking = bool(blocking)

    def close(self, fd: int) -> None:
        if fd in self._listeners:
            self.cluster.unlisten(self._listeners.pop(fd))
            return
        h = self._handle(fd)
        h.current = None
        seq = self._submit(h, RequestRecord(Op.CLOSE, fd), force=True)
        resp = self._wait(h, seq, force=True)
        h.state = VcState.CLOSED
        self._collect(h)
        for cleanup in h.outstanding.values():
            self._cleanup(h, cleanup)
        h.outstanding.clear()
        if h.staging_mr is not None:
            self.fabric.deregister_mr(h.staging_mr)
        del self._handles[fd]
        self._expect(h, resp)

    # -- data path -----------------------------------------------------------------

    def send(self, fd: int, buf, length: int | None = None, flags: int = Flags.DEFAULT) -> int:
        h = self._handle(fd)
        self._raise_deferred(h)
        data = memoryview(buf).cast("B")
        if length is not None:
            if length > len(data):
                raise RaasError(Status.BAD_LENGTH, "length exceeds the buffer")
            data = data[:length]
        n = len(data)
        if n < 1:
            raise RaasError(Status.BAD_LENGTH, "send needs at least one byte")
        check_flags(flags)
        if copy_or_register(n, self.daemon.policy) is CopyMode.MEMCPY:
            mr, off = self._stage(h, n)
            mr.view[off:off + n] = data
            self.fabric.node(self.node).cpu_ns += self.fabric.memcpy_cost(n)
            cleanup = ("staging", off)
        else:
            mr = self.fabric.register_buffer(self.node, data, owner=self.app)
            off = 0
            cleanup = ("dereg", mr)
        record = RequestRecord(Op.SEND, fd, mr.mr_id, off, n, int(flags) & ~Flags.NONBLOCK)
        try:
            seq = self._submit(h, record)
        except WouldBlock:
            self._cleanup(h, cleanup)
            raise
        h.outstanding[seq] = cleanup
        if not h.blocking and not flags & Flags.NONBLOCK:
            return n
        if flags & Flags.NONBLOCK:
            return n
        self._expect(h, self._wait(h, seq))
        return n

    def flush(self, fd: int) -> None:
        """Wait until every earlier send on ``fd`` has been answered."""
        h = self._handle(fd)
        deadline = time.monotonic() + WAIT_TIMEOUT_S
        stalls = 0
        self._collect(h)
        # blocking sends park their answer in responses; non-blocking ones are settled
        # as soon as _collect pops them from outstanding
        while any(seq not in h.responses for seq in h.outstanding):
            stalls = self._block(h, stalls)
            self._collect(h)
            if time.monotonic() > deadline:
                raise RaasError(Status.TIMEOUT, "flush did not complete")
        self._raise_deferred(h)

    def recv(self, fd: int, buf, length: int | None = None) -> int:
        h = self._handle(fd)
        out = memoryview(buf).cast("B")
        want = len(out) if length is None else min(length, len(out))
        if want < 1:
            raise RaasError(Status.BAD_LENGTH, "recv needs room for one byte")
        if h.current is None and not self._next_segment(h):
            return 0
        mr, off, remaining = h.current
        k = min(want, remaining)
        out[:k] = mr.view[off:off + k]
        if k == remaining:
            h.current = None
        else:
            h.current = [mr, off + k, remaining - k]
        return k

    def recv_zero_copy(self, fd: int, mr: MemoryRegion) -> tuple[int, int]:
        """Receive the next message straight into the app's registered ``mr``."""
        h = self._handle(fd)
        if mr.owner != self.app or mr.node != self.node:
            raise RaasError(Status.BAD_MR, "region not registered by this application")
        if h.current is not None:
            src, off, remaining = h.current
            if remaining > mr.length:
                raise RaasError(Status.MR_TOO_SMALL, "rest of the message does not fit")
            mr.view[:remaining] = src.view[off:off + remaining]
            h.current = None
            return 0, remaining
        if h.recv_seq is None:
            h.recv_seq = self._submit(h, RequestRecord(Op.RECV_READY, fd, mr.mr_id, 0, mr.length,
                                                       ZERO_COPY))
        resp = self._wait(h, h.recv_seq)
        h.recv_seq = None
        if resp.status is Status.PEER_CLOSED:
            return 0, 0
        self._expect(h, resp)
        return resp.offset, resp.byte_count

    def read(self, fd: int, mr: MemoryRegion, length: int, offset: int = 0) -> int:
        """One-sided fetch of ``length`` bytes from the peer daemon's pool."""
        h = self._handle(fd)
        seq = self._submit(h, RequestRecord(Op.READ, fd, mr.mr_id, offset, length))
        self._expect(h, self._wait(h, seq))
        return length

    # -- internals -----------------------------------------------------------------

    def _handle(self, fd: int) -> ConnectionHandle:
        h = self._handles.get(fd)
        if h is None or h.state is VcState.CLOSED:
            raise RaasError(Status.BAD_FD, f"fd {fd} is not open")
        return h

    def _stage(self, h: ConnectionHandle, n: int):
        if h.staging is None:
            size = 2 * self.daemon.policy.copy_register_crossover
            h.staging_mr = self.fabric.register_mr(self.node, size, owner=self.app)
            h.staging = Extents(size)
        stalls = 0
        while True:
            off = h.staging.try_alloc(n)
            if off is not None:
                return h.staging_mr, off
            if not h.blocking:
                self._collect(h)
                off = h.staging.try_alloc(n)
                if off is not None:
                    return h.staging_mr, off
                raise WouldBlock("send staging is full")
            stalls = self._block(h, stalls)

    def _cleanup(self, h: ConnectionHandle, cleanup) -> None:
        if cleanup[0] == "staging":
            h.staging.free(cleanup[1])
        else:
            self.fabric.deregister_mr(cleanup[1])

    def _submit(self, h: ConnectionHandle, record: RequestRecord, force: bool = False) -> int:
        seq = next(h.seqs)
        record = record._replace(seq=seq)
        ring = h.vc.request_ring
        stalls = 0
        while not ring.enqueue(record):
            if not (h.blocking or force):
                raise WouldBlock("request ring is full")
            self.daemon.submit(h.vc)
            stalls = self._block(h, stalls)
        self.daemon.submit(h.vc)
        return seq

    def _collect(self, h: ConnectionHandle) -> None:
        ring = h.vc.response_ring
        while True:
            resp = ring.dequeue()
            if resp is None:
                return
            cleanup = h.outstanding.pop(resp.seq, None)
            if cleanup is not None:
                self._cleanup(h, cleanup)
                if resp.status is not Status.OK and h.error is None:
                    h.error = RaasError(resp.status, f"send seq {resp.seq} failed")
                if not h.blocking:
                    continue
            h.responses[resp.seq] = resp

    def _block(self, h: ConnectionHandle, stalls: int) -> int:
        if self.daemon.threaded:
            h.vc.channel.wait(0.05)
            return 0
        if self.cluster.progress() == 0:
            stalls += 1
            if stalls > STALL_ROUNDS:
                raise RaasError(Status.TIMEOUT, "the daemon cannot make progress")
            return stalls
        return 0

    def _wait(self, h: ConnectionHandle, seq: int, force: bool = False):
        deadline = time.monotonic() + WAIT_TIMEOUT_S
        stalls = 0
        while True:
            self._collect(h)
            resp = h.responses.pop(seq, None)
            if resp is not None:
                return resp
            if not (h.blocking or force):
                raise WouldBlock("no response yet")
            stalls = self._block(h, stalls)
            if time.monotonic() > deadline:
                raise RaasError(Status.TIMEOUT, f"no response for seq {seq}")

    def _expect(self, h: ConnectionHandle, resp) -> None:
        if resp.status is not Status.OK:
            raise RaasError(resp.status, f"fd {h.fd}: {resp.status.name}")

    def _raise_deferred(self, h: ConnectionHandle) -> None:
        if h.error is not None:
            err, h.error = h.error, None
            raise err

    def _next_segment(self, h: ConnectionHandle) -> bool:
        if h.recv_seq is None:
            h.recv_seq = self._submit(h, RequestRecord(Op.RECV_READY, h.fd))
        resp = self._wait(h, h.recv_seq)
        h.recv_seq = None
        if resp.status is Status.PEER_CLOSED:
            return False
        self._expect(h, resp)
        h.current = [self.fabric.mr(self.node, resp.region), resp.offset, resp.byte_count]
        return True
