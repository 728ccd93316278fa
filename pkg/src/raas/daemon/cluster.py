"""Control plane shared by every daemon on the simulated fabric.

Address resolution, daemon registry, listeners, and shared-QP setup all
happen here under one mutex.  Nothing on the data path takes it.
"""

from __future__ import annotations

import threading
from collections import deque
from typing import Optional

from ..config import DaemonConfig, SimConfig
from ..errors import RaasError, Status
from ..verbs import QP_CONTEXT_BYTES, RNR_UNBOUNDED, WQE_BYTES, Extents, Fabric, TransportMode
from .addr import Addr
from .flags import check_flags
from .policy import IDLE, LoadStats
from .service import CTX_RING, Daemon, Link, VcState, VirtualConnection


class Listener:
    def __init__(self, daemon: Daemon, app: str, port: int, fd: int):
        self.daemon = daemon
        self.app = app
        self.port = port
        self.fd = fd
        self.backlog: deque[VirtualConnection] = deque()
        self.ready = threading.Semaphore(0)
        self.closed = False


class Cluster:
    """A fabric plus the daemons running on its nodes."""

    def __init__(self, config: SimConfig | None = None, *, auto_progress: bool = True,
                 trace=None):
        self.config = config or SimConfig()
        self.config.validate()
        self.fabric = Fabric(self.config.nic, self.config.fabric,
                             auto_progress=auto_progress, trace=trace)
        self.control = threading.RLock()
        self.daemons: dict[str, Daemon] = {}
        self._addresses: dict[str, str] = {}
        self._node_addr: dict[str, Addr] = {}
        self._listeners: dict[tuple[str, int], Listener] = {}
        self._loads: dict[str, LoadStats] = {}

    # -- topology ------------------------------------------------------------

    def add_node(self, name: str, addr: str | Addr | None = None, *,
                 arena_bytes: int | None = None) -> Addr:
        with self.control:
            if addr is None:
                addr = f"ipv4:10.0.0.{len(self._node_addr) + 1}"
            addr = Addr.parse(addr)
            if addr.node_key in self._addresses:
                raise RaasError(Status.BAD_CONFIG, f"address {addr} already taken")
            self.fabric.add_node(name, arena_bytes=arena_bytes)
            self._addresses[addr.node_key] = name
            self._node_addr[name] = addr.with_port(0)
            return self._node_addr[name]

    def add_alias(self, name: str, addr: str | Addr) -> None:
        """Make another address (e.g. the RDMA GID) resolve to ``name``."""
        with self.control:
            self._addresses[Addr.parse(addr).node_key] = name

    def resolve(self, addr: str | Addr) -> str:
        addr = Addr.parse(addr)
        try:
            return self._addresses[addr.node_key]
        except KeyError:
            raise RaasError(Status.DEST_UNREACHABLE, f"no host at {addr}") from None

    def address_of(self, node: str) -> Addr:
        return self._node_addr[node]

    def daemon_at(self, node: str) -> Daemon:
        try:
            return self.daemons[node]
        except KeyError:
            raise RaasError(Status.DEST_UNREACHABLE, f"no daemon on {node}") from None

    # -- daemons -------------------------------------------------------------

    def start_daemon(self, node: str, config: DaemonConfig | None = None, *,
                     threaded: bool = False) -> Daemon:
        with self.control:
            self.fabric.node(node)
            if node in self.daemons:
                raise RaasError(Status.DAEMON_EXISTS, f"a daemon already runs on {node}")
            daemon = Daemon(self, node, config or self.config.daemon)
            self.daemons[node] = daemon
        if threaded:
            daemon.start()
        return daemon

    def stop_all(self) -> None:
        for daemon in list(self.daemons.values()):
            daemon.stop()

    def progress(self) -> int:
        """Advance every stepped daemon once; returns the work done."""
        work = 0
        for daemon in list(self.daemons.values()):
            if not daemon.threaded and daemon.running:
                work += daemon.step()
        if work == 0 and not self.fabric.auto_progress and self.fabric.pending():
            self.fabric.run()
            work = 1
        return work

    def load_stats(self, node: str) -> LoadStats:
        return self._loads.get(node, IDLE)

    def _publish_load(self, node: str, stats: LoadStats) -> None:
        self._loads[node] = stats

    def client(self, node: str, app: str):
        from ..client import Client
        return Client(self, node, app)

    # -- connections -----------------------------------------------------------

    def _ensure_link(self, a: Daemon, b: Daemon, index: int) -> Link:
        link = a._link(b.node, index)
        if link is not None:
            return link
        fabric = self.fabric
        qps = []
        for d in (a, b):
            qp = fabric.create_qp(d.node, TransportMode.RC, d.cq, d.srq, sq_depth=CTX_RING,
                                  rq_depth=1, rnr_retry=RNR_UNBOUNDED)
            d.memory_bytes += QP_CONTEXT_BYTES + WQE_BYTES * (CTX_RING + 1)
            qps.append(qp)
        fabric.connect_qp(qps[0], qps[1])
        pool_a = a._register(a.config.write_pool_bytes)
        pool_b = b._register(b.config.write_pool_bytes)
        la = Link(b.node, index, qps[0], index % len(a.workers), pool_a,
                  pool_b.remote_key, pool_b.length, Extents(pool_b.length))
        lb = Link(a.node, index, qps[1], index % len(b.workers), pool_b,
                  pool_a.remote_key, pool_a.length, Extents(pool_a.length))
        a._publish_link(la)
        b._publish_link(lb)
        return la

    def connect(self, daemon: Daemon, app: str, dest: str | Addr,
                flags: int = 0) -> VirtualConnection:
        """Create both ends of a virtual connection."""
        with self.control:
            flags = check_flags(flags)
            dest = Addr.parse(dest)
            dest_node = self.resolve(dest)
            peer = self.daemon_at(dest_node)
            listener = self._listeners.get((dest_node, dest.port))
            if listener is None and dest.port != 0:
                raise RaasError(Status.DEST_UNREACHABLE, f"nobody listens at {dest}")
            vc = daemon._new_vc(app, dest, flags)
            try:
                owner = listener.app if listener else peer.owner
                src = self.address_of(daemon.node).with_port(dest.port)
                pvc = peer._new_vc(owner, src, flags)
            except RaasError:
                daemon._unmap(vc)
                daemon.release_vqpn(vc.vqpn)
                raise
            daemon._map_peer(vc, peer.node, pvc.vqpn)
            peer._map_peer(pvc, daemon.node, vc.vqpn)
            if listener is None:
                pvc.sink = True
                pvc.state = VcState.OPEN
            else:
                listener.backlog.append(pvc)
                listener.ready.release()
            return vc

    def listen(self, daemon: Daemon, app: str, port: int) -> Listener:
        with self.control:
            key = (daemon.node, port)
            if port <= 0 or key in self._listeners:
                raise RaasError(Status.BAD_REQUEST, f"port {port} unavailable on {daemon.node}")
            listener = Listener(daemon, app, port, next(daemon._fds))
            self._listeners[key] = listener
            return listener

    def unlisten(self, listener: Listener) -> None:
        with self.control:
            listener.closed = True
            self._listeners.pop((listener.daemon.node, listener.port), None)
            listener.ready.release()  # wake a blocked accept

    def _peer_closed(self, daemon: Daemon, src: str, vqpn: int) -> Optional[VirtualConnection]:
        """``src`` closed its connection ``vqpn``; it may reuse the number now."""
        with self.control:
            vc = daemon._demux.get((src, vqpn))
            if vc is not None:
                vc.peer_closed = True
                demux = dict(daemon._demux)
                del demux[(src, vqpn)]
                daemon._demux = demux
                if vc.sink:
                    # nobody owns this end; it goes away with the peer
                    vc.state = VcState.CLOSED
                    daemon._unmap(vc)
                    daemon.release_vqpn(vc.vqpn)
            origin = self.daemons.get(src)
            if origin is not None:
                origin.release_vqpn(vqpn)
            return vc

    def _forget(self, daemon: Daemon, vc: VirtualConnection) -> None:
        with self.control:
            daemon._unmap(vc)
            peer = self.daemons.get(vc.dest_node)
            if vc.transport is TransportMode.UD or peer is None:
                # no CLOSE message travels; tidy the far end directly
                if peer is not None:
                    pvc = peer._demux.get((daemon.node, vc.vqpn))
                    if pvc is not None:
                        self._peer_closed(peer, daemon.node, vc.vqpn)
                daemon.release_vqpn(vc.vqpn)

    def _detach(self, daemon: Daemon) -> None:
        with self.control:
            self.daemons.pop(daemon.node, None)
            for key in [k for k in self._listeners if k[0] == daemon.node]:
                self.unlisten(self._listeners[key])
            for vc in list(daemon._vcs_by_fd.values()):
                vc.state = VcState.CLOSED
            for (peer_node, index), link in list(daemon._links.items()):
                self.fabric.destroy_qp(link.qp_id)
                peer = self.daemons.get(peer_node)
                if peer is None:
                    continue
                plink = peer._link(daemon.node, index)
                if plink is not None:
                    self.fabric.destroy_qp(plink.qp_id)
                    links = dict(peer._links)
                    links.pop((daemon.node, index), None)
                    peer._links = links
                for pvc in peer._vcs_by_fd.values():
                    if pvc.dest_node == daemon.node:
                        pvc.peer_closed = True
            for link in daemon.ud_links:
                self.fabric.destroy_qp(link.qp_id)
            daemon._links = {}
