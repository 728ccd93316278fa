"""Memory and CPU of connection setup, in units of one stand-alone app.

Each mode is measured from the objects it actually builds on the
application node: registered memory, verbs queue memory, ring memory, and
CPU spent creating them plus any thread that busy-polls for
``ACCOUNTING_WINDOW_NS``.  Units divide by the same mode's one-app figure.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from ..config import SimConfig
from ..daemon import Cluster
from ..resources import ACCOUNTING_WINDOW_NS, NAIVE_DATA_BYTES, naive_app_bytes, setup_naive_app
from ..verbs import Fabric
from .scenario import Mode


@dataclass(frozen=True)
class Footprint:
    mem_bytes: float
    cpu_ns: float


def _naive(apps: int, sim: SimConfig, qp_count: int | None = None) -> Footprint:
    fabric = Fabric(sim.nic, sim.fabric, auto_progress=False)
    qps = apps if qp_count is None else qp_count
    fabric.add_node("app", arena_bytes=(qps + 1) * (naive_app_bytes(fabric) + 4096))
    fabric.add_node("peer", arena_bytes=1 << 20)
    peer_cq = fabric.create_cq("peer")
    for i in range(qps):
        setup_naive_app(fabric, "app", "peer", app=f"app{i}", peer_cq=peer_cq)
    node = fabric.node("app")
    # every application runs its own polling thread
    return Footprint(node.registered_bytes + node.queue_bytes,
                     node.cpu_ns + apps * ACCOUNTING_WINDOW_NS)


def _raas(apps: int, sim: SimConfig) -> Footprint:
    cluster = Cluster(sim, auto_progress=False)
    cluster.add_node("app", arena_bytes=256 << 20)
    peer_addr = cluster.add_node("peer", arena_bytes=256 << 20)
    daemon = cluster.start_daemon("app")
    cluster.start_daemon("peer")
    for i in range(apps):
        cluster.connect(daemon, f"app{i}", peer_addr)
    node = cluster.fabric.node("app")
    rings = sum(vc.request_ring.buffer.nbytes + vc.response_ring.buffer.nbytes
                for vc in daemon._vcs_by_fd.values())
    # one poller thread spins; workers sleep on their doorbells
    return Footprint(node.registered_bytes + node.queue_bytes + rings,
                     node.cpu_ns + ACCOUNTING_WINDOW_NS)


def footprint(mode: Mode, apps: int, sim: SimConfig | None = None, q: int = 1) -> Footprint:
    sim = sim or SimConfig()
    if mode is Mode.RAAS:
        return _raas(apps, sim)
    if mode is Mode.LOCKED_SHARING:
        return _naive(apps, sim, qp_count=-(-apps // q))
    return _naive(apps, sim)


@lru_cache(maxsize=256)
def _units(mode: Mode, apps: int, sim_key: str, q: int) -> tuple[float, float]:
    sim = _SIMS[sim_key]
    base = footprint(mode, 1, sim, q)
    cur = footprint(mode, apps, sim, q)
    return cur.mem_bytes / base.mem_bytes, cur.cpu_ns / base.cpu_ns


_SIMS: dict[str, SimConfig] = {}


def resource_accounting(mode: Mode, apps: int, sim: SimConfig | None = None,
                        q: int = 1) -> tuple[float, float]:
    """(mem_units, cpu_units) for ``apps`` applications."""
    sim = sim or SimConfig()
    key = repr(sim)
    _SIMS[key] = sim
    return _units(mode, apps, key, q)


__all__ = ["Footprint", "footprint", "resource_accounting", "NAIVE_DATA_BYTES"]
