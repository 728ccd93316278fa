"""What one application's stand-alone RDMA setup costs (one resource unit).

A conventional application builds its own CQ and RC QP, registers a ring of
receive buffers and one data region, and runs a thread that polls its CQ.
"""

from __future__ import annotations

from dataclasses import dataclass

from .verbs import CQE_BYTES, QP_CONTEXT_BYTES, WQE_BYTES, Fabric, MemoryRegion, TransportMode

NAIVE_SQ_DEPTH = 128
NAIVE_RQ_DEPTH = 128
NAIVE_CQ_DEPTH = 256
NAIVE_RECV_BUFFERS = 128
NAIVE_DATA_BYTES = 64 * 1024
# logical time over which a busy-polling thread is charged as CPU
ACCOUNTING_WINDOW_NS = 1_000_000.0


@dataclass
class NaiveEndpoint:
    qp: int
    peer_qp: int
    cq: object
    data: MemoryRegion
    recv: MemoryRegion


def setup_naive_app(fabric: Fabric, node: str, peer_node: str, *, app: str,
                    peer_cq=None, data_bytes: int = NAIVE_DATA_BYTES) -> NaiveEndpoint:
    """Build one application's private QP, CQ and buffers on ``node``."""
    mtu = fabric.nic_config.mtu
    cq = fabric.create_cq(node, NAIVE_CQ_DEPTH)
    qp = fabric.create_qp(node, TransportMode.RC, cq, sq_depth=NAIVE_SQ_DEPTH,
                          rq_depth=NAIVE_RQ_DEPTH)
    if peer_cq is None:
        peer_cq = fabric.create_cq(peer_node, NAIVE_CQ_DEPTH)
    peer_qp = fabric.create_qp(peer_node, TransportMode.RC, peer_cq, sq_depth=NAIVE_SQ_DEPTH,
                               rq_depth=NAIVE_RQ_DEPTH)
    fabric.connect_qp(qp, peer_qp)
    recv = fabric.register_mr(node, NAIVE_RECV_BUFFERS * mtu, owner=app)
    data = fabric.register_mr(node, data_bytes, owner=app)
    return NaiveEndpoint(qp, peer_qp, cq, data, recv)


def naive_app_bytes(fabric: Fabric) -> int:
    """Closed form of the memory ``setup_naive_app`` takes on the app node."""
    return (QP_CONTEXT_BYTES + WQE_BYTES * (NAIVE_SQ_DEPTH + NAIVE_RQ_DEPTH)
            + CQE_BYTES * NAIVE_CQ_DEPTH + NAIVE_RECV_BUFFERS * fabric.nic_config.mtu
            + NAIVE_DATA_BYTES)
