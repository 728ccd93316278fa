"""The shared RDMA service and its control plane."""

from .addr import Addr, AddrKind
from .cluster import Cluster, Listener
from .flags import Flags, check_flags, split_flags
from .policy import IDLE, CopyMode, LoadStats, LoadTracker, copy_or_register, select_path
from .service import METRICS_HEADER, Daemon, Poller, VcState, VirtualConnection, Worker
from .wire import HEADER_SIZE, Header, Kind, decode_vqpn, encode_wr, pack_wr_id, unpack_wr_id

__all__ = [
    "Addr", "AddrKind", "Cluster", "Listener", "Flags", "check_flags", "split_flags", "IDLE",
    "CopyMode", "LoadStats", "LoadTracker", "copy_or_register", "select_path",
    "METRICS_HEADER", "Daemon", "Poller", "VcState", "VirtualConnection", "Worker",
    "HEADER_SIZE", "Header", "Kind", "decode_vqpn", "encode_wr", "pack_wr_id", "unpack_wr_id",
    "daemon_start", "daemon_stop",
]


def daemon_start(cluster: Cluster, node: str, config=None, *, threaded: bool = True) -> Daemon:
    return cluster.start_daemon(node, config, threaded=threaded)


def daemon_stop(daemon: Daemon) -> None:
    daemon.stop()
