"""Software emulation of the RDMA verbs queuing model."""

from .arena import Arena, Extents
from .fabric import (
    CQE_BYTES,
    QP_CONTEXT_BYTES,
    RNR_UNBOUNDED,
    TRACE_HEADER,
    WQE_BYTES,
    CompletionQueue,
    Fabric,
    Node,
    QpState,
    QueuePair,
    SharedReceiveQueue,
)
from .nic import NicModel
from .types import (
    LEGAL_VERBS,
    MAX_CONNECTED_MESSAGE,
    CompletionEntry,
    Dest,
    MemoryRegion,
    RemoteRef,
    Sge,
    Side,
    TransportMode,
    Verb,
    WorkRequest,
    is_legal,
    max_message,
)

__all__ = [
    "Arena", "Extents", "CQE_BYTES", "QP_CONTEXT_BYTES", "RNR_UNBOUNDED", "WQE_BYTES",
    "TRACE_HEADER", "CompletionQueue", "Fabric", "Node", "QpState", "QueuePair",
    "SharedReceiveQueue", "NicModel", "LEGAL_VERBS", "MAX_CONNECTED_MESSAGE",
    "CompletionEntry", "Dest", "MemoryRegion", "RemoteRef", "Sge", "Side", "TransportMode",
    "Verb", "WorkRequest", "is_legal", "max_message",
]
