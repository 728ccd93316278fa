"""Value types of the verbs queuing model."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from ..errors import RaasError, Status

U32 = 0xFFFFFFFF
U64 = 0xFFFFFFFFFFFFFFFF
MAX_CONNECTED_MESSAGE = 1 << 30


class TransportMode(enum.Enum):
    RC = "RC"
    UC = "UC"
    UD = "UD"


class Verb(enum.Enum):
    SEND = "SEND"
    RECV = "RECV"
    WRITE = "WRITE"
    READ = "READ"

    @property
    def one_sided(self) -> bool:
        return self in (Verb.WRITE, Verb.READ)


LEGAL_VERBS: dict[TransportMode, frozenset[Verb]] = {
    TransportMode.RC: frozenset({Verb.SEND, Verb.RECV, Verb.WRITE, Verb.READ}),
    TransportMode.UC: frozenset({Verb.SEND, Verb.RECV, Verb.WRITE}),
    TransportMode.UD: frozenset({Verb.SEND, Verb.RECV}),
}


def is_legal(mode: TransportMode, verb: Verb) -> bool:
    return verb in LEGAL_VERBS[mode]


def max_message(mode: TransportMode, mtu: int) -> int:
    return mtu if mode is TransportMode.UD else MAX_CONNECTED_MESSAGE


class Side(enum.Enum):
    SEND_COMPLETION = "SEND"
    RECV_COMPLETION = "RECV"


class Sge(NamedTuple):
    """Local scatter/gather element: a slice of a registered region."""

    mr_id: int
    offset: int
    length: int


class RemoteRef(NamedTuple):
    rkey: int
    offset: int


class Dest(NamedTuple):
    """UD destination; address handles are not modeled."""

    node: str
    qp_id: int


@dataclass(eq=False)
class MemoryRegion:
    mr_id: int
    node: str
    base: Optional[int]  # None for externally backed buffers
    length: int
    local_key: int
    remote_key: int
    registered_at: float
    owner: Optional[str] = None
    reg_cost_ns: float = 0.0
    view: memoryview = field(default=None, repr=False)  # type: ignore[assignment]

    @property
    def lkey(self) -> int:
        return self.local_key

    @property
    def rkey(self) -> int:
        return self.remote_key

    def read(self, offset: int = 0, length: Optional[int] = None) -> bytes:
        if length is None:
            length = self.length - offset
        return bytes(self.view[offset:offset + length])

    def write(self, data: bytes, offset: int = 0) -> None:
        if offset < 0 or offset + len(data) > self.length:
            raise RaasError(Status.BAD_LENGTH, "write outside region")
        self.view[offset:offset + len(data)] = data


@dataclass
class WorkRequest:
    wr_id: int
    verb: Verb
    local: Sge
    remote: Optional[RemoteRef] = None
    imm_data: Optional[int] = None
    signaled: bool = True
    dest: Optional[Dest] = None

    def __post_init__(self) -> None:
        if not 0 <= self.wr_id <= U64:
            raise RaasError(Status.BAD_WR, "wr_id must fit in 64 bits")
        if (self.remote is not None) != self.verb.one_sided:
            raise RaasError(Status.BAD_WR, "remote is required exactly for WRITE and READ")
        if self.imm_data is not None:
            if self.verb is not Verb.SEND:
                raise RaasError(Status.BAD_WR, "imm_data is only carried by SEND")
            if not 0 <= self.imm_data <= U32:
                raise RaasError(Status.BAD_WR, "imm_data must fit in 32 bits")
        if self.local.length < 0 or self.local.offset < 0:
            raise RaasError(Status.BAD_WR, "negative local length or offset")

    @property
    def length(self) -> int:
        return self.local.length


@dataclass(frozen=True)
class CompletionEntry:
    wr_id: int
    status: Status
    byte_count: int
    imm_data: Optional[int]
    qp_id: int
    side: Side
    verb: Verb
    timestamp: float = 0.0
    # sending QP, reported on receive completions
    src_qp: Optional[int] = None
