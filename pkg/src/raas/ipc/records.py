"""Fixed 40-byte request/response records exchanged over the rings.

ABI (little-endian, no implicit padding)::

    RequestRecord   op:u8 pad:3 fd:u32 region:u32 offset:u64 length:u64 flags:u32 seq:u64
    ResponseRecord  op:u8 status:u8 pad:2 fd:u32 region:u32 offset:u64 byte_count:u64
                    flags:u32 seq:u64

``region`` is a memory-region id inside the daemon's node; region 0 means
"no buffer".  For a response, (region, offset, byte_count) is the payload
reference of inbound data.
"""

from __future__ import annotations

import enum
import struct
from typing import NamedTuple

from ..errors import Status

RECORD_SIZE = 40


class Op(enum.IntEnum):
    CONNECT = 1
    SEND = 2
    RECV_READY = 3
    CLOSE = 4
    # one-sided fetch from the peer's exposed pool into the given buffer
    READ = 5


# response flag bits
END_OF_MESSAGE = 0x1
ZERO_COPY = 0x2

_REQ = struct.Struct("<B3xIIQQIQ")
_RESP = struct.Struct("<BB2xIIQQIQ")
assert _REQ.size == RECORD_SIZE and _RESP.size == RECORD_SIZE


class RequestRecord(NamedTuple):
    op: Op
    fd: int
    region: int = 0
    offset: int = 0
    length: int = 0
    flags: int = 0
    seq: int = 0

    SIZE = RECORD_SIZE

    def pack(self) -> bytes:
        return _REQ.pack(self.op, self.fd, self.region, self.offset, self.length,
                         self.flags, self.seq)

    def pack_into(self, buf, offset: int) -> None:
        _REQ.pack_into(buf, offset, self.op, self.fd, self.region, self.offset, self.length,
                       self.flags, self.seq)

    @classmethod
    def unpack(cls, data) -> "RequestRecord":
        return cls.unpack_from(data, 0)

    @classmethod
    def unpack_from(cls, buf, offset: int) -> "RequestRecord":
        op, fd, region, off, length, flags, seq = _REQ.unpack_from(buf, offset)
        return cls(Op(op), fd, region, off, length, flags, seq)

    @property
    def buffer(self) -> tuple[int, int, int]:
        return self.region, self.offset, self.length


class ResponseRecord(NamedTuple):
    op: Op
    fd: int
    seq: int
    status: Status = Status.OK
    byte_count: int = 0
    region: int = 0
    offset: int = 0
    flags: int = 0

    SIZE = RECORD_SIZE

    def pack(self) -> bytes:
        return _RESP.pack(self.op, self.status, self.fd, self.region, self.offset,
                          self.byte_count, self.flags, self.seq)

    def pack_into(self, buf, offset: int) -> None:
        _RESP.pack_into(buf, offset, self.op, self.status, self.fd, self.region, self.offset,
                        self.byte_count, self.flags, self.seq)

    @classmethod
    def unpack(cls, data) -> "ResponseRecord":
        return cls.unpack_from(data, 0)

    @classmethod
    def unpack_from(cls, buf, offset: int) -> "ResponseRecord":
        op, status, fd, region, off, count, flags, seq = _RESP.unpack_from(buf, offset)
        return cls(Op(op), fd, seq, Status(status), count, region, off, flags)

    @property
    def payload_ref(self) -> tuple[int, int, int] | None:
        if self.region == 0:
            return None
        return self.region, self.offset, self.byte_count
