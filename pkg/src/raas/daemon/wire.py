"""How a virtual connection is stamped onto work requests.

One-sided verbs carry the vQPN in the low 32 bits of ``wr_id`` (the high 32
bits hold the request sequence number).  SEND carries the vQPN in
``imm_data`` so the receiving poller can find the logical connection; its
``wr_id`` uses the same packing for local bookkeeping.

Every daemon SEND payload starts with a 32-byte control header.
"""

from __future__ import annotations

import enum
import struct
from typing import NamedTuple, Optional

from ..errors import RaasError, Status
from ..verbs import RemoteRef, Sge, TransportMode, Verb, WorkRequest, is_legal

U32 = 0xFFFFFFFF
PULL_BIT = 0x80000000


def pack_wr_id(vqpn: int, seq: int = 0) -> int:
    if not 0 <= vqpn <= U32:
        raise RaasError(Status.BAD_REQUEST, "vqpn must fit in 32 bits")
    return ((seq & U32) << 32) | vqpn


def unpack_wr_id(wr_id: int) -> tuple[int, int]:
    return wr_id & U32, wr_id >> 32


def encode_wr(vc, verb: Verb, payload: Sge, *, seq: int = 0,
              remote: Optional[RemoteRef] = None) -> WorkRequest:
    """Build the WR that moves ``payload`` for virtual connection ``vc``."""
    transport = getattr(vc, "transport", TransportMode.RC)
    if verb is Verb.RECV or not is_legal(transport, verb):
        raise RaasError(Status.ILLEGAL_VERB, f"{verb.value} on {transport.value}")
    wr_id = pack_wr_id(vc.vqpn, seq)
    if verb is Verb.SEND:
        return WorkRequest(wr_id, verb, payload, imm_data=vc.vqpn)
    if remote is None:
        raise RaasError(Status.BAD_REQUEST, "one-sided verbs need a remote reference")
    return WorkRequest(wr_id, verb, payload, remote=remote)


def decode_vqpn(wr_id: int | None = None, imm_data: int | None = None) -> int:
    return imm_data if imm_data is not None else wr_id & U32


class Kind(enum.IntEnum):
    DATA = 1          # payload follows the header
    WRITE_NOTICE = 2  # a: pool index, b: pool offset, c: length
    PULL = 3          # a: rkey, b: offset, c: length, d: sender seq
    PULL_DONE = 4     # c: length, d: sender seq
    CREDIT = 5        # a: pool index, b: pool offset, c: length
    CLOSE = 6


_HDR = struct.Struct("<B3xIQQQ")
HEADER_SIZE = _HDR.size


class Header(NamedTuple):
    kind: Kind
    a: int = 0
    b: int = 0
    c: int = 0
    d: int = 0

    def pack_into(self, buf, offset: int = 0) -> None:
        _HDR.pack_into(buf, offset, self.kind, self.a, self.b, self.c, self.d)

    @classmethod
    def unpack_from(cls, buf, offset: int = 0) -> "Header":
        kind, a, b, c, d = _HDR.unpack_from(buf, offset)
        return cls(Kind(kind), a, b, c, d)
