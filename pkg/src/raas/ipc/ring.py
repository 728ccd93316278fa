"""Single-producer/single-consumer rings.

Both sides keep a private copy of the index they own and only *read* the
other side's index, so neither enqueue nor dequeue ever waits on the peer.
One slot stays empty to tell full from empty, leaving ``capacity - 1``
usable slots.  Indices grow monotonically; the slot is ``index & mask``.

``SpscRing`` keeps fixed-size records in a byte buffer laid out as::

    [0, 8)     head  u64  (written by the consumer only)
    [64, 72)   tail  u64  (written by the producer only)
    [128, ...) capacity slots of record_type.SIZE bytes

so the same layout can live in ``multiprocessing.shared_memory``.  A slot is
written before the tail store that publishes it, and read before the head
store that releases it.
"""

from __future__ import annotations

import struct
from typing import Any, Generic, Optional, TypeVar

from ..errors import RaasError, Status
from .records import RequestRecord

HEAD_OFFSET = 0
TAIL_OFFSET = 64
SLOTS_OFFSET = 128
_U64 = struct.Struct("<Q")

T = TypeVar("T")


def _check_capacity(capacity: int) -> None:
    if capacity < 2 or capacity & (capacity - 1):
        raise RaasError(Status.BAD_CAPACITY, f"capacity {capacity} is not a power of two >= 2")


class SpscRing:
    def __init__(self, capacity: int, record_type: Any = RequestRecord, buffer=None):
        _check_capacity(capacity)
        self.capacity = capacity
        self.record_type = record_type
        self.slot_size = record_type.SIZE
        self._mask = capacity - 1
        nbytes = self.nbytes_for(capacity, record_type)
        if buffer is None:
            buffer = bytearray(nbytes)
        elif len(buffer) < nbytes:
            raise RaasError(Status.BAD_CAPACITY, "buffer too small for the ring")
        self.buffer = memoryview(buffer)
        self._tail = _U64.unpack_from(self.buffer, TAIL_OFFSET)[0]
        self._head = _U64.unpack_from(self.buffer, HEAD_OFFSET)[0]

    @staticmethod
    def nbytes_for(capacity: int, record_type: Any = RequestRecord) -> int:
        return SLOTS_OFFSET + capacity * record_type.SIZE

    @property
    def usable(self) -> int:
        return self.capacity - 1

    def size(self) -> int:
        return (_U64.unpack_from(self.buffer, TAIL_OFFSET)[0]
                - _U64.unpack_from(self.buffer, HEAD_OFFSET)[0])

    def __len__(self) -> int:
        return self.size()

    # producer side
    def enqueue(self, record) -> bool:
        tail = self._tail
        if tail - _U64.unpack_from(self.buffer, HEAD_OFFSET)[0] >= self._mask:
            return False
        record.pack_into(self.buffer, SLOTS_OFFSET + (tail & self._mask) * self.slot_size)
        _U64.pack_into(self.buffer, TAIL_OFFSET, tail + 1)
        self._tail = tail + 1
        return True

    # consumer side
    def dequeue(self):
        head = self._head
        if _U64.unpack_from(self.buffer, TAIL_OFFSET)[0] == head:
            return None
        record = self._load_slot(SLOTS_OFFSET + (head & self._mask) * self.slot_size)
        _U64.pack_into(self.buffer, HEAD_OFFSET, head + 1)
        self._head = head + 1
        return record

    def _load_slot(self, offset: int):
        return self.record_type.unpack_from(self.buffer, offset)


class ObjectRing(Generic[T]):
    """Same protocol as ``SpscRing`` but slots hold Python objects.

    Used for queues that never leave the daemon process.
    """

    def __init__(self, capacity: int):
        _check_capacity(capacity)
        self.capacity = capacity
        self._mask = capacity - 1
        self._slots: list[Optional[T]] = [None] * capacity
        self.head = 0
        self.tail = 0

    def __len__(self) -> int:
        return self.tail - self.head

    def enqueue(self, item: T) -> bool:
        tail = self.tail
        if tail - self.head >= self._mask:
            return False
        self._slots[tail & self._mask] = item
        self.tail = tail + 1
        return True

    def dequeue(self) -> Optional[T]:
        head = self.head
        if self.tail == head:
            return None
        idx = head & self._mask
        item = self._slots[idx]
        self._slots[idx] = None
        self.head = head + 1
        return item
