"""Application/daemon request and response path."""

from .channel import EventChannel
from .records import END_OF_MESSAGE, RECORD_SIZE, ZERO_COPY, Op, RequestRecord, ResponseRecord
from .ring import ObjectRing, SpscRing

__all__ = [
    "EventChannel", "END_OF_MESSAGE", "RECORD_SIZE", "ZERO_COPY", "Op", "RequestRecord",
    "ResponseRecord", "ObjectRing", "SpscRing", "ring_create",
]


def ring_create(capacity: int, record_type=RequestRecord) -> SpscRing:
    return SpscRing(capacity, record_type)
