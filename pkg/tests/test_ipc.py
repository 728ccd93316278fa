"""SPSC rings, records and the event channel."""

import random
import struct
import threading
import time
from collections import deque

import pytest
from hypothesis import given, settings, strategies as st

from raas.errors import RaasError, Status
from raas.ipc import (
    RECORD_SIZE, EventChannel, ObjectRing, Op, RequestRecord, ResponseRecord, SpscRing,
    ring_create,
)
from raas.ipc.ring import SLOTS_OFFSET, TAIL_OFFSET

u32 = st.integers(0, 2**32 - 1)
u64 = st.integers(0, 2**64 - 1)


def test_ring_create():
    r = ring_create(8)
    assert r.size() == 0 and r.dequeue() is None
    for bad in (7, 0, 1, 12):
        with pytest.raises(RaasError) as e:
            ring_create(bad)
        assert e.value.status is Status.BAD_CAPACITY
    two = ring_create(2)
    assert two.enqueue(RequestRecord(Op.SEND, 1))
    assert not two.enqueue(RequestRecord(Op.SEND, 2))   # one sentinel slot


def test_full_and_fifo():
    r = ring_create(4)
    recs = [RequestRecord(Op.SEND, i, seq=i) for i in range(3)]
    assert all(r.enqueue(x) for x in recs)
    before = bytes(r.buffer)
    assert not r.enqueue(RequestRecord(Op.CLOSE, 9))
    assert bytes(r.buffer) == before     # FULL leaves the ring unchanged
    assert [r.dequeue() for _ in range(3)] == recs
    assert r.dequeue() is None


@settings(max_examples=100, deadline=None)
@given(st.lists(st.one_of(st.none(), st.integers(0, 1000)), max_size=200),
       st.sampled_from([2, 4, 8, 16]))
def test_ring_matches_queue_oracle(ops, cap):
    r, oracle = ObjectRing(cap), deque()
    sr = SpscRing(cap, RequestRecord)
    for op in ops:
        if op is None:
            want = oracle.popleft() if oracle else None
            assert r.dequeue() == want
            got = sr.dequeue()
            assert (got.seq if got else None) == want
        else:
            ok = len(oracle) < cap - 1
            assert r.enqueue(op) is ok
            assert sr.enqueue(RequestRecord(Op.SEND, 1, seq=op)) is ok
            if ok:
                oracle.append(op)
        assert len(r) == len(oracle) == sr.size()


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(list(Op)), u32, u32, u64, u64, u32, u64)
def test_request_round_trip(op, fd, region, offset, length, flags, seq):
    rec = RequestRecord(op, fd, region, offset, length, flags, seq)
    raw = rec.pack()
    assert len(raw) == RECORD_SIZE == 40
    assert RequestRecord.unpack(raw) == rec


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(list(Op)), st.sampled_from(list(Status)), u32, u32, u64, u64, u32, u64)
def test_response_round_trip(op, status, fd, region, offset, count, flags, seq):
    rec = ResponseRecord(op, fd, seq, status, count, region, offset, flags)
    assert ResponseRecord.unpack(rec.pack()) == rec


def test_request_abi_layout():
    raw = RequestRecord(Op.SEND, 0x11223344, 7, 0x0102030405060708, 99, 0xAABBCCDD, 5).pack()
    # little-endian fields at fixed offsets
    assert raw[0] == Op.SEND and raw[1:4] == b"\0\0\0"
    assert struct.unpack_from("<I", raw, 4)[0] == 0x11223344
    assert struct.unpack_from("<I", raw, 8)[0] == 7
    assert struct.unpack_from("<Q", raw, 12)[0] == 0x0102030405060708
    assert struct.unpack_from("<Q", raw, 20)[0] == 99
    assert struct.unpack_from("<I", raw, 28)[0] == 0xAABBCCDD
    assert struct.unpack_from("<Q", raw, 32)[0] == 5


def test_shared_buffer_view():
    """Two ring objects over one buffer act as the two ends of one ring."""
    buf = bytearray(SpscRing.nbytes_for(8))
    prod, cons = SpscRing(8, buffer=buf), SpscRing(8, buffer=buf)
    prod.enqueue(RequestRecord(Op.CONNECT, 4, seq=1))
    assert cons.dequeue() == RequestRecord(Op.CONNECT, 4, seq=1)


# -- concurrency --------------------------------------------------------------------

N_STRESS = 1_000_000


def stress(ring, make, key, n=N_STRESS):
    seen = []
    def producer():
        i = 0
        while i < n:
            if ring.enqueue(make(i)):
                i += 1
    def consumer():
        got = 0
        append = seen.append
        while got < n:
            x = ring.dequeue()
            if x is not None:
                append(key(x))
                got += 1
    threads = [threading.Thread(target=producer), threading.Thread(target=consumer)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return seen


def test_two_thread_stress_million():
    seen = stress(ObjectRing(1024), lambda i: i, lambda x: x)
    assert seen == list(range(N_STRESS))


def test_two_thread_stress_records():
    n = 100_000
    seen = stress(SpscRing(256), lambda i: RequestRecord(Op.SEND, 1, seq=i),
                  lambda r: r.seq, n)
    assert seen == list(range(n))


def test_obstruction_suspended_consumer():
    """A consumer that never runs cannot make the producer wait."""
    ring = ring_create(64)
    paused = threading.Event()
    release = threading.Event()
    def consumer():
        paused.set()
        release.wait()
    t = threading.Thread(target=consumer)
    t.start()
    paused.wait()
    results = []
    t0 = time.perf_counter()
    for i in range(1000):
        results.append(ring.enqueue(RequestRecord(Op.SEND, 1, seq=i)))
    elapsed = time.perf_counter() - t0
    release.set()
    t.join()
    assert results[:63] == [True] * 63 and not any(results[63:])
    assert elapsed < 1.0


def test_obstruction_half_finished_producer():
    """A producer stopped between slot write and publish is invisible."""
    ring = ring_create(8)
    ring.enqueue(RequestRecord(Op.SEND, 1, seq=1))
    # write a slot without publishing the tail, as a suspended producer would
    RequestRecord(Op.SEND, 1, seq=2).pack_into(ring.buffer, SLOTS_OFFSET + ring.slot_size)
    assert ring.dequeue().seq == 1
    assert ring.dequeue() is None
    # the producer resumes and publishes: now, and only now, it is visible
    struct.pack_into("<Q", ring.buffer, TAIL_OFFSET, 2)
    assert ring.dequeue().seq == 2


# -- event channel ---------------------------------------------------------------------

def test_channel_basics():
    ch = EventChannel()
    ch.signal()
    assert ch.wait(0.01)
    t0 = time.monotonic()
    assert not ch.wait(0.01)
    assert time.monotonic() - t0 >= 0.009
    for _ in range(3):
        ch.signal()
    assert sum(ch.wait(0) for _ in range(4)) == 3


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 50), st.integers(0, 60))
def test_channel_never_over_wakes(n, waits):
    ch = EventChannel()
    for _ in range(n):
        ch.signal()
    assert sum(ch.wait(0) for _ in range(waits)) == min(n, waits)


def run_schedule(rng, records, signal_first=False):
    """Interleave a producer {enqueue; signal}* with a consumer loop
    {wait; drain until empty} step by step, on the real ring and channel.

    Returns True on a lost wakeup: the consumer is blocked for good while
    records are still queued.
    """
    ring, ch = ObjectRing(4), EventChannel()
    prog = []
    for i in range(records):
        steps = [("enq", i), ("sig", None)]
        prog += steps[::-1] if signal_first else steps
    consumed = []
    waiting = True
    for _ in range(10_000):
        if prog and (rng.random() < 0.5):
            kind, i = prog[0]
            if kind == "sig":
                ch.signal()
                prog.pop(0)
            elif ring.enqueue(i):
                prog.pop(0)
            continue
        if waiting:
            if ch.wait(0):
                waiting = False
            elif not prog:
                break   # blocked with no producer left
            continue
        x = ring.dequeue()
        if x is None:
            waiting = True
        else:
            consumed.append(x)
    else:
        raise AssertionError("schedule did not terminate")
    return len(ring) > 0 or consumed != list(range(records))


def test_no_lost_wakeup_randomized_schedules():
    rng = random.Random(2024)
    stalls = sum(run_schedule(rng, rng.randint(1, 6)) for _ in range(100_000))
    assert stalls == 0


def test_schedule_explorer_catches_broken_protocol():
    """Signalling before publishing loses wakeups; the explorer must see it."""
    rng = random.Random(7)
    assert sum(run_schedule(rng, 3, signal_first=True) for _ in range(2000)) > 0


def test_no_lost_wakeup_threads():
    ring, ch = ObjectRing(8), EventChannel()
    n = 20_000
    got = []
    def consumer():
        while len(got) < n:
            if not ch.wait(5.0):
                return
            while (x := ring.dequeue()) is not None:
                got.append(x)
    t = threading.Thread(target=consumer)
    t.start()
    for i in range(n):
        while not ring.enqueue(i):
            time.sleep(0)
        ch.signal()
    t.join(10)
    assert got == list(range(n))
