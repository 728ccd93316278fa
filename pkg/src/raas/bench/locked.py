"""Lock-protected QP sharing, the conventional alternative to a daemon.

``q`` application threads share each QP and its CQ behind one mutex.  Every
operation takes the mutex twice: once to poll the shared CQ for its
completion, once to post the next work request.  A contended acquisition
costs a lock-handoff penalty during which the mutex stays unavailable.

An acquisition is contended when the mutex is still held, or when another
thread of the same QP has work in flight: such a thread spins on the shared
CQ and keeps pulling the lock's cache line away.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass


@dataclass
class LogicalLock:
    """Mutex in logical time: grants are reservations on a timeline."""

    penalty_ns: float
    free_at: float = 0.0
    acquisitions: int = 0
    contended: int = 0

    def acquire(self, ready_at: float, hold_ns: float, *, spinners: int = 0) -> float:
        """Take the lock no earlier than ``ready_at``; return release time.

        ``spinners`` counts other threads polling the same lock.
        """
        self.acquisitions += 1
        start = max(ready_at, self.free_at)
        if self.free_at > ready_at or spinners > 0:
            self.contended += 1
            start += self.penalty_ns
        self.free_at = start + hold_ns
        return self.free_at


class LockedQpAdapter:
    """QP access for threads sharing QPs ``q`` at a time.

    ``acquire_at`` serves the logical-time benchmark; ``locked`` wraps a
    real ``threading.Lock`` for thread-level tests and counts contention
    the same way (a failed non-blocking attempt).
    """

    def __init__(self, q: int, threads: int, *, penalty_ns: float = 3000.0,
                 hold_ns: float = 300.0, locking: bool = True):
        if q < 1 or threads < 1:
            raise ValueError("q and threads must be >= 1")
        self.q = q
        self.threads = threads
        self.hold_ns = hold_ns
        self.locking = locking
        self.qp_count = -(-threads // q)
        self.locks = [LogicalLock(penalty_ns if locking else 0.0) for _ in range(self.qp_count)]
        self._mutexes = [threading.Lock() for _ in range(self.qp_count)]
        self._real_contended = [0] * self.qp_count
        self._thread_free = [0.0] * threads
        self._inflight = [0] * threads

    def qp_of(self, thread: int) -> int:
        return thread // self.q

    def spinners(self, thread: int) -> int:
        """Other threads on this thread's QP that have work in flight."""
        idx = self.qp_of(thread)
        lo, hi = idx * self.q, min((idx + 1) * self.q, self.threads)
        return sum(1 for t in range(lo, hi) if t != thread and self._inflight[t])

    def began(self, thread: int) -> None:
        self._inflight[thread] += 1

    def finished(self, thread: int) -> None:
        self._inflight[thread] -= 1

    def acquire_at(self, thread: int, ready_at: float) -> float:
        """Poll then post for ``thread``; returns when the WR can go out."""
        t = max(ready_at, self._thread_free[thread])
        lock = self.locks[self.qp_of(thread)]
        spin = self.spinners(thread)
        for _ in range(2):  # poll the shared CQ, then post
            if self.locking:
                t = lock.acquire(t, self.hold_ns, spinners=spin)
            else:
                lock.acquisitions += 1
                t += self.hold_ns
        self._thread_free[thread] = t
        return t

    @contextmanager
    def locked(self, thread: int):
        idx = self.qp_of(thread)
        mutex = self._mutexes[idx]
        if not mutex.acquire(blocking=False):
            self._real_contended[idx] += 1
            mutex.acquire()
        try:
            yield idx
        finally:
            mutex.release()

    @property
    def contended(self) -> int:
        return sum(lock.contended for lock in self.locks) + sum(self._real_contended)

    @property
    def acquisitions(self) -> int:
        return sum(lock.acquisitions for lock in self.locks)


def baseline_locked_qp(q: int, threads: int | None = None, *, penalty_ns: float = 3000.0,
                       hold_ns: float = 300.0) -> LockedQpAdapter:
    return LockedQpAdapter(q, threads if threads is not None else q, penalty_ns=penalty_ns,
                           hold_ns=hold_ns)
