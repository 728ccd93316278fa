"""Counting event channel (eventfd in semaphore mode)."""

from __future__ import annotations

import threading
from typing import Callable


class EventChannel:
    """``signal`` adds one token, ``wait`` takes one.

    Tokens are never lost: after n signals at most n waits succeed without
    a further signal.  Waiters must still re-check their ring after waking,
    because a token may belong to a record they already drained.
    """

    def __init__(self, channel_id: int = 0):
        self.channel_id = channel_id
        self._sem = threading.Semaphore(0)
        self._listeners: list[Callable[["EventChannel"], None]] = []

    def add_listener(self, fn: Callable[["EventChannel"], None]) -> None:
        self._listeners.append(fn)

    def signal(self) -> None:
        self._sem.release()
        for fn in self._listeners:
            fn(self)

    def wait(self, timeout: float | None = None) -> bool:
        """True when a token was taken, False on timeout."""
        if timeout is not None and timeout <= 0:
            return self._sem.acquire(blocking=False)
        return self._sem.acquire(timeout=timeout)
