"""First-fit allocator over a node's byte arena."""

from __future__ import annotations

import bisect
import mmap

from ..errors import RaasError, Status


class Extents:
    """Offsets-only allocator; the memory itself lives elsewhere."""

    ALIGN = 64

    def __init__(self, size: int):
        self.size = size
        # sorted, non-overlapping free extents as (start, length)
        self._free: list[tuple[int, int]] = [(0, size)]
        self._used: dict[int, int] = {}

    @property
    def used(self) -> int:
        return sum(self._used.values())

    @property
    def available(self) -> int:
        return self.size - self.used

    def owns(self, base: int) -> bool:
        return base in self._used

    def alloc(self, length: int) -> int:
        if length <= 0:
            raise RaasError(Status.BAD_LENGTH, "allocation length must be positive")
        need = -(-length // self.ALIGN) * self.ALIGN
        for i, (start, size) in enumerate(self._free):
            if size >= need:
                if size == need:
                    del self._free[i]
                else:
                    self._free[i] = (start + need, size - need)
                self._used[start] = need
                return start
        raise RaasError(Status.ARENA_FULL, f"no {length}-byte extent left")

    def try_alloc(self, length: int) -> int | None:
        try:
            return self.alloc(length)
        except RaasError as exc:
            if exc.status is Status.ARENA_FULL:
                return None
            raise

    def free(self, base: int) -> None:
        size = self._used.pop(base)
        i = bisect.bisect_left(self._free, (base, 0))
        self._free.insert(i, (base, size))
        # coalesce with neighbours
        if i + 1 < len(self._free) and base + size == self._free[i + 1][0]:
            self._free[i] = (base, size + self._free[i + 1][1])
            del self._free[i + 1]
        if i > 0 and self._free[i - 1][0] + self._free[i - 1][1] == base:
            prev = self._free[i - 1]
            self._free[i - 1] = (prev[0], prev[1] + self._free[i][1])
            del self._free[i]


class Arena(Extents):
    """A node's registrable memory: a bytearray plus its allocator."""

    def __init__(self, size: int):
        super().__init__(size)
        # anonymous mappings are zero-filled and only take memory once touched
        self.buffer = mmap.mmap(-1, size)
        self.view = memoryview(self.buffer)
