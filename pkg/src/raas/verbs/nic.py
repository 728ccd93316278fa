"""NIC queue-pair context cache with LRU replacement."""

from __future__ import annotations

from collections import OrderedDict

from ..config import NicConfig


class NicModel:
    """Finite cache of QP contexts.

    ``service(qp_id)`` is the single entry point used by the fabric: it
    returns the fixed per-WR cost for touching that QP's context and makes
    the context most recently used, evicting the LRU entry if needed.
    """

    def __init__(self, config: NicConfig | None = None, **overrides):
        cfg = config or NicConfig()
        if overrides:
            cfg = NicConfig(**{**cfg.__dict__, **overrides})
        cfg.validate()
        self.config = cfg
        self._cache: OrderedDict[int, None] = OrderedDict()
        self._known: set[int] = set()
        self.hits = 0
        self.misses = 0

    @property
    def cache_capacity(self) -> int:
        return self.config.cache_capacity

    @property
    def hit_cost(self) -> float:
        return self.config.hit_cost_ns

    @property
    def miss_cost(self) -> float:
        return self.config.miss_cost_ns

    @property
    def occupancy(self) -> int:
        return len(self._cache)

    @property
    def registered(self) -> int:
        return len(self._known)

    def register(self, qp_id: int) -> None:
        self._known.add(qp_id)

    def unregister(self, qp_id: int) -> None:
        self._known.discard(qp_id)
        self._cache.pop(qp_id, None)

    def cached(self, qp_id: int) -> bool:
        return qp_id in self._cache

    def access(self, qp_id: int) -> bool:
        """Touch ``qp_id``; True on a cache hit."""
        cache = self._cache
        if qp_id in cache:
            cache.move_to_end(qp_id)
            self.hits += 1
            return True
        self.misses += 1
        cache[qp_id] = None
        if len(cache) > self.config.cache_capacity:
            cache.popitem(last=False)
        return False

    def service(self, qp_id: int) -> float:
        return self.config.hit_cost_ns if self.access(qp_id) else self.config.miss_cost_ns

    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0

    def reset_stats(self) -> None:
        self.hits = self.misses = 0
