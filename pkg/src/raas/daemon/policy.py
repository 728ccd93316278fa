"""Adaptive transport/verb selection and the send-path copy decision."""

from __future__ import annotations

import enum
from dataclasses import dataclass

from ..config import PolicyConfig
from ..errors import RaasError, Status
from ..verbs import TransportMode, Verb
from .flags import split_flags


@dataclass(frozen=True)
class LoadStats:
    cpu_load: float = 0.0
    mem_used: int = 0
    window_ns: float = 10_000_000.0

    def __post_init__(self):
        if not 0.0 <= self.cpu_load <= 1.0:
            raise RaasError(Status.BAD_REQUEST, "cpu_load must lie in [0, 1]")


IDLE = LoadStats()


def select_path(length: int, flags: int, local: LoadStats, remote: LoadStats,
                policy: PolicyConfig, *, inbound: bool = False) -> tuple[TransportMode, Verb]:
    """Pick (transport, verb) for moving ``length`` bytes.

    Explicit flag bits win outright.  Otherwise small messages go as RC
    SEND; large ones use a one-sided verb, READ only when the data flows
    toward us and the remote host is above the CPU watermark.
    """
    if length < 0:
        raise RaasError(Status.BAD_LENGTH, "negative length")
    mode, verb = split_flags(flags)
    if verb is not None:
        return mode or TransportMode.RC, verb
    if mode is TransportMode.UD:
        return TransportMode.UD, Verb.SEND
    if length <= policy.small_msg_threshold:
        return TransportMode.RC, Verb.SEND
    if inbound and remote.cpu_load >= policy.cpu_high_watermark:
        return TransportMode.RC, Verb.READ
    return TransportMode.RC, Verb.WRITE


class CopyMode(enum.Enum):
    MEMCPY = "memcpy"
    MEMREG = "memreg"


def copy_or_register(length: int, policy: PolicyConfig) -> CopyMode:
    """Copy small payloads into pre-registered memory, register large ones."""
    if length <= 0:
        raise RaasError(Status.BAD_LENGTH, "length must be positive")
    return CopyMode.MEMCPY if length < policy.copy_register_crossover else CopyMode.MEMREG


class LoadTracker:
    """EWMA of busy fraction over fixed logical-time windows."""

    def __init__(self, alpha: float = 0.2, window_ns: float = 10_000_000.0):
        self.alpha = alpha
        self.window_ns = window_ns
        self.load = 0.0
        self._start = 0.0
        self._busy = 0.0

    def _roll(self, now: float) -> None:
        if now < self._start + self.window_ns:
            return
        windows = int((now - self._start) // self.window_ns)
        frac = min(1.0, self._busy / self.window_ns)
        self.load = self.alpha * frac + (1 - self.alpha) * self.load
        # the remaining windows were idle
        self.load *= (1 - self.alpha) ** (windows - 1)
        self._start += windows * self.window_ns
        self._busy = 0.0

    def record(self, now: float, busy_ns: float) -> None:
        self._roll(now)
        self._busy += busy_ns

    def value(self, now: float) -> float:
        self._roll(now)
        return self.load
