"""Status codes shared by the simulator, the IPC records and the daemon."""

from __future__ import annotations

import enum


class Status(enum.IntEnum):
    OK = 0
    # generic
    BAD_LENGTH = 1
    BAD_CONFIG = 2
    CONFIG_ERROR = 3
    BAD_REQUEST = 4
    WOULD_BLOCK = 5
    TIMEOUT = 6
    # ipc
    BAD_CAPACITY = 10
    FULL = 11
    EMPTY = 12
    # verbs
    NODE_UNKNOWN = 20
    SRQ_UNSUPPORTED = 21
    MODE_MISMATCH = 22
    ALREADY_CONNECTED = 23
    UD_NOT_CONNECTABLE = 24
    SELF_CONNECT = 25
    ARENA_FULL = 26
    ILLEGAL_VERB = 27
    MSG_TOO_LARGE = 28
    BAD_RKEY = 29
    BAD_LKEY = 30
    QUEUE_FULL = 31
    QP_NOT_READY = 32
    QP_ERROR = 33
    BAD_WR = 34
    RNR_ERROR = 35
    FLUSH_ERROR = 36
    LENGTH_ERROR = 37
    # daemon / client
    DEST_UNREACHABLE = 50
    VQPN_EXHAUSTED = 51
    UNKNOWN_VQPN = 52
    CONTRADICTORY_FLAGS = 53
    DAEMON_EXISTS = 54
    BAD_FD = 55
    CLOSED_WHILE_WAITING = 56
    PEER_CLOSED = 57
    BAD_MR = 58
    MR_TOO_SMALL = 59
    SHUTDOWN = 60


class RaasError(Exception):
    """Raised for any contract violation; ``status`` carries the code."""

    def __init__(self, status: Status, message: str = ""):
        self.status = Status(status)
        super().__init__(f"{self.status.name}: {message}" if message else self.status.name)


class WouldBlock(RaasError):
    def __init__(self, message: str = ""):
        super().__init__(Status.WOULD_BLOCK, message)


class BatchError(RaasError):
    """A batch was accepted only up to ``index``; ``cause`` is the failure there."""

    def __init__(self, index: int, cause: RaasError):
        self.index = index
        self.accepted = index
        self.cause = cause
        super().__init__(cause.status, f"batch rejected at index {index}: {cause}")
