"""FLAGS argument of connect/send: optional transport and verb overrides."""

from __future__ import annotations

import enum
from typing import Optional

from ..errors import RaasError, Status
from ..verbs import TransportMode, Verb, is_legal


class Flags(enum.IntFlag):
    DEFAULT = 0  # no transport bit: RC unless a verb says otherwise
    RC = 0x01
    UD = 0x02
    AUTO = 0  # no verb bit: the policy picks
    SEND = 0x10
    WRITE = 0x20
    READ = 0x40
    NONBLOCK = 0x100


TRANSPORT_BITS = {Flags.RC: TransportMode.RC, Flags.UD: TransportMode.UD}
VERB_BITS = {Flags.SEND: Verb.SEND, Flags.WRITE: Verb.WRITE, Flags.READ: Verb.READ}
_KNOWN = Flags.RC | Flags.UD | Flags.SEND | Flags.WRITE | Flags.READ | Flags.NONBLOCK


def split_flags(flags: int) -> tuple[Optional[TransportMode], Optional[Verb]]:
    """Return the explicit (transport, verb); raise on contradictions."""
    flags = int(flags)
    if flags & ~int(_KNOWN):
        raise RaasError(Status.CONTRADICTORY_FLAGS, f"unknown flag bits {flags:#x}")
    transports = [mode for bit, mode in TRANSPORT_BITS.items() if flags & bit]
    verbs = [verb for bit, verb in VERB_BITS.items() if flags & bit]
    if len(transports) > 1 or len(verbs) > 1:
        raise RaasError(Status.CONTRADICTORY_FLAGS, "more than one transport or verb bit")
    mode = transports[0] if transports else None
    verb = verbs[0] if verbs else None
    if mode is not None and verb is not None and not is_legal(mode, verb):
        raise RaasError(Status.CONTRADICTORY_FLAGS, f"{mode.value}|{verb.value} is not supported")
    return mode, verb


def check_flags(flags: int) -> Flags:
    split_flags(flags)
    return Flags(int(flags))
