"""Unified host address: IPv4, IPv6 or an RDMA GID/LID pair."""

from __future__ import annotations

import enum
import ipaddress
from dataclasses import dataclass

from ..errors import RaasError, Status


class AddrKind(enum.Enum):
    IPV4 = "ipv4"
    IPV6 = "ipv6"
    RDMA = "rdma"


@dataclass(frozen=True)
class Addr:
    """Textual forms: ``ipv4:10.0.0.1``, ``ipv6:[fe80::1]``, ``rdma:fe80::2/17``.

    An optional ``@port`` suffix names a listening service on the host.
    """

    kind: AddrKind
    host: str
    lid: int = 0
    port: int = 0

    @classmethod
    def parse(cls, text: str) -> "Addr":
        if isinstance(text, Addr):
            return text
        try:
            scheme, rest = text.split(":", 1)
            kind = AddrKind(scheme.lower())
        except ValueError:
            raise RaasError(Status.BAD_REQUEST, f"bad address {text!r}") from None
        port = 0
        if "@" in rest:
            rest, port_text = rest.rsplit("@", 1)
            port = _int(port_text, text, 0xFFFF)
        try:
            if kind is AddrKind.IPV4:
                return cls(kind, str(ipaddress.IPv4Address(rest)), 0, port)
            if kind is AddrKind.IPV6:
                if not (rest.startswith("[") and rest.endswith("]")):
                    raise ValueError("ipv6 hosts are bracketed")
                return cls(kind, str(ipaddress.IPv6Address(rest[1:-1])), 0, port)
            gid, lid_text = rest.rsplit("/", 1)
            return cls(kind, str(ipaddress.IPv6Address(gid)), _int(lid_text, text, 0xFFFF), port)
        except ValueError as exc:
            raise RaasError(Status.BAD_REQUEST, f"bad address {text!r}: {exc}") from None

    @property
    def node_key(self) -> str:
        """Host identity; connections with equal keys share a QP."""
        return f"{self.kind.value}:{self.host}"

    @property
    def gid(self) -> int:
        if self.kind is not AddrKind.RDMA:
            raise RaasError(Status.BAD_REQUEST, "only RDMA addresses carry a GID")
        return int(ipaddress.IPv6Address(self.host))

    def with_port(self, port: int) -> "Addr":
        return Addr(self.kind, self.host, self.lid, port)

    def __str__(self) -> str:
        if self.kind is AddrKind.IPV4:
            base = f"ipv4:{self.host}"
        elif self.kind is AddrKind.IPV6:
            base = f"ipv6:[{self.host}]"
        else:
            base = f"rdma:{self.host}/{self.lid}"
        return f"{base}@{self.port}" if self.port else base


def _int(text: str, full: str, limit: int) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise RaasError(Status.BAD_REQUEST, f"bad number in {full!r}") from None
    if not 0 <= value <= limit:
        raise RaasError(Status.BAD_REQUEST, f"number out of range in {full!r}")
    return value
