"""Benchmark scenario description and its INI file form.

Example::

    [scenario]
    name = cliff
    mode = NAIVE
    connections = 100, 200, 300
    msg_size = 65536
    duration = 0.01
    seed = 1

    [nic]
    cache_capacity = 400

``[nic]``, ``[fabric]``, ``[policy]`` and ``[daemon]`` sections override the
simulator defaults exactly as in a daemon config file.
"""

from __future__ import annotations

import configparser
import copy
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..config import SimConfig, apply_section
from ..errors import RaasError, Status


class Mode(enum.Enum):
    NAIVE = "NAIVE"
    RAAS = "RAAS"
    LOCKED_SHARING = "LOCKED_SHARING"

    @classmethod
    def parse(cls, text: str) -> "Mode":
        key = text.strip().upper()
        aliases = {"LOCKED": "LOCKED_SHARING"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise RaasError(Status.CONFIG_ERROR, f"unknown mode {text!r}") from None


@dataclass
class BenchScenario:
    name: str = "scenario"
    mode: Mode = Mode.NAIVE
    connections: list[int] = field(default_factory=lambda: list(range(100, 1001, 100)))
    q: Optional[int] = None
    msg_size: int = 65536
    op: str = "READ"
    duration: float = 0.01      # simulated seconds measured
    warmup: float = 0.005       # simulated seconds discarded first
    seed: int = 1
    threads: int = 8
    lock_penalty_ns: float = 3000.0
    lock_hold_ns: float = 300.0
    tick_ns: float = 10_000.0
    remote_bytes: int = 1 << 20
    sim: SimConfig = field(default_factory=SimConfig)

    def validate(self) -> None:
        if self.op.upper() != "READ":
            raise RaasError(Status.CONFIG_ERROR, "only READ scenarios are supported")
        if not self.connections or any(c < 1 for c in self.connections):
            raise RaasError(Status.CONFIG_ERROR, "connections must be positive")
        if any(b <= a for a, b in zip(self.connections, self.connections[1:])):
            raise RaasError(Status.CONFIG_ERROR, "connections must be strictly increasing")
        if self.mode is Mode.LOCKED_SHARING:
            if self.q is None or self.q < 1:
                raise RaasError(Status.CONFIG_ERROR, "LOCKED_SHARING needs q >= 1")
        elif self.q is not None:
            raise RaasError(Status.CONFIG_ERROR, "q only applies to LOCKED_SHARING")
        if self.msg_size < 1 or self.msg_size > self.remote_bytes:
            raise RaasError(Status.CONFIG_ERROR, "msg_size must lie in [1, remote_bytes]")
        if self.duration <= 0 or self.warmup < 0 or self.tick_ns <= 0:
            raise RaasError(Status.CONFIG_ERROR, "bad timing parameters")
        if self.threads < 1 or self.lock_penalty_ns < 0 or self.lock_hold_ns < 0:
            raise RaasError(Status.CONFIG_ERROR, "bad thread or lock parameters")
        try:
            self.sim.validate()
        except RaasError as exc:
            raise RaasError(Status.CONFIG_ERROR, str(exc)) from None

    def with_(self, **changes) -> "BenchScenario":
        out = copy.deepcopy(self)
        for key, value in changes.items():
            setattr(out, key, value)
        return out


_FLOATS = {"duration", "warmup", "lock_penalty_ns", "lock_hold_ns", "tick_ns"}
_INTS = {"msg_size", "seed", "threads", "remote_bytes"}


def parse_connections(text: str) -> list[int]:
    out = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        if ":" in part:
            start, stop, step = (int(x) for x in part.split(":"))
            out.extend(range(start, stop + 1, step))
        else:
            out.append(int(part))
    return out


def load_scenario(path: str | Path) -> BenchScenario:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if not parser.read(path):
        raise RaasError(Status.CONFIG_ERROR, f"cannot read {path}")
    if "scenario" not in parser:
        raise RaasError(Status.CONFIG_ERROR, "missing [scenario] section")
    scn = BenchScenario()
    try:
        for key, raw in parser["scenario"].items():
            if key == "mode":
                scn.mode = Mode.parse(raw)
            elif key == "connections":
                scn.connections = parse_connections(raw)
            elif key == "q":
                scn.q = int(raw) if raw.strip() else None
            elif key in _FLOATS:
                setattr(scn, key, float(raw))
            elif key in _INTS:
                setattr(scn, key, int(raw, 0))
            elif key in ("name", "op"):
                setattr(scn, key, raw.strip())
            else:
                raise RaasError(Status.CONFIG_ERROR, f"unknown key [scenario] {key}")
    except ValueError as exc:
        raise RaasError(Status.CONFIG_ERROR, f"bad scenario value: {exc}") from None
    for section in parser.sections():
        if section == "scenario":
            continue
        if not hasattr(scn.sim, section):
            raise RaasError(Status.CONFIG_ERROR, f"unknown section [{section}]")
        apply_section(getattr(scn.sim, section), dict(parser[section]), section)
    scn.validate()
    return scn
