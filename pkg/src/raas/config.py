"""Tunable constants for the simulator, daemon and policy.

Every knob lives in a plain dataclass with a documented default.  Files are
INI-style ``key = value`` text with one section per dataclass::

    [nic]
    cache_capacity = 400
    miss_cost_ns = 1200

    [policy]
    batching_window = 16

Unknown sections or keys are rejected so that typos do not silently fall
back to defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import RaasError, Status

KiB = 1024
MiB = 1024 * KiB


@dataclass
class NicConfig:
    cache_capacity: int = 400
    hit_cost_ns: float = 200.0
    miss_cost_ns: float = 1200.0
    per_byte_cost_ns: float = 0.025
    batch_discount: float = 0.6
    mtu: int = 4096

    def validate(self) -> None:
        if self.cache_capacity < 1:
            raise RaasError(Status.BAD_CONFIG, "cache_capacity must be >= 1")
        if not self.miss_cost_ns > self.hit_cost_ns >= 0:
            raise RaasError(Status.BAD_CONFIG, "need miss_cost_ns > hit_cost_ns >= 0")
        if self.per_byte_cost_ns < 0:
            raise RaasError(Status.BAD_CONFIG, "per_byte_cost_ns must be >= 0")
        if not 0 < self.batch_discount <= 1:
            raise RaasError(Status.BAD_CONFIG, "batch_discount must lie in (0, 1]")
        if self.mtu < 256:
            raise RaasError(Status.BAD_CONFIG, "mtu must be >= 256")


@dataclass
class FabricConfig:
    propagation_ns: float = 1500.0
    reg_fixed_ns: float = 800.0
    reg_per_byte_ns: float = 0.1
    # chosen so memcpy and memreg break even near 64 KiB
    memcpy_per_byte_ns: float = 0.1122
    rnr_timer_ns: float = 5000.0
    rnr_retry: int = 7
    # virtual size; an mmap only commits pages that are touched
    arena_bytes: int = 256 * MiB
    sq_depth: int = 4096
    rq_depth: int = 4096
    # host CPU spent creating one QP (context setup, state transitions)
    qp_create_ns: float = 20_000.0
    seed: int = 0

    def validate(self) -> None:
        for name in ("propagation_ns", "reg_fixed_ns", "reg_per_byte_ns",
                     "memcpy_per_byte_ns", "rnr_timer_ns", "qp_create_ns"):
            if getattr(self, name) < 0:
                raise RaasError(Status.BAD_CONFIG, f"{name} must be >= 0")
        if self.rnr_retry < 0 or self.arena_bytes <= 0:
            raise RaasError(Status.BAD_CONFIG, "rnr_retry >= 0 and arena_bytes > 0 required")
        if self.sq_depth < 1 or self.rq_depth < 1:
            raise RaasError(Status.BAD_CONFIG, "queue depths must be >= 1")


@dataclass
class PolicyConfig:
    small_msg_threshold: int = 4096
    cpu_high_watermark: float = 0.7
    copy_register_crossover: int = 64 * KiB
    batching_window: int = 16

    def validate(self) -> None:
        if self.small_msg_threshold <= 0 or self.copy_register_crossover <= 0:
            raise RaasError(Status.BAD_CONFIG, "thresholds must be positive")
        if self.copy_register_crossover < self.small_msg_threshold:
            raise RaasError(Status.BAD_CONFIG, "crossover must be >= small_msg_threshold")
        if not 0 < self.cpu_high_watermark <= 1:
            raise RaasError(Status.BAD_CONFIG, "cpu_high_watermark must lie in (0, 1]")
        if self.batching_window < 1:
            raise RaasError(Status.BAD_CONFIG, "batching_window must be >= 1")


@dataclass
class DaemonConfig:
    worker_count: int = 2
    # 0 means one shared QP per (destination, worker)
    qps_per_node: int = 0
    srq_depth: int = 256
    srq_low_watermark: int = 64
    srq_buffer_bytes: int = 4096 + 64
    ring_capacity: int = 64
    # receive pool per peer link; bounds the largest WRITE-path message
    write_pool_bytes: int = 2 * MiB
    pull_pool_bytes: int = 2 * MiB
    staging_bytes: int = 512 * KiB
    # small inbound messages are copied here so SRQ buffers recycle at once
    inbox_bytes: int = 1 * MiB
    ud_recv_depth: int = 64
    vqpn_bits: int = 32
    worker_cpu_ns: float = 150.0
    doorbell_cpu_ns: float = 300.0
    # control-plane CPU to set up one virtual connection (vqpn, rings)
    vc_setup_ns: float = 2000.0
    load_alpha: float = 0.2
    load_window_ns: float = 10_000_000.0
    nic_config: str = ""

    def validate(self) -> None:
        if self.worker_count < 1:
            raise RaasError(Status.BAD_CONFIG, "worker_count must be >= 1")
        if self.qps_per_node not in (0, 1) and self.qps_per_node != self.worker_count:
            raise RaasError(Status.BAD_CONFIG, "qps_per_node must be 0, 1 or worker_count")
        if self.qps_per_node == 1 and self.worker_count != 1:
            raise RaasError(Status.BAD_CONFIG, "qps_per_node = 1 needs a single worker")
        if not 0 < self.srq_low_watermark < self.srq_depth:
            raise RaasError(Status.BAD_CONFIG, "need 0 < srq_low_watermark < srq_depth")
        if self.ring_capacity < 2 or self.ring_capacity & (self.ring_capacity - 1):
            raise RaasError(Status.BAD_CONFIG, "ring_capacity must be a power of two >= 2")
        if not 1 <= self.vqpn_bits <= 32:
            raise RaasError(Status.BAD_CONFIG, "vqpn_bits must lie in [1, 32]")
        if not 0 < self.load_alpha <= 1 or self.load_window_ns <= 0:
            raise RaasError(Status.BAD_CONFIG, "bad load tracking parameters")
        for name in ("write_pool_bytes", "pull_pool_bytes", "staging_bytes", "srq_buffer_bytes",
                     "inbox_bytes", "ud_recv_depth"):
            if getattr(self, name) <= 0:
                raise RaasError(Status.BAD_CONFIG, f"{name} must be positive")


@dataclass
class SimConfig:
    nic: NicConfig = field(default_factory=NicConfig)
    fabric: FabricConfig = field(default_factory=FabricConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    daemon: DaemonConfig = field(default_factory=DaemonConfig)

    def validate(self) -> None:
        self.nic.validate()
        self.fabric.validate()
        self.policy.validate()
        self.daemon.validate()


def _coerce(kind: Any, raw: str, key: str) -> Any:
    try:
        if kind in (int, "int"):
            return int(raw, 0)
        if kind in (float, "float"):
            return float(raw)
        if kind in (bool, "bool"):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return raw.strip()
    except ValueError as exc:
        raise RaasError(Status.CONFIG_ERROR, f"{key}: cannot parse {raw!r}") from exc


def apply_section(obj: Any, values: dict[str, str], section: str = "") -> Any:
    """Overwrite dataclass fields of ``obj`` from string ``values``."""
    fields = {f.name: f for f in dataclasses.fields(obj)}
    for key, raw in values.items():
        if key not in fields:
            raise RaasError(Status.CONFIG_ERROR, f"unknown key [{section}] {key}")
        setattr(obj, key, _coerce(fields[key].type, raw, key))
    return obj


def load_config(path: str | Path) -> SimConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    path = Path(path)
    if not parser.read(path):
        raise RaasError(Status.CONFIG_ERROR, f"cannot read {path}")
    cfg = SimConfig()
    for section in parser.sections():
        if not hasattr(cfg, section):
            raise RaasError(Status.CONFIG_ERROR, f"unknown section [{section}]")
        apply_section(getattr(cfg, section), dict(parser[section]), section)
    if cfg.daemon.nic_config:
        nic_path = Path(cfg.daemon.nic_config)
        if not nic_path.is_absolute():
            nic_path = path.parent / nic_path
        nic_parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        if not nic_parser.read(nic_path):
            raise RaasError(Status.CONFIG_ERROR, f"cannot read {nic_path}")
        apply_section(cfg.nic, dict(nic_parser["nic"]), "nic")
    cfg.validate()
    return cfg
