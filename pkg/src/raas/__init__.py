"""Desk-scale RDMA-as-a-service: a connection-multiplexing daemon over simulated verbs."""

from .config import DaemonConfig, FabricConfig, NicConfig, PolicyConfig, SimConfig, load_config
from .errors import BatchError, RaasError, Status, WouldBlock

__version__ = "0.1.0"

__all__ = [
    "DaemonConfig", "FabricConfig", "NicConfig", "PolicyConfig", "SimConfig", "load_config",
    "BatchError", "RaasError", "Status", "WouldBlock",
]
