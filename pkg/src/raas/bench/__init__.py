"""Benchmark scenarios reproducing the sharing comparisons in simulated time."""

from .accounting import Footprint, footprint, resource_accounting
from .compare import CheckResult, load_reports, run_checks
from .locked import LockedQpAdapter, LogicalLock, baseline_locked_qp
from .report import COLUMNS, MetricsReport, Row, read_csv
from .runner import lock_free_point, run_point, run_scenario
from .scenario import BenchScenario, Mode, load_scenario, parse_connections

__all__ = [
    "Footprint", "footprint", "resource_accounting", "CheckResult", "load_reports", "run_checks",
    "LockedQpAdapter", "LogicalLock", "baseline_locked_qp", "COLUMNS", "MetricsReport", "Row",
    "read_csv", "lock_free_point", "run_point", "run_scenario", "BenchScenario", "Mode",
    "load_scenario", "parse_connections",
]
