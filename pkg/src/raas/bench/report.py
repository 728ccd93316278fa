"""Benchmark result rows and their CSV form."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

COLUMNS = ("connections", "throughput_bytes_per_sim_sec", "mean_latency_ns", "mem_units",
           "cpu_units", "cache_hit_rate")


@dataclass(frozen=True)
class Row:
    connections: int
    throughput_bytes_per_sim_sec: float
    mean_latency_ns: float
    mem_units: float
    cpu_units: float
    cache_hit_rate: float

    @property
    def throughput(self) -> float:
        return self.throughput_bytes_per_sim_sec

    def cells(self) -> list[str]:
        return [str(self.connections), f"{self.throughput_bytes_per_sim_sec:.1f}",
                f"{self.mean_latency_ns:.1f}", f"{self.mem_units:.4f}",
                f"{self.cpu_units:.4f}", f"{self.cache_hit_rate:.4f}"]


@dataclass
class MetricsReport:
    name: str = ""
    mode: str = ""
    rows: list[Row] = field(default_factory=list)

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(COLUMNS)
        for row in self.rows:
            writer.writerow(row.cells())
        return out.getvalue()

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    def throughput(self) -> dict[int, float]:
        return {r.connections: r.throughput_bytes_per_sim_sec for r in self.rows}


def read_csv(path: str | Path) -> MetricsReport:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        rows = [Row(int(r["connections"]), float(r["throughput_bytes_per_sim_sec"]),
                    float(r["mean_latency_ns"]), float(r["mem_units"]), float(r["cpu_units"]),
                    float(r["cache_hit_rate"])) for r in reader]
    return MetricsReport(Path(path).stem, "", rows)
