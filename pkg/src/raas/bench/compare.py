"""Trend assertions over benchmark CSVs.

A criteria file is INI text with one section per check.  CSVs are named by
file stem.  Supported ``type`` values::

    [cliff]                      # throughput falls off past a capacity
    type = cliff
    report = naive
    capacity = 400
    max_ratio = 0.7              # tail / peak-at-or-below-capacity
    threshold = 0.9              # first point under threshold*peak ...
    tolerance = 1                # ... within this many sweep steps

    [flat]                       # max/min throughput bounded
    type = flat
    report = raas
    max_ratio = 1.05

    [beats]                      # left throughput above right at one point
    type = greater
    left = raas
    right = naive
    at = 200

    [order]                      # a chain of > and >= at one point
    type = order
    chain = raas > q3 >= q6
    at = 64

    [slope]                      # least-squares slope of a column
    type = slope
    report = naive
    column = mem_units
    expect = 1.0
    tolerance = 0.1
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass
from pathlib import Path

from .report import MetricsReport, read_csv


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'} {self.name}: {self.detail}"


def _report(reports: dict[str, MetricsReport], name: str) -> MetricsReport:
    if name not in reports:
        raise KeyError(f"no CSV named {name!r} (have {sorted(reports)})")
    return reports[name]


def _at(report: MetricsReport, conns: int) -> float:
    table = report.throughput()
    if conns not in table:
        raise KeyError(f"{report.name} has no row at {conns} connections")
    return table[conns]


def check_cliff(rep: MetricsReport, capacity: int, max_ratio: float = 0.7,
                threshold: float = 0.9, tolerance: int = 1) -> tuple[bool, str]:
    conns = [r.connections for r in rep.rows]
    tput = [r.throughput for r in rep.rows]
    below = [t for c, t in zip(conns, tput) if c <= capacity]
    if not below:
        return False, f"no sweep point at or below {capacity}"
    peak = max(below)
    tail = tput[-1] / peak
    first = next((i for i, t in enumerate(tput) if t < threshold * peak), None)
    if first is None:
        return False, f"never drops below {threshold:.0%} of peak"
    # index of the last point at or below capacity, i.e. the expected edge
    edge = max(i for i, c in enumerate(conns) if c <= capacity)
    steps = first - edge
    ok = tail < max_ratio and 0 <= steps <= tolerance
    return ok, (f"tail/peak={tail:.3f} (<{max_ratio}), first drop at {conns[first]} "
                f"({steps} step(s) past {conns[edge]})")


def check_flat(rep: MetricsReport, max_ratio: float = 1.05) -> tuple[bool, str]:
    tput = [r.throughput for r in rep.rows]
    ratio = max(tput) / min(tput) if min(tput) > 0 else float("inf")
    return ratio <= max_ratio, f"max/min={ratio:.4f} (<= {max_ratio})"


def check_order(reports: dict[str, MetricsReport], chain: str, at: int) -> tuple[bool, str]:
    tokens = re.split(r"\s*(>=|>)\s*", chain.strip())
    names, ops = tokens[0::2], tokens[1::2]
    values = [_at(_report(reports, n), at) for n in names]
    ok = True
    for (a, b), op in zip(zip(values, values[1:]), ops):
        ok &= a > b if op == ">" else a >= b
    shown = " ".join(f"{n}={v:.4g} {op}" for n, v, op in zip(names, values, ops + [""]))
    return ok, f"at {at}: {shown.strip()}"


def slope(xs: list[float], ys: list[float]) -> float:
    mx = sum(xs) / len(xs)
    my = sum(ys) / len(ys)
    num = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    den = sum((x - mx) ** 2 for x in xs)
    return num / den


def check_slope(rep: MetricsReport, column: str, expect: float,
                tolerance: float) -> tuple[bool, str]:
    xs = [float(r.connections) for r in rep.rows]
    ys = [float(getattr(r, column)) for r in rep.rows]
    s = slope(xs, ys)
    return abs(s - expect) <= tolerance, f"{column} slope={s:.4f} (expect {expect}±{tolerance})"


def run_checks(reports: dict[str, MetricsReport], criteria: str | Path) -> list[CheckResult]:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if not parser.read(criteria):
        raise FileNotFoundError(criteria)
    results = []
    for name in parser.sections():
        sec = parser[name]
        kind = sec.get("type", "").strip()
        try:
            if kind == "cliff":
                ok, detail = check_cliff(_report(reports, sec["report"]), sec.getint("capacity"),
                                         sec.getfloat("max_ratio", 0.7),
                                         sec.getfloat("threshold", 0.9),
                                         sec.getint("tolerance", 1))
            elif kind == "flat":
                ok, detail = check_flat(_report(reports, sec["report"]),
                                        sec.getfloat("max_ratio", 1.05))
            elif kind == "greater":
                ok, detail = check_order(reports, f"{sec['left']} > {sec['right']}",
                                         sec.getint("at"))
            elif kind == "order":
                ok, detail = check_order(reports, sec["chain"], sec.getint("at"))
            elif kind == "slope":
                ok, detail = check_slope(_report(reports, sec["report"]), sec["column"],
                                         sec.getfloat("expect", 1.0),
                                         sec.getfloat("tolerance", 0.1))
            else:
                ok, detail = False, f"unknown check type {kind!r}"
        except (KeyError, ValueError, TypeError, AttributeError) as exc:
            ok, detail = False, f"cannot evaluate: {exc}"
        results.append(CheckResult(name, ok, detail))
    return results


def load_reports(paths) -> dict[str, MetricsReport]:
    reports = {}
    for path in paths:
        rep = read_csv(path)
        reports[rep.name] = rep
    return reports
