"""Command line front end: ``raas-bench run|sweep|compare``."""

from __future__ import annotations

import argparse
import sys

from ..config import SimConfig, load_config
from ..errors import RaasError
from .compare import load_reports, run_checks
from .runner import run_scenario
from .scenario import BenchScenario, Mode, load_scenario, parse_connections


def _emit(report, out: str | None) -> None:
    if out:
        report.write(out)
    else:
        sys.stdout.write(report.to_csv())


def cmd_run(args) -> int:
    scn = load_scenario(args.scenario)
    if args.seed is not None:
        scn.seed = args.seed
    _emit(run_scenario(scn), args.out)
    return 0


def cmd_sweep(args) -> int:
    mode = Mode.parse(args.mode)
    sim = load_config(args.config) if args.config else SimConfig()
    conns = (parse_connections(args.connections) if args.connections
             else list(range(args.step, args.max_conns + 1, args.step)))
    scn = BenchScenario(name=f"sweep-{mode.value.lower()}", mode=mode, connections=conns,
                        q=args.q if mode is Mode.LOCKED_SHARING else None,
                        seed=args.seed if args.seed is not None else 1,
                        duration=args.duration, sim=sim)
    if args.threads is not None:
        scn.threads = args.threads
    _emit(run_scenario(scn), args.out)
    return 0


def cmd_compare(args) -> int:
    results = run_checks(load_reports(args.csv), args.check)
    for res in results:
        print(res.line())
    return 0 if results and all(r.ok for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="raas-bench",
                                 description="Simulated RDMA sharing benchmarks.")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario file")
    run.add_argument("--scenario", required=True)
    run.add_argument("--out")
    run.add_argument("--seed", type=int)
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="sweep connection counts for one mode")
    sweep.add_argument("--mode", required=True, help="naive, raas or locked")
    sweep.add_argument("--q", type=int, default=1, help="threads per QP (locked only)")
    sweep.add_argument("--max-conns", type=int, default=1000)
    sweep.add_argument("--step", type=int, default=100)
    sweep.add_argument("--connections", help="explicit list, e.g. 8,64 or 100:1000:100")
    sweep.add_argument("--threads", type=int)
    sweep.add_argument("--duration", type=float, default=0.01)
    sweep.add_argument("--seed", type=int)
    sweep.add_argument("--config", help="simulator INI file")
    sweep.add_argument("--out")
    sweep.set_defaults(func=cmd_sweep)

    cmp_ = sub.add_parser("compare", help="check trend assertions over CSVs")
    cmp_.add_argument("csv", nargs="+")
    cmp_.add_argument("--check", required=True)
    cmp_.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RaasError as exc:
        print(f"raas-bench: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, KeyError, ValueError) as exc:
        print(f"raas-bench: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
