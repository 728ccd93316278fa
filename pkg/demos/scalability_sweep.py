"""NAIVE one-QP-per-connection versus RAAS across 100..1000 connections.

The NIC caches 400 QP contexts.  Past that point NAIVE pays a context miss
on nearly every work request; RAAS keeps a handful of QPs and stays flat.

    python demos/scalability_sweep.py [--capacity 400]
"""

import argparse

from raas.bench import BenchScenario, Mode, run_scenario


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--capacity", type=int, default=400)
    ap.add_argument("--duration", type=float, default=0.005)
    args = ap.parse_args()

    grid = list(range(100, 1001, 100))
    rows = {}
    for mode in (Mode.NAIVE, Mode.RAAS):
        scn = BenchScenario(mode=mode, connections=grid, duration=args.duration)
        scn.sim.nic.cache_capacity = args.capacity
        rows[mode] = run_scenario(scn).rows

    print(f"cache_capacity={args.capacity}")
    print(f"{'conns':>6} {'NAIVE GB/s':>11} {'hit':>6} {'RAAS GB/s':>10} {'hit':>6}")
    for n, r in zip(rows[Mode.NAIVE], rows[Mode.RAAS]):
        print(f"{n.connections:>6} {n.throughput / 1e9:>11.2f} {n.cache_hit_rate:>6.2f} "
              f"{r.throughput / 1e9:>10.2f} {r.cache_hit_rate:>6.2f}")


if __name__ == "__main__":
    main()
