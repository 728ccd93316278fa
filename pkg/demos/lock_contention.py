"""Eight threads: lock-shared QPs (q threads per QP) against the daemon.

Also runs the zero-penalty control, where locked sharing should land on
the lock-free per-thread-QP figure.

    python demos/lock_contention.py
"""

from raas.bench import BenchScenario, Mode, lock_free_point, run_point
from raas.bench.runner import _locked_point

CONNS = 64


def locked(q, penalty=3000.0):
    scn = BenchScenario(mode=Mode.LOCKED_SHARING, q=q, connections=[CONNS], threads=8,
                        lock_penalty_ns=penalty)
    row = run_point(scn, CONNS)
    return row, _locked_point.last_adapter, scn


def main():
    raas = run_point(BenchScenario(mode=Mode.RAAS, connections=[CONNS], threads=8), CONNS)
    print(f"RAAS (lock-free rings)  {raas.throughput / 1e9:6.2f} GB/s")
    for q in (1, 3, 6):
        row, adapter, _ = locked(q)
        print(f"locked q={q} ({adapter.qp_count} QPs)  {row.throughput / 1e9:6.2f} GB/s  "
              f"contended {adapter.contended}/{adapter.acquisitions} acquisitions")
    for q in (3, 6):
        row, _, scn = locked(q, penalty=0.0)
        free = lock_free_point(scn, CONNS)
        print(f"penalty 0, q={q}: locked {row.throughput / 1e9:.3f} vs lock-free "
              f"{free.throughput / 1e9:.3f} GB/s")


if __name__ == "__main__":
    main()
