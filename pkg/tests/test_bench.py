"""Bench runner, lock baseline, resource accounting and the CLI."""

import threading

import pytest
from hypothesis import given, strategies as st

from raas.bench import (BenchScenario, LockedQpAdapter, LogicalLock, Mode, baseline_locked_qp,
                        load_scenario, lock_free_point, resource_accounting, run_point,
                        run_scenario)
from raas.bench.cli import main
from raas.bench.compare import slope
from raas.config import SimConfig
from raas.errors import RaasError, Status

SHORT = dict(duration=0.002, warmup=0.001)


def scenario(mode=Mode.NAIVE, conns=(50, 100), **kw):
    return BenchScenario(mode=mode, connections=list(conns), **{**SHORT, **kw})


# -- determinism -------------------------------------------------------------------

@pytest.mark.parametrize("mode,q", [(Mode.NAIVE, None), (Mode.RAAS, None),
                                    (Mode.LOCKED_SHARING, 3)])
def test_same_seed_same_csv(mode, q):
    a = run_scenario(scenario(mode, (16, 64), q=q, seed=7)).to_csv()
    b = run_scenario(scenario(mode, (16, 64), q=q, seed=7)).to_csv()
    assert a == b
    assert a.splitlines()[0].startswith("connections,throughput_bytes_per_sim_sec")


# -- cliff -----------------------------------------------------------------------------

def _first_drop(capacity):
    sim = SimConfig()
    sim.nic.cache_capacity = capacity
    rep = run_scenario(scenario(conns=range(50, 601, 50), sim=sim))
    peak = max(r.throughput for r in rep.rows if r.connections <= capacity)
    return next(r.connections for r in rep.rows if r.throughput < 0.9 * peak)


def test_cliff_tracks_capacity():
    full, half = _first_drop(400), _first_drop(200)
    assert full in (400, 450)
    # halving the cache halves the drop point, within one 50-connection step
    assert abs(half - full / 2) <= 50


def test_naive_hit_rate_falls_past_capacity():
    sim = SimConfig()
    sim.nic.cache_capacity = 100
    rows = run_scenario(scenario(conns=(50, 300), sim=sim)).rows
    assert rows[0].cache_hit_rate > 0.99 and rows[1].cache_hit_rate < 0.6


# -- lock baseline ---------------------------------------------------------------------

def test_logical_lock_timeline():
    lock = LogicalLock(penalty_ns=100)
    assert lock.acquire(0, 10) == 10
    assert lock.contended == 0
    # busy until 10: wait, then pay the hand-off
    assert lock.acquire(5, 10) == 120
    assert lock.acquire(500, 10, spinners=1) == 610
    assert (lock.acquisitions, lock.contended) == (3, 2)


@given(st.lists(st.tuples(st.floats(0, 1e6), st.floats(0, 1e3)), min_size=1, max_size=50))
def test_logical_lock_never_overlaps(reqs):
    lock = LogicalLock(penalty_ns=50)
    last = 0.0
    for ready, hold in sorted(reqs):
        end = lock.acquire(ready, hold)
        assert end - hold >= max(ready, last) - 1e-9
        last = end


def test_q1_matches_per_thread_qps():
    scn = scenario(Mode.LOCKED_SHARING, (64,), q=1)
    locked, free = run_point(scn, 64).throughput, lock_free_point(scn, 64).throughput
    assert abs(locked - free) / free < 0.01


def test_q6_contends():
    adapter = baseline_locked_qp(6)
    t = [0.0] * 6
    for _ in range(20):
        for th in range(6):
            adapter.began(th)
        for th in range(6):
            t[th] = adapter.acquire_at(th, t[th])
        for th in range(6):
            adapter.finished(th)
    assert adapter.contended > 0
    assert adapter.qp_count == 1


def test_q6_contends_in_a_run():
    scn = scenario(Mode.LOCKED_SHARING, (64,), q=6)
    run_point(scn, 64)
    from raas.bench.runner import _locked_point
    assert _locked_point.last_adapter.contended > 0


def test_real_mutex_counts_contention():
    adapter = LockedQpAdapter(q=6, threads=6)
    entered = threading.Event()

    def other():
        with adapter.locked(1):
            entered.set()

    with adapter.locked(0):
        t = threading.Thread(target=other)
        t.start()
        # thread 1 shares QP 0 and must find the mutex taken
        assert not entered.wait(0.1)
    t.join()
    assert entered.is_set() and adapter.contended == 1
    solo = LockedQpAdapter(q=1, threads=2)
    with solo.locked(0):
        with solo.locked(1):  # different QP, no contention
            pass
    assert solo.contended == 0


def test_zero_penalty_control():
    scn = scenario(Mode.LOCKED_SHARING, (64,), q=6, lock_penalty_ns=0.0)
    locked, free = run_point(scn, 64).throughput, lock_free_point(scn, 64).throughput
    assert abs(locked - free) / free <= 0.02


def test_adapter_rejects_bad_q():
    with pytest.raises(ValueError):
        LockedQpAdapter(0, 4)


# -- resource accounting ---------------------------------------------------------------

def test_one_app_is_one_unit():
    assert resource_accounting(Mode.NAIVE, 1) == pytest.approx((1.0, 1.0))
    assert resource_accounting(Mode.RAAS, 1) == pytest.approx((1.0, 1.0))


def test_naive_linear_raas_sublinear():
    mem, cpu = resource_accounting(Mode.NAIVE, 10)
    assert mem == pytest.approx(10, abs=0.1) and cpu == pytest.approx(10, abs=0.1)
    rmem, rcpu = resource_accounting(Mode.RAAS, 10)
    assert rmem < 5 and rmem <= 0.5 * mem and rcpu < cpu


def test_raas_concave_and_below_naive():
    ns = [1, 2, 5, 10, 20, 50]
    raas = [resource_accounting(Mode.RAAS, n)[0] for n in ns]
    naive = [resource_accounting(Mode.NAIVE, n)[0] for n in ns]
    assert all(r <= v + 1e-9 for r, v in zip(raas, naive))
    incs = [(b - a) / (y - x) for (x, a), (y, b) in zip(zip(ns, raas), zip(ns[1:], raas[1:]))]
    assert all(b <= a + 1e-9 for a, b in zip(incs, incs[1:]))
    assert slope([float(n) for n in ns], naive) == pytest.approx(1.0, abs=0.1)


# -- scenarios ------------------------------------------------------------------------

def test_scenario_file(tmp_path):
    p = tmp_path / "s.ini"
    p.write_text("[scenario]\nname = x\nmode = locked\nq = 3\nconnections = 8, 16:32:8\n"
                 "duration = 0.001\n\n[nic]\ncache_capacity = 50\n")
    scn = load_scenario(p)
    assert scn.mode is Mode.LOCKED_SHARING and scn.q == 3
    assert scn.connections == [8, 16, 24, 32] and scn.sim.nic.cache_capacity == 50


@pytest.mark.parametrize("body", [
    "[scenario]\nconnections = 10, 5\n",
    "[scenario]\nmode = NAIVE\nq = 2\n",
    "[scenario]\nmode = LOCKED_SHARING\n",
    "[scenario]\nbogus = 1\n",
    "[scenario]\nop = WRITE\n",
    "[scenario]\nmode = SOMETHING\n",
    "[scenario]\n\n[nic]\ncache_capacity = 0\n",
    "[scenario]\n\n[disk]\nx = 1\n",
    "[nothing]\n",
])
def test_bad_scenarios(tmp_path, body):
    p = tmp_path / "bad.ini"
    p.write_text(body)
    with pytest.raises(RaasError) as e:
        load_scenario(p)
    assert e.value.status is Status.CONFIG_ERROR


# -- CLI -------------------------------------------------------------------------------

def test_cli_run_sweep_compare(tmp_path, capsys):
    scn = tmp_path / "s.ini"
    scn.write_text("[scenario]\nmode = NAIVE\nconnections = 10, 20\nduration = 0.001\n"
                   "warmup = 0.0005\n")
    out = tmp_path / "naive.csv"
    assert main(["run", "--scenario", str(scn), "--out", str(out)]) == 0
    assert out.read_text().count("\n") == 3
    raas = tmp_path / "raas.csv"
    assert main(["sweep", "--mode", "raas", "--connections", "10,20", "--duration", "0.001",
                 "--out", str(raas)]) == 0
    good = tmp_path / "good.ini"
    good.write_text("[linear]\ntype = slope\nreport = naive\ncolumn = mem_units\nexpect = 1.0\n")
    assert main(["compare", str(out), str(raas), "--check", str(good)]) == 0
    assert "PASS linear" in capsys.readouterr().out
    bad = tmp_path / "bad.ini"
    bad.write_text("[flatmem]\ntype = slope\nreport = naive\ncolumn = mem_units\nexpect = 0\n"
                   "[missing]\ntype = flat\nreport = nope\n")
    assert main(["compare", str(out), str(raas), "--check", str(bad)]) == 1
    assert "FAIL flatmem" in (txt := capsys.readouterr().out) and "FAIL missing" in txt


def test_cli_errors(tmp_path, capsys):
    assert main(["run", "--scenario", str(tmp_path / "missing.ini")]) == 2
    assert main(["sweep", "--mode", "fast"]) == 2
    with pytest.raises(SystemExit):
        main(["sweep"])
    assert "raas-bench" in capsys.readouterr().err
