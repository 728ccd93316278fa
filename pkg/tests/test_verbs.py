"""Verbs queuing model: legality, posting contracts, integrity and costs."""

import random

import pytest
from hypothesis import given, settings, strategies as st

from raas.errors import BatchError, RaasError, Status
from raas.verbs import (
    LEGAL_VERBS, MAX_CONNECTED_MESSAGE, Dest, Fabric, NicModel, QpState, RemoteRef, Side, Sge,
    TransportMode, Verb, WorkRequest, is_legal, max_message,
)

from conftest import drain, rc_pair, recv_wr

RC, UC, UD = TransportMode.RC, TransportMode.UC, TransportMode.UD

# Table 1, written out independently of the implementation's table
TABLE1 = {
    (RC, Verb.SEND): True, (RC, Verb.RECV): True, (RC, Verb.WRITE): True, (RC, Verb.READ): True,
    (UC, Verb.SEND): True, (UC, Verb.RECV): True, (UC, Verb.WRITE): True, (UC, Verb.READ): False,
    (UD, Verb.SEND): True, (UD, Verb.RECV): True, (UD, Verb.WRITE): False, (UD, Verb.READ): False,
}


def brute_lru(capacity, trace):
    """Plain list LRU: most recent at the end."""
    cache, out = [], []
    for q in trace:
        if q in cache:
            cache.remove(q)
            cache.append(q)
            out.append(True)
        else:
            out.append(False)
            cache.append(q)
            if len(cache) > capacity:
                cache.pop(0)
    return out


# -- create / connect ----------------------------------------------------------

def test_create_qp_reset_and_ids(fabric):
    cq = fabric.create_cq("a")
    srq = fabric.create_srq("a")
    qp = fabric.create_qp("a", RC, cq, srq)
    assert qp == 1
    assert fabric.qp(qp).state is QpState.RESET
    assert fabric.node("a").nic.registered == 1
    assert not fabric.node("a").nic.cached(qp)


def test_uc_srq_unsupported(fabric):
    cq, srq = fabric.create_cq("a"), fabric.create_srq("a")
    with pytest.raises(RaasError) as e:
        fabric.create_qp("a", UC, cq, srq)
    assert e.value.status is Status.SRQ_UNSUPPORTED


def test_ud_needs_no_peer(fabric):
    cq = fabric.create_cq("a")
    qp = fabric.create_qp("a", UD, cq)
    assert fabric.qp(qp).peer is None


def test_unknown_node(fabric):
    with pytest.raises(RaasError) as e:
        fabric.create_cq("zz")
    assert e.value.status is Status.NODE_UNKNOWN


def test_connect_rules(fabric):
    cqa, cqb = fabric.create_cq("a"), fabric.create_cq("b")
    a, b = fabric.create_qp("a", RC, cqa), fabric.create_qp("b", RC, cqb)
    assert fabric.connect_qp(a, b) is QpState.READY
    assert fabric.qp(a).peer == b and fabric.qp(b).peer == a
    with pytest.raises(RaasError) as e:
        fabric.connect_qp(a, b)
    assert e.value.status is Status.ALREADY_CONNECTED
    ud = fabric.create_qp("b", UD, cqb)
    c = fabric.create_qp("a", RC, cqa)
    with pytest.raises(RaasError) as e:
        fabric.connect_qp(c, ud)
    assert e.value.status is Status.UD_NOT_CONNECTABLE
    uc = fabric.create_qp("b", UC, cqb)
    with pytest.raises(RaasError) as e:
        fabric.connect_qp(c, uc)
    assert e.value.status is Status.MODE_MISMATCH
    with pytest.raises(RaasError) as e:
        fabric.connect_qp(c, c)
    assert e.value.status is Status.SELF_CONNECT


# -- memory --------------------------------------------------------------------

def test_register_mr(fabric):
    mr = fabric.register_mr("a", 65536)
    assert mr.length == 65536 and mr.lkey != mr.rkey
    with pytest.raises(RaasError):
        fabric.register_mr("a", 0)
    small = fabric.registration_cost(4096)
    big = fabric.registration_cost(1 << 20)
    assert big > small
    # the formula, evaluated by hand from the documented defaults
    assert small == pytest.approx(800 + 0.1 * 4096)


def test_register_charges_clock(fabric):
    t0 = fabric.now
    fabric.register_mr("a", 1 << 20)
    assert fabric.now - t0 == pytest.approx(800 + 0.1 * (1 << 20))


def test_arena_full():
    f = Fabric()
    f.add_node("a", arena_bytes=4096)
    f.register_mr("a", 4096)
    with pytest.raises(RaasError) as e:
        f.register_mr("a", 64)
    assert e.value.status is Status.ARENA_FULL


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 5000), min_size=1, max_size=30))
def test_regions_never_overlap(sizes):
    f = Fabric()
    f.add_node("a", arena_bytes=1 << 20)
    regions = [f.register_mr("a", s, owner=f"app{i % 3}") for i, s in enumerate(sizes)]
    spans = sorted((r.base, r.base + r.length) for r in regions)
    assert all(b0 >= a1 for (_, a1), (b0, _) in zip(spans, spans[1:]))
    assert all(0 <= lo and hi <= 1 << 20 for lo, hi in spans)


# -- legality matrix ----------------------------------------------------------------

def _try_post(mode, verb):
    f = Fabric()
    f.add_node("a")
    f.add_node("b")
    cqa, cqb = f.create_cq("a"), f.create_cq("b")
    a, b = f.create_qp("a", mode, cqa), f.create_qp("b", mode, cqb)
    if mode is not UD:
        f.connect_qp(a, b)
    mr = f.register_mr("a", 64)
    rmr = f.register_mr("b", 64)
    if verb is Verb.RECV:
        try:
            return f.post_recv(b, recv_wr(rmr))
        except RaasError:
            return False
    remote = RemoteRef(rmr.rkey, 0) if verb.one_sided else None
    dest = Dest("b", b) if mode is UD else None
    try:
        return f.post_send(a, WorkRequest(1, verb, Sge(mr.mr_id, 0, 64), remote=remote,
                                          dest=dest))
    except RaasError as exc:
        assert exc.status is Status.ILLEGAL_VERB
        return False


@pytest.mark.parametrize("mode,verb", sorted(TABLE1, key=str))
def test_legality_matrix(mode, verb):
    assert _try_post(mode, verb) is TABLE1[(mode, verb)]
    assert is_legal(mode, verb) is TABLE1[(mode, verb)]


def test_legal_table_exact():
    assert {(m, v) for m, vs in LEGAL_VERBS.items() for v in vs} == \
        {k for k, ok in TABLE1.items() if ok}


def test_message_caps(fabric):
    mtu = fabric.nic_config.mtu
    assert max_message(UD, mtu) == mtu
    assert max_message(RC, mtu) == max_message(UC, mtu) == 1 << 30 == MAX_CONNECTED_MESSAGE
    cq = fabric.create_cq("a")
    ud = fabric.create_qp("a", UD, cq)
    peer = fabric.create_qp("b", UD, fabric.create_cq("b"))
    mr = fabric.register_mr("a", mtu + 1)
    ok = WorkRequest(1, Verb.SEND, Sge(mr.mr_id, 0, mtu), dest=Dest("b", peer))
    assert fabric.post_send(ud, ok)
    big = WorkRequest(2, Verb.SEND, Sge(mr.mr_id, 0, mtu + 1), dest=Dest("b", peer))
    with pytest.raises(RaasError) as e:
        fabric.post_send(ud, big)
    assert e.value.status is Status.MSG_TOO_LARGE


# -- work request shape ------------------------------------------------------------

def test_wr_invariants():
    s = Sge(1, 0, 8)
    with pytest.raises(RaasError):
        WorkRequest(1, Verb.WRITE, s)
    with pytest.raises(RaasError):
        WorkRequest(1, Verb.SEND, s, remote=RemoteRef(1, 0))
    with pytest.raises(RaasError):
        WorkRequest(1, Verb.WRITE, s, remote=RemoteRef(1, 0), imm_data=3)
    with pytest.raises(RaasError):
        WorkRequest(1 << 64, Verb.SEND, s)
    with pytest.raises(RaasError):
        WorkRequest(1, Verb.SEND, s, imm_data=1 << 32)


# -- data movement -------------------------------------------------------------------

def test_write_copies_bytes(fabric):
    qa, qb, cqa, _ = rc_pair(fabric)
    src = fabric.register_mr("a", 65536)
    dst = fabric.register_mr("b", 65536)
    payload = random.Random(1).randbytes(65536)
    src.write(payload)
    fabric.post_send(qa, WorkRequest(9, Verb.WRITE, Sge(src.mr_id, 0, 65536),
                                     remote=RemoteRef(dst.rkey, 0)))
    (cqe,) = drain(fabric, cqa)
    assert cqe.wr_id == 9 and cqe.status is Status.OK and cqe.byte_count == 65536
    assert dst.read() == payload


def test_read_fetches_bytes(fabric):
    qa, qb, cqa, _ = rc_pair(fabric)
    dst = fabric.register_mr("a", 1000)
    src = fabric.register_mr("b", 4000)
    src.write(b"x" * 1000 + b"y" * 1000)
    fabric.post_send(qa, WorkRequest(1, Verb.READ, Sge(dst.mr_id, 0, 1000),
                                     remote=RemoteRef(src.rkey, 1000)))
    (cqe,) = drain(fabric, cqa)
    assert cqe.status is Status.OK and dst.read() == b"y" * 1000


def test_bad_rkey(fabric):
    qa, *_ = rc_pair(fabric)
    mr = fabric.register_mr("a", 64)
    rmr = fabric.register_mr("b", 64)
    with pytest.raises(RaasError) as e:
        fabric.post_send(qa, WorkRequest(1, Verb.WRITE, Sge(mr.mr_id, 0, 64),
                                         remote=RemoteRef(rmr.rkey ^ 1, 0)))
    assert e.value.status is Status.BAD_RKEY
    with pytest.raises(RaasError) as e:
        fabric.post_send(qa, WorkRequest(1, Verb.WRITE, Sge(mr.mr_id, 0, 64),
                                         remote=RemoteRef(rmr.rkey, 1)))
    assert e.value.status is Status.BAD_RKEY


def test_queue_full(fabric):
    qa, *_ = rc_pair(fabric, sq_depth=2)
    mr = fabric.register_mr("a", 64)
    rmr = fabric.register_mr("b", 64)
    wr = WorkRequest(1, Verb.WRITE, Sge(mr.mr_id, 0, 64), remote=RemoteRef(rmr.rkey, 0))
    fabric.post_send(qa, wr)
    fabric.post_send(qa, wr)
    with pytest.raises(RaasError) as e:
        fabric.post_send(qa, wr)
    assert e.value.status is Status.QUEUE_FULL


def test_send_recv_fifo_and_imm(fabric):
    qa, qb, cqa, cqb = rc_pair(fabric)
    src = fabric.register_mr("a", 8)
    dst = fabric.register_mr("b", 16)
    fabric.post_recv(qb, recv_wr(dst, 100, 0, 8))
    fabric.post_recv(qb, recv_wr(dst, 101, 8, 8))
    src.write(b"first...")
    fabric.post_send(qa, WorkRequest(1, Verb.SEND, Sge(src.mr_id, 0, 8), imm_data=11))
    fabric.run()
    src.write(b"second..")
    fabric.post_send(qa, WorkRequest(2, Verb.SEND, Sge(src.mr_id, 0, 8), imm_data=22))
    got = drain(fabric, cqb)
    assert [(c.wr_id, c.imm_data, c.side) for c in got] == \
        [(100, 11, Side.RECV_COMPLETION), (101, 22, Side.RECV_COMPLETION)]
    assert got[0].src_qp == qa
    assert dst.read() == b"first...second.."


def test_rnr_error_after_bounded_retry(fabric):
    qa, qb, cqa, cqb = rc_pair(fabric)
    src = fabric.register_mr("a", 8)
    fabric.post_send(qa, WorkRequest(5, Verb.SEND, Sge(src.mr_id, 0, 8)))
    (cqe,) = drain(fabric, cqa)
    assert cqe.status is Status.RNR_ERROR
    cfg = fabric.config
    # the failure comes after exactly rnr_retry timer periods of retrying
    assert fabric.now >= cfg.rnr_retry * cfg.rnr_timer_ns
    assert fabric.qp(qa).state is QpState.ERROR


def test_srq_consumed_once(fabric):
    srq = fabric.create_srq("b", 8)
    cqb = fabric.create_cq("b")
    senders = []
    for _ in range(3):
        cqa = fabric.create_cq("a")
        a = fabric.create_qp("a", RC, cqa)
        b = fabric.create_qp("b", RC, cqb, srq)
        fabric.connect_qp(a, b)
        senders.append((a, cqa))
    buf = fabric.register_mr("b", 64)
    fabric.post_recv(srq, recv_wr(buf, 1, 0, 32))
    fabric.post_recv(srq, recv_wr(buf, 2, 32, 32))
    src = fabric.register_mr("a", 8)
    fabric.post_send(senders[1][0], WorkRequest(7, Verb.SEND, Sge(src.mr_id, 0, 8)))
    got = drain(fabric, cqb)
    assert len(got) == 1 and got[0].wr_id == 1
    assert len(srq.recv_queue) == 1


def test_post_batch_prefix(fabric):
    qa, *_ = rc_pair(fabric)
    mr = fabric.register_mr("a", 64)
    rmr = fabric.register_mr("b", 64)
    good = WorkRequest(1, Verb.WRITE, Sge(mr.mr_id, 0, 64), remote=RemoteRef(rmr.rkey, 0))
    bad = WorkRequest(2, Verb.RECV, Sge(mr.mr_id, 0, 64))
    with pytest.raises(BatchError) as e:
        fabric.post_batch(qa, [good, bad, good])
    assert e.value.index == 1 and e.value.accepted == 1
    assert e.value.status is Status.ILLEGAL_VERB
    assert fabric.post_batch(qa, []) == 0
    assert len(drain(fabric, fabric.qp(qa).cq)) == 1


def _elapsed_writes(batched):
    f = Fabric()
    f.add_node("a")
    f.add_node("b")
    qa, *_ = rc_pair(f)
    mr = f.register_mr("a", 4096)
    rmr = f.register_mr("b", 4096)
    wrs = [WorkRequest(i, Verb.WRITE, Sge(mr.mr_id, 0, 4096), remote=RemoteRef(rmr.rkey, 0))
           for i in range(8)]
    start = f.now
    if batched:
        assert f.post_batch(qa, wrs) == 8
    else:
        for wr in wrs:
            f.post_send(qa, wr)
    drain(f, f.qp(qa).cq)
    return f.node("a").nic_busy_ns, f.now - start


def test_batch_cheaper_than_singles():
    busy_b, t_b = _elapsed_writes(True)
    busy_s, t_s = _elapsed_writes(False)
    assert busy_b < busy_s and t_b < t_s


def test_poll_cq_contract(fabric):
    qa, _, cqa, _ = rc_pair(fabric)
    assert fabric.poll_cq(cqa) == []
    with pytest.raises(RaasError):
        fabric.poll_cq(cqa, 0)
    mr = fabric.register_mr("a", 64)
    rmr = fabric.register_mr("b", 64)
    for i in range(100):
        fabric.post_send(qa, WorkRequest(i, Verb.WRITE, Sge(mr.mr_id, 0, 64),
                                         remote=RemoteRef(rmr.rkey, 0)))
    seen = []
    while True:
        got = fabric.poll_cq(cqa, 7)
        if not got:
            break
        assert len(got) <= 7
        seen.extend(c.wr_id for c in got)
    # exactly once each, in posting order on one RC QP
    assert seen == list(range(100))


def test_unsignaled_no_completion(fabric):
    qa, _, cqa, _ = rc_pair(fabric)
    mr = fabric.register_mr("a", 64)
    rmr = fabric.register_mr("b", 64)
    fabric.post_send(qa, WorkRequest(1, Verb.WRITE, Sge(mr.mr_id, 0, 64),
                                     remote=RemoteRef(rmr.rkey, 0), signaled=False))
    fabric.post_send(qa, WorkRequest(2, Verb.WRITE, Sge(mr.mr_id, 0, 64),
                                     remote=RemoteRef(rmr.rkey, 0)))
    assert [c.wr_id for c in drain(fabric, cqa)] == [2]


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([Verb.WRITE, Verb.READ, Verb.SEND]),
                          st.integers(1, 3000)), min_size=1, max_size=40),
       st.integers(0, 2**31))
def test_integrity_and_order(ops, seed):
    """Every completed WR moved exactly the sender's bytes, in posting order."""
    f = Fabric()
    f.add_node("a")
    f.add_node("b")
    qa, qb, cqa, cqb = rc_pair(f)
    rng = random.Random(seed)
    n = len(ops)
    src = f.register_mr("a", 3000 * n)
    dst = f.register_mr("b", 3000 * n)
    rx = f.register_mr("b", 3000 * n)
    expect = []
    for i, (verb, ln) in enumerate(ops):
        data = rng.randbytes(ln)
        off = 3000 * i
        if verb is Verb.READ:
            dst.write(data, off)
            wr = WorkRequest(i, verb, Sge(src.mr_id, off, ln), remote=RemoteRef(dst.rkey, off))
        elif verb is Verb.WRITE:
            src.write(data, off)
            wr = WorkRequest(i, verb, Sge(src.mr_id, off, ln), remote=RemoteRef(dst.rkey, off))
        else:
            src.write(data, off)
            f.post_recv(qb, recv_wr(rx, i, off, ln))
            wr = WorkRequest(i, verb, Sge(src.mr_id, off, ln), imm_data=i)
        f.post_send(qa, wr)
        expect.append((verb, off, data))
    done = drain(f, cqa)
    assert [c.wr_id for c in done] == list(range(n))
    assert all(c.status is Status.OK for c in done)
    recvs = drain(f, cqb)
    assert len(recvs) == sum(1 for v, *_ in expect if v is Verb.SEND)  # conservation
    for verb, off, data in expect:
        if verb is Verb.READ:
            assert src.read(off, len(data)) == data
        elif verb is Verb.WRITE:
            assert dst.read(off, len(data)) == data
        else:
            assert rx.read(off, len(data)) == data


def test_ud_datagram_delivery(fabric):
    cqa, cqb = fabric.create_cq("a"), fabric.create_cq("b")
    a, b = fabric.create_qp("a", UD, cqa), fabric.create_qp("b", UD, cqb)
    mr = fabric.register_mr("a", 32)
    rx = fabric.register_mr("b", 32)
    mr.write(b"d" * 32)
    fabric.post_send(a, WorkRequest(1, Verb.SEND, Sge(mr.mr_id, 0, 32), dest=Dest("b", b)))
    assert drain(fabric, cqb) == []     # no receive: dropped silently
    assert [c.status for c in drain(fabric, cqa)] == [Status.OK]
    fabric.post_recv(b, recv_wr(rx, 3))
    fabric.post_send(a, WorkRequest(2, Verb.SEND, Sge(mr.mr_id, 0, 32), dest=Dest("b", b)))
    (cqe,) = drain(fabric, cqb)
    assert cqe.wr_id == 3 and rx.read() == b"d" * 32


# -- NIC cache -------------------------------------------------------------------------

def test_nic_examples():
    nic = NicModel(cache_capacity=2)
    assert [nic.service(q) for q in [1, 2, 3, 1]] == [nic.miss_cost] * 4
    nic = NicModel(cache_capacity=2)
    assert [nic.service(q) for q in [1, 2, 1]] == [nic.miss_cost, nic.miss_cost, nic.hit_cost]
    nic = NicModel(cache_capacity=400)
    for q in range(400):
        nic.access(q)
    nic.reset_stats()
    for _ in range(3):
        for q in range(400):
            nic.access(q)
    assert nic.hit_rate() == 1.0 and nic.occupancy == 400


def test_nic_config_validation():
    with pytest.raises(RaasError):
        NicModel(hit_cost_ns=1200, miss_cost_ns=1200)
    with pytest.raises(RaasError):
        NicModel(batch_discount=0)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 20), st.lists(st.integers(0, 30), max_size=300))
def test_lru_matches_brute_force(cap, trace):
    nic = NicModel(cache_capacity=cap)
    got = [nic.access(q) for q in trace]
    assert got == brute_lru(cap, trace)
    assert nic.occupancy <= cap


def test_monotone_degradation():
    """Mean fixed cost per WR never falls as more QPs share the NIC."""
    def mean_cost(nqps):
        nic = NicModel(cache_capacity=16)
        trace = [i % nqps for i in range(64 * 40)]
        return sum(nic.service(q) for q in trace) / len(trace)
    costs = [mean_cost(n) for n in range(1, 40)]
    assert all(b >= a for a, b in zip(costs, costs[1:]))
    assert costs[16] > costs[15]


def test_trace_export():
    import io
    buf = io.StringIO()
    f = Fabric(trace=buf)
    f.add_node("a")
    f.add_node("b")
    qa, *_ = rc_pair(f)
    mr = f.register_mr("a", 64)
    rmr = f.register_mr("b", 64)
    f.post_send(qa, WorkRequest(1, Verb.WRITE, Sge(mr.mr_id, 0, 64),
                                remote=RemoteRef(rmr.rkey, 0)))
    f.run()
    lines = buf.getvalue().splitlines()
    assert lines[0] == "ts,node,qp,verb,bytes,cache_hit"
    assert lines[1].split(",")[1:] == ["a", str(qa), "WRITE", "64", "0"]
