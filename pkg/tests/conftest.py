import pytest

from raas.config import FabricConfig, NicConfig
from raas.verbs import Fabric, Sge, TransportMode, Verb, WorkRequest


@pytest.fixture
def fabric():
    f = Fabric(NicConfig(), FabricConfig())
    f.add_node("a")
    f.add_node("b")
    return f


def rc_pair(f, mode=TransportMode.RC, srq_b=None, **kw):
    cqa, cqb = f.create_cq("a"), f.create_cq("b")
    qa = f.create_qp("a", mode, cqa, **kw)
    qb = f.create_qp("b", mode, cqb, srq_b, **kw)
    f.connect_qp(qa, qb)
    return qa, qb, cqa, cqb


def drain(f, cq):
    out = []
    while True:
        got = f.poll_cq(cq, 64)
        if not got:
            return out
        out.extend(got)


def recv_wr(mr, wr_id=0, off=0, length=None):
    return WorkRequest(wr_id, Verb.RECV, Sge(mr.mr_id, off, mr.length if length is None else length))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
