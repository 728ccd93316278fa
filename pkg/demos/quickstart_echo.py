"""Two hosts, one daemon each, a socket-style echo over the shared QP.

    python demos/quickstart_echo.py
"""

from raas.config import DaemonConfig, SimConfig
from raas.daemon import Cluster, Flags


def main():
    sim = SimConfig()
    sim.daemon = DaemonConfig(worker_count=1)
    cluster = Cluster(sim)
    cluster.add_node("client", "ipv4:10.0.0.1")
    cluster.add_node("server", "ipv4:10.0.0.2")
    cluster.start_daemon("client")
    server_daemon = cluster.start_daemon("server")

    srv = cluster.client("server", "echo-server")
    cli = cluster.client("client", "echo-client")
    lfd = srv.listen("ipv4:10.0.0.2@7000")

    # three apps' worth of connections, all riding one RC QP
    fds = [cli.connect("ipv4:10.0.0.2@7000") for _ in range(3)]
    sfds = [srv.accept(lfd) for _ in fds]
    buf = bytearray(1 << 17)
    for fd, sfd in zip(fds, sfds):
        for size in (5, 64 * 1024):
            cli.send(fd, b"x" * size)
            n = srv.recv(sfd, buf)
            srv.send(sfd, buf[:n])
            assert cli.recv(fd, buf) == size
        vc = cli._handles[fd].vc
        print(f"fd {fd}: vQPN {vc.vqpn:#x} on shared QP {vc.shared_qp}, echoed 5 B and 64 KiB")

    # explicit flags pick the verb; here the server pulls the payload with READ
    cli.send(fds[0], b"pull me", flags=Flags.RC | Flags.READ)
    print("READ-flagged send arrived as", bytes(buf[:srv.recv(sfds[0], buf)]))
    print("server worker verbs:", dict((v.name, k) for v, k in
                                         server_daemon.workers[0].verbs.items()))

    cli.close(fds[0])
    print("recv after peer close returns", srv.recv(sfds[0], buf))
    print("simulated time:", f"{cluster.fabric.now / 1000:.1f} us")


if __name__ == "__main__":
    main()
