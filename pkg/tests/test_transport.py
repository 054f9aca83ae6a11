import socket
import threading
import time

import numpy as np
import pytest

from offloadrt import Runtime
from offloadrt.bench import kernel_source
from offloadrt.errors import (
    CompileError,
    OobAccessError,
    TransportLostError,
    UnknownGidError,
)
from offloadrt.registry import GlobalId, ObjectKind
from offloadrt.transport import wire
from offloadrt.transport.client import connect, read_frame
from offloadrt.transport.daemon import serve
from offloadrt.transport.wire import Opcode, Parcel

BUSY_SRC = """
kernel busy(out : buffer_f64, iters : scalar_u32) {
    if (gtid == 0) {
        let acc = 0.0;
        for i in 0 .. iters {
            acc = acc + 1.0;
        }
        out[0] = acc;
    }
}
"""


def remote_device(client):
    return [d for d in client.get_all_devices().get() if d.gid.locality_id != 0][0]


def test_discover_lists_devices_with_gids(loopback):
    client, _ = loopback
    devices = client.get_all_devices().get()
    remote = [d for d in devices if d.gid.locality_id == 9]
    assert [d.info.name for d in remote] == ["sim0", "sim1"]
    assert all(d.gid.kind == ObjectKind.DEVICE for d in remote)


def test_local_and_remote_devices_merge_local_first(loopback):
    client, _ = loopback
    devices = client.get_all_devices().get()
    assert devices[0].gid.locality_id == 0
    assert [d.gid.locality_id for d in devices[1:]] == [9, 9]


def test_remote_device_info_equals_local_view(loopback):
    client, daemon = loopback
    dev = remote_device(client)
    over_wire = dev.device_info().get(timeout=5)
    direct = daemon.runtime.device_objects()[0].info
    assert over_wire == direct


def test_run_on_unknown_gid_replies_error(loopback):
    client, _ = loopback
    dev = remote_device(client)
    proxy = client.dispatch(dev.gid)
    ghost = GlobalId(9, ObjectKind.PROGRAM, 424242, 7)
    token = proxy.run(ghost, "sum", (1, 1, 1), (1, 1, 1), 0, [])
    with pytest.raises(UnknownGidError):
        token.get(timeout=5)


def test_remote_oob_write_replies_error(loopback):
    client, _ = loopback
    dev = remote_device(client)
    buf = dev.create_buffer(8).get(timeout=5)
    proxy = client.dispatch(buf.gid)
    token = proxy.write(buf.gid, 6, b"abcd", 0)
    with pytest.raises(OobAccessError):
        token.get(timeout=5)


def test_remote_compile_error_carries_diagnostic(loopback):
    client, _ = loopback
    dev = remote_device(client)
    program = dev.create_program_with_source("kernel k(x : buffer_f64) { x[0] = ghost; }").get(timeout=5)
    with pytest.raises(CompileError, match="ghost"):
        program.build("k").get(timeout=5)


def test_pipelined_reads_both_answered(loopback):
    client, _ = loopback
    dev = remote_device(client)
    buf = dev.create_buffer(64).get(timeout=5)
    buf.enqueue_write(0, bytes(range(64))).get(timeout=5)
    tokens = [buf.enqueue_read(i, 4) for i in range(0, 40, 4)]
    results = [t.get(timeout=5) for t in tokens]
    assert results == [bytes(range(i, i + 4)) for i in range(0, 40, 4)]


def test_out_of_order_completion_with_id_matching(host_loopback):
    client, _ = host_loopback
    dev = remote_device(client)
    out = dev.create_buffer(8).get(timeout=10)
    program = dev.create_program_with_source(BUSY_SRC).get(timeout=10)
    program.build("busy").get(timeout=60)
    slow = program.run([out, 30_000_000], "busy", (1, 1, 1), (1, 1, 1), stream=1)
    quick = dev.create_buffer(4).get(timeout=10)
    fast = quick.enqueue_read(0, 4, stream=2)
    fast.get(timeout=10)
    assert not slow.done()  # the later request finished first
    slow.get(timeout=120)
    assert np.frombuffer(out.enqueue_read_sync(0, 8), np.float64)[0] == 30_000_000.0


def test_percolation_source_executes_remotely(loopback):
    client, daemon = loopback
    dev = remote_device(client)
    src = kernel_source("partition")
    program = dev.create_program_with_source(src).get(timeout=5)
    program.build("partition").get(timeout=30)
    buf = dev.create_buffer(128 * 8).get(timeout=5)
    program.run([buf, 5, 128], "partition", (1, 1, 1), (128, 1, 1)).get(timeout=30)
    remote_bytes = buf.enqueue_read_sync(0, 128 * 8)

    local_dev = client.get_all_devices().get()[0]
    local_prog = local_dev.create_program_with_source(src).get()
    local_prog.build("partition").get(timeout=30)
    local_buf = local_dev.create_buffer(128 * 8).get()
    local_prog.run([local_buf, 5, 128], "partition", (1, 1, 1), (128, 1, 1)).get(timeout=30)
    assert remote_bytes == local_buf.enqueue_read_sync(0, 128 * 8)

    # only result bytes came back; the daemon-side program holds the source
    program_obj = daemon.runtime.registry.resolve_local(program.gid, ObjectKind.PROGRAM)
    assert program_obj.source == src


def test_remote_synchronize_joins_stream_work(loopback):
    client, _ = loopback
    dev = remote_device(client)
    buf = dev.create_buffer(1024).get(timeout=5)
    stream = dev.create_stream()
    for _ in range(10):
        buf.enqueue_write(0, bytes(1024), stream)
    dev.synchronize().get(timeout=10)
    assert buf.enqueue_read_sync(0, 4) == bytes(4)


def test_remote_stream_ids_start_at_one(loopback):
    client, _ = loopback
    dev = remote_device(client)
    assert dev.create_stream() == 1
    assert dev.create_stream() == 2


def test_remote_unregister_then_use_fails(loopback):
    client, _ = loopback
    dev = remote_device(client)
    buf = dev.create_buffer(16).get(timeout=5)
    client.dispatch(buf.gid).unregister(buf.gid).get(timeout=5)
    token = buf.enqueue_read(0, 4)
    with pytest.raises(UnknownGidError):
        token.get(timeout=5)


def test_connect_to_closed_port_refused():
    probe = socket.socket()
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()
    with pytest.raises(ConnectionRefusedError):
        connect(f"127.0.0.1:{port}")


def test_disconnect_fails_pending_tokens_with_transport_lost():
    # a server that answers DISCOVER, then swallows requests and drops the link
    listener = socket.create_server(("127.0.0.1", 0))
    port = listener.getsockname()[1]

    def stall_server():
        sock, _ = listener.accept()
        request = read_frame(sock)
        reply = wire.pack_discover_reply(31, [])
        sock.sendall(wire.encode(Parcel(Opcode.REPLY_OK, request.request_id, request.target, reply)))
        for _ in range(3):
            read_frame(sock)
        time.sleep(0.05)
        sock.close()
        listener.close()

    thread = threading.Thread(target=stall_server, daemon=True)
    thread.start()
    proxy = connect(f"127.0.0.1:{port}")
    ghost = GlobalId(31, ObjectKind.BUFFER, 1, 1)
    pending = [proxy.read(ghost, 0, 4, 0) for _ in range(3)]
    thread.join(timeout=5)
    for token in pending:
        with pytest.raises(TransportLostError):
            token.get(timeout=5)
    # subsequent requests fail immediately
    with pytest.raises(TransportLostError):
        proxy.read(ghost, 0, 4, 0).get(timeout=5)
    proxy.close()


def test_replies_echo_request_ids_raw_socket(loopback):
    _, daemon = loopback
    device_gid = daemon.runtime.local_device_table()[0][0]
    sock = socket.create_connection(("127.0.0.1", daemon.port))
    try:
        a = wire.encode(Parcel(Opcode.DEVICE_INFO, 111, device_gid))
        b = wire.encode(Parcel(Opcode.DEVICE_INFO, 222, device_gid))
        sock.sendall(a + b)
        replies = {read_frame(sock).request_id for _ in range(2)}
        assert replies == {111, 222}
    finally:
        sock.close()


def test_two_daemons_merge_ordered_by_locality_id():
    rt_a = Runtime(backend="sim", devices=1, locality_id=50)
    rt_b = Runtime(backend="sim", devices=1, locality_id=3)
    daemon_a = serve("127.0.0.1:0", rt_a)
    daemon_b = serve("127.0.0.1:0", rt_b)
    try:
        with Runtime(backend="sim", devices=1) as client:
            # connect high-id daemon first; discovery order must still sort
            client.connect(daemon_a.address)
            client.connect(daemon_b.address)
            localities = [d.gid.locality_id for d in client.get_all_devices().get()]
            assert localities == [0, 3, 50]
    finally:
        daemon_a.stop()
        daemon_b.stop()
        rt_a.close()
        rt_b.close()


def test_connecting_same_locality_id_twice_rejected():
    rt_a = Runtime(backend="sim", devices=1, locality_id=50)
    rt_b = Runtime(backend="sim", devices=1, locality_id=50)
    daemon_a = serve("127.0.0.1:0", rt_a)
    daemon_b = serve("127.0.0.1:0", rt_b)
    try:
        with Runtime(backend="sim", devices=1) as client:
            client.connect(daemon_a.address)
            with pytest.raises(ValueError, match="already known"):
                client.connect(daemon_b.address)
    finally:
        daemon_a.stop()
        daemon_b.stop()
        rt_a.close()
        rt_b.close()


def test_malformed_magic_drops_connection_without_killing_daemon(loopback):
    client, daemon = loopback
    sock = socket.create_connection(("127.0.0.1", daemon.port))
    sock.sendall(b"GARBAGE HEADER THAT IS LONG ENOUGH TO COVER A FRAME")
    sock.close()
    # the daemon must still serve the existing client
    dev = remote_device(client)
    assert dev.device_info().get(timeout=5).name == "sim0"


def test_malformed_opcode_payload_becomes_reply_err(loopback):
    # a well-framed WRITE whose payload is too short for its own offset and
    # stream fields must produce REPLY_ERR for that request, not a teardown
    _, daemon = loopback
    device_gid = daemon.runtime.local_device_table()[0][0]
    sock = socket.create_connection(("127.0.0.1", daemon.port))
    try:
        bad = wire.encode(Parcel(Opcode.WRITE, 900, device_gid, b"\x01\x02"))
        good = wire.encode(Parcel(Opcode.DEVICE_INFO, 901, device_gid))
        sock.sendall(bad + good)
        replies = {p.request_id: p for p in (read_frame(sock), read_frame(sock))}
        assert replies[900].opcode == Opcode.REPLY_ERR
        assert replies[901].opcode == Opcode.REPLY_OK
    finally:
        sock.close()
