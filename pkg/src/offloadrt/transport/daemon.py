"""Daemon side of the parcel transport.

Each connection gets a receive thread that decodes requests and enqueues
them through the locality's LocalDispatch in arrival order, which preserves
per-stream device ordering. Replies are sent from token continuations as
operations complete, so requests on one connection complete out of order;
the request id is the correlation. A request failure becomes REPLY_ERR and
never tears the connection down.
"""

from __future__ import annotations

import socket
import struct
import threading

from ..errors import UnknownOpcodeError, WireFormatError, error_to_wire
from ..futures import CompletionToken, make_ready
from . import wire
from .client import read_frame
from .wire import Opcode, Parcel

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


class _Connection:
    def __init__(self, daemon: "Daemon", sock: socket.socket, peer: str):
        self._daemon = daemon
        self._sock = sock
        self._peer = peer
        self._send_lock = threading.Lock()
        self._thread = threading.Thread(
            target=self._serve, name=f"parcel-conn({peer})", daemon=True
        )
        self._thread.start()

    def _serve(self) -> None:
        try:
            while True:
                parcel = read_frame(self._sock)
                self._handle(parcel)
        except (OSError, ConnectionError, WireFormatError):
            pass  # peer gone or stream unparseable; drop this connection only
        finally:
            self._sock.close()
            self._daemon._forget(self)

    def _handle(self, parcel: Parcel) -> None:
        try:
            token = self._execute(parcel)
        except Exception as exc:  # noqa: BLE001
            self._reply_err(parcel, exc)
            return
        token._on_done(lambda t: self._finish(parcel, t))

    def _finish(self, parcel: Parcel, token: CompletionToken) -> None:
        err = token.error()
        if err is not None:
            self._reply_err(parcel, err)
        else:
            self._reply_ok(parcel, token.get())

    def _execute(self, parcel: Parcel) -> CompletionToken[bytes]:
        """Enqueue the request; the returned token carries the REPLY_OK
        payload. Runs on the receive thread: decode and enqueue only."""
        runtime = self._daemon.runtime
        local = runtime.local
        op = parcel.opcode
        target = parcel.target
        body = parcel.payload

        if op == Opcode.DISCOVER:
            (major,) = _U32.unpack_from(body, 0)
            (minor,) = _U32.unpack_from(body, 4)
            devices = [
                (gid, info)
                for gid, info in runtime.local_device_table()
                if info.meets(major, minor)
            ]
            return make_ready(
                wire.pack_discover_reply(runtime.registry.self_locality_id, devices)
            )
        if op == Opcode.DEVICE_INFO:
            return local.device_info(target).then(wire.pack_device_info)
        if op == Opcode.CREATE_BUFFER:
            (size,) = _U64.unpack_from(body, 0)
            return local.create_buffer(target, size).then(wire.encode_gid)
        if op == Opcode.WRITE:
            (offset,) = _U64.unpack_from(body, 0)
            (stream,) = _U32.unpack_from(body, 8)
            return local.write(target, offset, body[12:], stream).then(lambda _: b"")
        if op == Opcode.READ:
            (offset,) = _U64.unpack_from(body, 0)
            (size,) = _U64.unpack_from(body, 8)
            (stream,) = _U32.unpack_from(body, 16)
            return local.read(target, offset, size, stream)
        if op == Opcode.CREATE_PROGRAM:
            return local.create_program(target, body.decode("utf-8")).then(wire.encode_gid)
        if op == Opcode.BUILD:
            return local.build(target, body.decode("utf-8")).then(lambda _: b"")
        if op == Opcode.RUN:
            name, grid, block, stream, args = wire.unpack_run_args(body)
            return local.run(target, name, grid, block, stream, args).then(lambda _: b"")
        if op == Opcode.UNREGISTER:
            return local.unregister(target).then(lambda _: b"")
        raise UnknownOpcodeError(f"request opcode {int(op)} not servable")

    def _reply_ok(self, request: Parcel, payload: bytes) -> None:
        self._send(Parcel(Opcode.REPLY_OK, request.request_id, request.target, payload or b""))

    def _reply_err(self, request: Parcel, exc: Exception) -> None:
        code, message = error_to_wire(exc)
        self._send(
            Parcel(Opcode.REPLY_ERR, request.request_id, request.target, wire.pack_error(code, message))
        )

    def _send(self, parcel: Parcel) -> None:
        frame = wire.encode(parcel)
        try:
            with self._send_lock:
                self._sock.sendall(frame)
        except OSError:
            pass  # peer gone; receive loop will notice and clean up

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass


class Daemon:
    """Accepts parcel connections and serves them against a runtime."""

    def __init__(self, runtime, host: str = "127.0.0.1", port: int = 0):
        self.runtime = runtime
        self._listener = socket.create_server((host, port))
        self.address = "%s:%d" % self._listener.getsockname()[:2]
        self.port = self._listener.getsockname()[1]
        self._lock = threading.Lock()
        self._connections: set[_Connection] = set()
        self._stopped = False
        self._acceptor = threading.Thread(
            target=self._accept_loop, name=f"parcel-accept({self.address})", daemon=True
        )
        self._acceptor.start()

    def _accept_loop(self) -> None:
        while True:
            try:
                sock, peer = self._listener.accept()
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn = _Connection(self, sock, "%s:%d" % peer[:2])
            with self._lock:
                if self._stopped:
                    conn.close()
                    return
                self._connections.add(conn)

    def _forget(self, conn: _Connection) -> None:
        with self._lock:
            self._connections.discard(conn)

    def stop(self) -> None:
        with self._lock:
            self._stopped = True
            connections = list(self._connections)
        self._listener.close()
        for conn in connections:
            conn.close()

    def __enter__(self) -> "Daemon":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


def serve(address: str, runtime) -> Daemon:
    """Bind and start serving. ``address`` is ``host:port`` (port 0 picks one)."""
    host, _, port = address.rpartition(":")
    return Daemon(runtime, host or "127.0.0.1", int(port))
