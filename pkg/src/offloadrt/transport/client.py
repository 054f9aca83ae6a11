"""Client side of the parcel transport.

One TCP connection per daemon, pipelined: requests go out in call order
(per-stream device ordering rides on that), replies complete tokens as they
arrive, matched by request id. A connection loss fails every pending token
with TransportLostError.
"""

from __future__ import annotations

import itertools
import socket
import struct
import threading
from typing import Optional

from ..errors import TransportLostError, WireFormatError, error_from_wire
from ..futures import CompletionToken, Promise, make_failed, when_all
from ..registry import GlobalId
from . import wire
from .wire import Opcode, Parcel

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    while n:
        chunk = sock.recv(min(n, 1 << 20))
        if not chunk:
            raise ConnectionError("connection closed")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> Parcel:
    header = _recv_exact(sock, wire.HEADER_SIZE)
    (payload_len,) = _U32.unpack_from(header, wire.HEADER_SIZE - 4)
    payload = _recv_exact(sock, payload_len) if payload_len else b""
    return wire.decode(header + payload)


class RemoteLocality:
    """Dispatch proxy for one connected daemon. Implements the same internal
    operation surface as LocalDispatch, so handles cannot tell the difference.
    """

    def __init__(self, sock: socket.socket, address: str):
        self._sock = sock
        self.address = address
        self.locality_id: int = 0
        self.devices: list[tuple[GlobalId, object]] = []
        self._send_lock = threading.Lock()
        self._pending_lock = threading.Lock()
        self._pending: dict[int, Promise] = {}
        self._req_ids = itertools.count(1)
        self._dead: Optional[Exception] = None
        # Client-side stream bookkeeping: fresh ids per device, and the last
        # token enqueued per (device, stream) so synchronize() can join them.
        self._stream_ids: dict[GlobalId, itertools.count] = {}
        self._last_token: dict[tuple[GlobalId, int], CompletionToken] = {}
        self._track_lock = threading.Lock()
        self._reader = threading.Thread(
            target=self._read_loop, name=f"parcel-reader({address})", daemon=True
        )
        self._reader.start()

    # -- plumbing ---------------------------------------------------------

    def _request(self, opcode: Opcode, target: GlobalId, payload: bytes) -> CompletionToken[bytes]:
        promise: Promise[bytes] = Promise()
        with self._send_lock:
            if self._dead is not None:
                return make_failed(TransportLostError(str(self._dead)))
            request_id = next(self._req_ids)
            with self._pending_lock:
                self._pending[request_id] = promise
            frame = wire.encode(Parcel(opcode, request_id, target, payload))
            try:
                self._sock.sendall(frame)
            except OSError as exc:
                with self._pending_lock:
                    self._pending.pop(request_id, None)
                self._fail_all(exc)
                return make_failed(TransportLostError(f"send failed: {exc}"))
        if self._dead is not None:
            # the reader may have drained _pending before our insert; make
            # sure this request cannot hang
            with self._pending_lock:
                self._pending.pop(request_id, None)
            promise.try_set_error(TransportLostError(f"connection to {self.address} lost"))
        return promise.token

    def _read_loop(self) -> None:
        try:
            while True:
                parcel = read_frame(self._sock)
                with self._pending_lock:
                    promise = self._pending.pop(parcel.request_id, None)
                if promise is None:
                    continue  # reply to a request we gave up on
                if parcel.opcode == Opcode.REPLY_ERR:
                    code, message = wire.unpack_error(parcel.payload)
                    promise.try_set_error(error_from_wire(code, message))
                else:
                    promise.try_set_value(parcel.payload)
        except (OSError, ConnectionError, WireFormatError) as exc:
            self._fail_all(exc)

    def _fail_all(self, cause: Exception) -> None:
        with self._pending_lock:
            self._dead = cause
            pending, self._pending = self._pending, {}
        for promise in pending.values():
            promise.try_set_error(TransportLostError(f"connection to {self.address} lost"))

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()

    def _track(self, device: Optional[GlobalId], stream: int, token: CompletionToken) -> None:
        if device is None:
            return
        with self._track_lock:
            self._last_token[(device, stream)] = token

    # -- dispatch surface ---------------------------------------------------

    def discover(self, major: int, minor: int) -> CompletionToken:
        payload = _U32.pack(major) + _U32.pack(minor)
        return self._request(Opcode.DISCOVER, wire.NULL_GID, payload).then(
            wire.unpack_discover_reply
        )

    def device_info(self, device_gid: GlobalId) -> CompletionToken:
        return self._request(Opcode.DEVICE_INFO, device_gid, b"").then(
            lambda payload: wire.unpack_device_info(payload, 0)[0]
        )

    def create_stream(self, device_gid: GlobalId) -> int:
        with self._track_lock:
            counter = self._stream_ids.setdefault(device_gid, itertools.count(1))
        return next(counter)

    def synchronize(self, device_gid: GlobalId) -> CompletionToken[None]:
        with self._track_lock:
            tokens = [
                token
                for (device, _), token in self._last_token.items()
                if device == device_gid
            ]
        return when_all(tokens)

    def create_buffer(self, device_gid: GlobalId, size: int) -> CompletionToken[GlobalId]:
        return self._request(Opcode.CREATE_BUFFER, device_gid, _U64.pack(size)).then(
            wire.decode_gid
        )

    def write(self, buffer_gid, offset, data, stream, device=None) -> CompletionToken[None]:
        payload = _U64.pack(offset) + _U32.pack(stream) + data
        token = self._request(Opcode.WRITE, buffer_gid, payload).then(lambda _: None)
        self._track(device, stream, token)
        return token

    def read(self, buffer_gid, offset, size, stream, device=None) -> CompletionToken[bytes]:
        payload = _U64.pack(offset) + _U64.pack(size) + _U32.pack(stream)
        token = self._request(Opcode.READ, buffer_gid, payload)
        self._track(device, stream, token)
        return token

    def create_program(self, device_gid: GlobalId, source: str) -> CompletionToken[GlobalId]:
        return self._request(
            Opcode.CREATE_PROGRAM, device_gid, source.encode("utf-8")
        ).then(wire.decode_gid)

    def build(self, program_gid: GlobalId, kernel_name: str) -> CompletionToken[None]:
        return self._request(
            Opcode.BUILD, program_gid, kernel_name.encode("utf-8")
        ).then(lambda _: None)

    def run(
        self, program_gid, kernel_name, grid, block, stream, args, device=None
    ) -> CompletionToken[None]:
        payload = wire.pack_run_args(kernel_name, grid, block, stream, args)
        token = self._request(Opcode.RUN, program_gid, payload).then(lambda _: None)
        self._track(device, stream, token)
        return token

    def unregister(self, gid: GlobalId) -> CompletionToken[None]:
        return self._request(Opcode.UNREGISTER, gid, b"").then(lambda _: None)


def connect(address: str, timeout: float = 10.0) -> RemoteLocality:
    """Open a connection and discover the daemon's identity and devices.
    Raises ConnectionRefusedError if no daemon listens there."""
    host, _, port = address.rpartition(":")
    sock = socket.create_connection((host or "127.0.0.1", int(port)), timeout=timeout)
    sock.settimeout(None)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    proxy = RemoteLocality(sock, address)
    locality_id, devices = proxy.discover(0, 0).get(timeout)
    proxy.locality_id = locality_id
    proxy.devices = devices
    return proxy
