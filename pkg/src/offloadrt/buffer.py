"""Device-resident memory. Buffers are untyped byte arrays, zero-initialized
at creation, with every access bounds-checked against [0, size_bytes)."""

from __future__ import annotations

import numpy as np

from .device import DeviceObject
from .errors import BadArgsError, OobAccessError
from .futures import CompletionToken


def check_range(offset: int, size: int, total: int, what: str) -> None:
    if offset < 0 or size < 0:
        raise BadArgsError(f"{what}: negative offset or size")
    if offset + size > total:
        raise OobAccessError(
            f"{what}: range [{offset}, {offset + size}) exceeds buffer of {total} bytes"
        )


class BufferObject:
    """Owning-side buffer: the bytes plus the device whose streams order
    access to them."""

    def __init__(self, device: DeviceObject, size_bytes: int):
        if size_bytes <= 0:
            raise BadArgsError("buffer size must be positive")
        device.allocate(size_bytes)
        self.device = device
        self.size_bytes = size_bytes
        self.data = np.zeros(size_bytes, dtype=np.uint8)

    def __del__(self):
        try:
            self.device.release(self.size_bytes)
        except Exception:
            pass

    def enqueue_write(self, offset: int, data: bytes, stream: int = 0) -> CompletionToken[None]:
        check_range(offset, len(data), self.size_bytes, "write")
        payload = bytes(data)

        def do():
            self.data[offset : offset + len(payload)] = np.frombuffer(payload, dtype=np.uint8)

        return self.device.enqueue(stream, "write", do, engine="h2d", amount=len(payload))

    def enqueue_read(self, offset: int, size: int, stream: int = 0) -> CompletionToken[bytes]:
        check_range(offset, size, self.size_bytes, "read")

        def do():
            return self.data[offset : offset + size].tobytes()

        return self.device.enqueue(stream, "read", do, engine="d2h", amount=size)

    def typed_view(self, kind: str) -> np.ndarray:
        """Element view for kernel execution; the tail that does not fill a
        whole element is unaddressable from kernels."""
        if kind == "buffer_f64":
            n = self.size_bytes // 8 * 8
            return self.data[:n].view(np.float64)
        if kind == "buffer_u32":
            n = self.size_bytes // 4 * 4
            return self.data[:n].view(np.uint32)
        raise BadArgsError(f"not a buffer kind: {kind}")
