"""Client-side handles. A handle carries a GlobalId and routes every
operation through the runtime's dispatch table, so code written against a
handle works identically whether the object is local or on a remote daemon.
"""

from __future__ import annotations

from typing import Optional, Sequence, Union

from .device import DeviceInfo
from .errors import BadArgsError, OobAccessError
from .futures import CompletionToken, Promise
from .program import as_dim3, check_launch
from .registry import GlobalId


def _pipe(token: CompletionToken, promise: Promise, value=None) -> None:
    """Forward token's outcome into promise (value replaced by `value`)."""

    def done(t: CompletionToken) -> None:
        err = t.error()
        if err is not None:
            promise.try_set_error(err)
        else:
            promise.try_set_value(value)

    token._on_done(done)


class DeviceHandle:
    """Location-transparent reference to one accelerator."""

    def __init__(self, gid: GlobalId, info: DeviceInfo, runtime):
        self.gid = gid
        self.info = info
        self._runtime = runtime

    def __repr__(self):
        return f"DeviceHandle({self.info.name}, {self.gid})"

    def _dispatch(self):
        return self._runtime.dispatch(self.gid)

    def device_info(self) -> CompletionToken[DeviceInfo]:
        return self._dispatch().device_info(self.gid)

    def create_stream(self) -> int:
        return self._dispatch().create_stream(self.gid)

    def synchronize(self) -> CompletionToken[None]:
        return self._dispatch().synchronize(self.gid)

    def create_buffer(self, size_bytes: int) -> "CompletionToken[BufferHandle]":
        if size_bytes <= 0:
            raise BadArgsError("buffer size must be positive")
        token = self._dispatch().create_buffer(self.gid, size_bytes)
        return token.then(
            lambda gid: BufferHandle(gid, self.gid, size_bytes, self._runtime)
        )

    def create_program_with_source(self, source: str) -> "CompletionToken[ProgramHandle]":
        if not source:
            raise BadArgsError("program source must be non-empty")
        token = self._dispatch().create_program(self.gid, source)
        return token.then(lambda gid: ProgramHandle(gid, self.gid, source, self._runtime))

    def create_program_with_file(self, path) -> "CompletionToken[ProgramHandle]":
        with open(path, "r", encoding="utf-8") as fh:
            return self.create_program_with_source(fh.read())


class BufferHandle:
    """Location-transparent reference to device memory."""

    def __init__(self, gid: GlobalId, device: GlobalId, size_bytes: int, runtime):
        self.gid = gid
        self.device = device
        self.size_bytes = size_bytes
        self._runtime = runtime

    def __repr__(self):
        return f"BufferHandle({self.size_bytes}B, {self.gid})"

    def _dispatch(self):
        return self._runtime.dispatch(self.gid)

    def enqueue_write(self, offset: int, data, stream: int = 0) -> CompletionToken[None]:
        data = bytes(data)
        if offset < 0:
            raise BadArgsError("negative write offset")
        if offset + len(data) > self.size_bytes:
            raise OobAccessError(
                f"write of {len(data)} bytes at {offset} exceeds buffer of {self.size_bytes}"
            )
        return self._dispatch().write(self.gid, offset, data, stream, device=self.device)

    def enqueue_read(self, offset: int, size: int, stream: int = 0) -> CompletionToken[bytes]:
        if offset < 0 or size < 0:
            raise BadArgsError("negative read offset or size")
        if offset + size > self.size_bytes:
            raise OobAccessError(
                f"read of {size} bytes at {offset} exceeds buffer of {self.size_bytes}"
            )
        return self._dispatch().read(self.gid, offset, size, stream, device=self.device)

    def enqueue_read_sync(self, offset: int, size: int, stream: int = 0) -> bytes:
        return self.enqueue_read(offset, size, stream).get()

    def copy_to(
        self,
        dst: "BufferHandle",
        size: Optional[int] = None,
        src_off: int = 0,
        dst_off: int = 0,
    ) -> CompletionToken[None]:
        return copy(self, src_off, dst, dst_off, self.size_bytes if size is None else size)


def copy(
    src: BufferHandle, src_off: int, dst: BufferHandle, dst_off: int, size: int
) -> CompletionToken[None]:
    """Copy bytes between buffers, across devices and localities: read on the
    source side, then write on the destination side, routed through the
    initiating locality. Uses the default stream on both ends."""
    if src_off < 0 or dst_off < 0 or size < 0:
        raise BadArgsError("negative copy offset or size")
    if src_off + size > src.size_bytes or dst_off + size > dst.size_bytes:
        raise OobAccessError("copy range exceeds a buffer bound")
    result: Promise[None] = Promise()
    read_token = src.enqueue_read(src_off, size)

    def after_read(t: CompletionToken) -> None:
        err = t.error()
        if err is not None:
            result.try_set_error(err)
            return
        try:
            write_token = dst.enqueue_write(dst_off, t.get())
        except Exception as exc:  # noqa: BLE001
            result.try_set_error(exc)
            return
        _pipe(write_token, result)

    read_token._on_done(after_read)
    return result.token


ScalarArg = Union[int, float]
KernelArg = Union[BufferHandle, ScalarArg]


class ProgramHandle:
    """Location-transparent reference to a compiled-code container."""

    def __init__(self, gid: GlobalId, device: GlobalId, source: str, runtime):
        self.gid = gid
        self.device = device
        self.source = source
        self._runtime = runtime

    def __repr__(self):
        return f"ProgramHandle({self.gid})"

    def _dispatch(self):
        return self._runtime.dispatch(self.gid)

    def build(self, kernel_name: str) -> CompletionToken[None]:
        return self._dispatch().build(self.gid, kernel_name)

    def run(
        self,
        args: Sequence[KernelArg],
        kernel_name: str,
        grid,
        block,
        stream: int = 0,
    ) -> CompletionToken[None]:
        grid = as_dim3(grid)
        block = as_dim3(block)
        check_launch(grid, block)
        wire_args = []
        for arg in args:
            if isinstance(arg, BufferHandle):
                if arg.device != self.device:
                    raise BadArgsError("buffer argument lives on a different device")
                wire_args.append(("buffer", arg.gid))
            elif isinstance(arg, bool):
                raise BadArgsError("bool is not a kernel argument type")
            elif isinstance(arg, float):
                wire_args.append(("f64", arg))
            elif isinstance(arg, int):
                if not 0 <= arg < 2**32:
                    raise BadArgsError(f"scalar {arg} out of u32 range")
                wire_args.append(("u32", arg))
            else:
                raise BadArgsError(f"{type(arg).__name__} is not a kernel argument type")
        return self._dispatch().run(
            self.gid, kernel_name, (grid.x, grid.y, grid.z), (block.x, block.y, block.z),
            stream, wire_args, device=self.device,
        )
