"""Run-time kernel compilation and launch.

A program holds source text; build() parses and validates one kernel out of
it (the whole source must parse, as a real translation unit would) and
compiles it for this device. run() executes a built kernel over a grid/block
index space against buffer and scalar arguments, stream-ordered.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .buffer import BufferObject
from .device import DeviceObject
from .errors import (
    BadArgsError,
    CompileError,
    InternalError,
    LaunchConfigError,
    NotBuiltError,
    OobAccessError,
)
from .futures import CompletionToken
from .kernel import compile_ir, parse_and_validate
from .kernel.codegen import CTL_CAST_RANGE, CTL_DIV_ZERO, CTL_OOB


@dataclass(frozen=True)
class Dim3:
    x: int = 1
    y: int = 1
    z: int = 1

    def volume(self) -> int:
        return self.x * self.y * self.z


def as_dim3(value) -> Dim3:
    if isinstance(value, Dim3):
        d = value
    elif isinstance(value, int):
        d = Dim3(value, 1, 1)
    else:
        try:
            x, y, z = value
            d = Dim3(int(x), int(y), int(z))
        except (TypeError, ValueError):
            raise LaunchConfigError(f"cannot interpret {value!r} as Dim3") from None
    if d.x < 1 or d.y < 1 or d.z < 1:
        raise LaunchConfigError("Dim3 components must all be at least 1")
    return d


def check_launch(grid: Dim3, block: Dim3) -> int:
    total = grid.volume() * block.volume()
    if total > 2**32:
        raise LaunchConfigError(f"{total} work items exceed the 2^32 launch limit")
    return total


class ProgramObject:
    """Owning-side program: source text plus the kernels built from it."""

    def __init__(self, device: DeviceObject, source: str):
        if not source:
            raise BadArgsError("program source must be non-empty")
        self.device = device
        self.source = source
        self.built: dict[str, object] = {}
        self._compiled: dict[str, object] = {}
        self._lock = threading.Lock()

    def build(self, kernel_name: str) -> CompletionToken[None]:
        """Validate the source and compile kernel_name for this device.
        Runs off-stream so it overlaps with data transfers."""

        def do():
            kernels = parse_and_validate(self.source)
            ir = kernels.get(kernel_name)
            if ir is None:
                raise CompileError(f"kernel not found: {kernel_name!r}", 0, 0)
            fn = compile_ir(ir, jit=self.device.kernel_jit)
            with self._lock:
                self.built[kernel_name] = ir
                self._compiled[kernel_name] = fn

        return self.device.enqueue_unordered(do)

    def run(
        self,
        kernel_name: str,
        grid: Dim3,
        block: Dim3,
        stream: int,
        args: list,
    ) -> CompletionToken[None]:
        """args: list of ('buffer', BufferObject) | ('f64', float) | ('u32', int),
        already resolved to local objects."""
        with self._lock:
            ir = self.built.get(kernel_name)
            fn = self._compiled.get(kernel_name)
        if ir is None:
            raise NotBuiltError(f"kernel {kernel_name!r} has not been built")
        grid = as_dim3(grid)
        block = as_dim3(block)
        total = check_launch(grid, block)

        if len(args) != len(ir.params):
            raise BadArgsError(
                f"kernel {kernel_name!r} takes {len(ir.params)} arguments, got {len(args)}"
            )
        call_args = []
        for (tag, value), (pname, kind) in zip(args, ir.params):
            if kind.startswith("buffer_"):
                if tag != "buffer" or not isinstance(value, BufferObject):
                    raise BadArgsError(f"argument {pname!r} must be a buffer")
                if value.device is not self.device:
                    raise BadArgsError(
                        f"buffer argument {pname!r} lives on a different device"
                    )
                call_args.append(value.typed_view(kind))
            elif kind == "scalar_f64":
                if tag == "buffer":
                    raise BadArgsError(f"argument {pname!r} must be a f64 scalar")
                call_args.append(float(value))
            else:  # scalar_u32
                if tag == "buffer":
                    raise BadArgsError(f"argument {pname!r} must be a u32 scalar")
                iv = int(value)
                if isinstance(value, float) and value != iv:
                    raise BadArgsError(f"argument {pname!r} must be an integer")
                if not 0 <= iv < 2**32:
                    raise BadArgsError(f"argument {pname!r} out of u32 range")
                call_args.append(iv)

        meta: dict = {}

        def do():
            ctl = np.zeros(3, dtype=np.int64)
            fn(*call_args, grid.x, grid.y, grid.z, block.x, block.y, block.z, ctl)
            meta["executed"] = int(ctl[2])
            if ctl[0] == CTL_OOB:
                raise OobAccessError(f"kernel buffer index {int(ctl[1])} out of range")
            if ctl[0] == CTL_DIV_ZERO:
                raise InternalError("division by zero in kernel")
            if ctl[0] == CTL_CAST_RANGE:
                raise InternalError("u32() cast out of representable range")

        return self.device.enqueue(
            stream, "run", do, engine="compute", amount=total, meta=meta
        )
