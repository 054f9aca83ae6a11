"""Runtime wiring: local devices, the global-id registry, remote
connections, and the dispatch table handles route through.

Token-returning operations deliver resolution failures (unknown gid, dead
transport) through a failed token, matching how the same failure surfaces
from a remote daemon; synchronous operations raise.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Optional, Sequence, Union

from .buffer import BufferObject
from .device import DeviceInfo, DeviceObject, SimProfile, parse_fixture
from .errors import UnknownGidError
from .futures import CompletionToken, make_failed, make_ready
from .handles import BufferHandle, DeviceHandle, ProgramHandle, copy
from .program import ProgramObject
from .registry import GlobalId, LocalityInfo, ObjectKind, Registry

DEFAULT_CAPABILITY = (3, 5)
DEFAULT_MEMORY = 4 << 30
DEFAULT_COMPUTE_UNITS = 16

DeviceSpec = Union[int, str, Path, Sequence[DeviceInfo], None]


class LocalDispatch:
    """Executes operations against objects owned by this locality. The daemon
    serves parcels through this same path, which is what makes local and
    remote execution byte-identical."""

    def __init__(self, registry: Registry):
        self._registry = registry

    def _tokenized(self, fn) -> CompletionToken:
        try:
            return fn()
        except Exception as exc:  # noqa: BLE001
            return make_failed(exc)

    # -- devices ------------------------------------------------------------

    def device_info(self, device_gid: GlobalId) -> CompletionToken[DeviceInfo]:
        return self._tokenized(
            lambda: make_ready(self._device(device_gid).info)
        )

    def create_stream(self, device_gid: GlobalId) -> int:
        return self._device(device_gid).create_stream()

    def synchronize(self, device_gid: GlobalId) -> CompletionToken[None]:
        return self._tokenized(lambda: self._device(device_gid).synchronize())

    def _device(self, gid: GlobalId) -> DeviceObject:
        return self._registry.resolve_local(gid, ObjectKind.DEVICE)

    # -- buffers ------------------------------------------------------------

    def create_buffer(self, device_gid: GlobalId, size: int) -> CompletionToken[GlobalId]:
        def start():
            device = self._device(device_gid)

            def do():
                return self._registry.register(ObjectKind.BUFFER, BufferObject(device, size))

            return device.enqueue_unordered(do)

        return self._tokenized(start)

    def write(self, buffer_gid, offset, data, stream, device=None) -> CompletionToken[None]:
        return self._tokenized(
            lambda: self._buffer(buffer_gid).enqueue_write(offset, data, stream)
        )

    def read(self, buffer_gid, offset, size, stream, device=None) -> CompletionToken[bytes]:
        return self._tokenized(
            lambda: self._buffer(buffer_gid).enqueue_read(offset, size, stream)
        )

    def _buffer(self, gid: GlobalId) -> BufferObject:
        return self._registry.resolve_local(gid, ObjectKind.BUFFER)

    # -- programs -------------------------------------------------------------

    def create_program(self, device_gid: GlobalId, source: str) -> CompletionToken[GlobalId]:
        def start():
            device = self._device(device_gid)
            program = ProgramObject(device, source)
            return make_ready(self._registry.register(ObjectKind.PROGRAM, program))

        return self._tokenized(start)

    def build(self, program_gid: GlobalId, kernel_name: str) -> CompletionToken[None]:
        return self._tokenized(lambda: self._program(program_gid).build(kernel_name))

    def run(
        self, program_gid, kernel_name, grid, block, stream, args, device=None
    ) -> CompletionToken[None]:
        def start():
            program = self._program(program_gid)
            resolved = [
                ("buffer", self._buffer(value)) if tag == "buffer" else (tag, value)
                for tag, value in args
            ]
            return program.run(kernel_name, grid, block, stream, resolved)

        return self._tokenized(start)

    def _program(self, gid: GlobalId) -> ProgramObject:
        return self._registry.resolve_local(gid, ObjectKind.PROGRAM)

    # -- lifetime -------------------------------------------------------------

    def unregister(self, gid: GlobalId) -> CompletionToken[None]:
        return self._tokenized(
            lambda: make_ready(self._registry.unregister(gid))
        )


class Runtime:
    """One locality: its devices, registry, and connections to daemons.

    devices may be a count (default infos), a fixture file path, or a list
    of DeviceInfo. Use as a context manager or call close(); worker threads
    are non-daemonic about finishing their current op.
    """

    def __init__(
        self,
        backend: str = "host",
        devices: DeviceSpec = 1,
        sim_profile: Optional[SimProfile] = None,
        locality_id: int = 0,
        record_events: bool = False,
        kernel_jit: Optional[bool] = None,
    ):
        if kernel_jit is None:
            kernel_jit = os.environ.get("OFFLOADRT_JIT", "1") != "0"
        self.registry = Registry(locality_id)
        self.local = LocalDispatch(self.registry)
        self._devices: list[tuple[GlobalId, DeviceObject]] = []
        self._remote_devices: dict[int, list[tuple[GlobalId, DeviceInfo]]] = {}
        self._connections: dict[int, object] = {}
        self._closed = False

        infos = self._device_infos(backend, devices)
        for info in infos:
            obj = DeviceObject(
                info,
                backend=backend,
                sim_profile=sim_profile,
                record_events=record_events,
                kernel_jit=kernel_jit,
            )
            gid = self.registry.register(ObjectKind.DEVICE, obj)
            self._devices.append((gid, obj))

    @staticmethod
    def _device_infos(backend: str, devices: DeviceSpec) -> list[DeviceInfo]:
        if devices is None:
            devices = 1
        if isinstance(devices, int):
            return [
                DeviceInfo(
                    f"{backend}{i}", DEFAULT_CAPABILITY, DEFAULT_MEMORY, DEFAULT_COMPUTE_UNITS
                )
                for i in range(devices)
            ]
        if isinstance(devices, (str, Path)):
            return parse_fixture(Path(devices).read_text(encoding="utf-8"))
        return list(devices)

    # -- dispatch ---------------------------------------------------------

    def dispatch(self, gid: GlobalId):
        if gid.locality_id == self.registry.self_locality_id:
            return self.local
        proxy = self._connections.get(gid.locality_id)
        if proxy is None:
            raise UnknownGidError(f"{gid} names an unknown locality")
        return proxy

    # -- discovery ----------------------------------------------------------

    def get_all_devices(self, major: int = 0, minor: int = 0) -> CompletionToken[list[DeviceHandle]]:
        """Every local and remote device with capability >= (major, minor),
        local first, then remotes ordered by locality id."""
        handles = [
            DeviceHandle(gid, obj.info, self)
            for gid, obj in self._devices
            if obj.info.meets(major, minor)
        ]
        for locality_id in sorted(self._remote_devices):
            for gid, info in self._remote_devices[locality_id]:
                if info.meets(major, minor):
                    handles.append(DeviceHandle(gid, info, self))
        return make_ready(handles)

    def local_device_table(self) -> list[tuple[GlobalId, DeviceInfo]]:
        return [(gid, obj.info) for gid, obj in self._devices]

    def device_objects(self) -> list[DeviceObject]:
        return [obj for _, obj in self._devices]

    def local_device_object(self, gid: GlobalId) -> Optional[DeviceObject]:
        for g, obj in self._devices:
            if g == gid:
                return obj
        return None

    # -- remote localities -------------------------------------------------

    def connect(self, address: str) -> LocalityInfo:
        """Connect to a daemon at ``host:port``; its devices join discovery."""
        from .transport.client import connect as transport_connect

        proxy = transport_connect(address)
        info = LocalityInfo(proxy.locality_id, address)
        try:
            self.registry.add_locality(info, proxy)
        except ValueError:
            proxy.close()
            raise
        self._connections[proxy.locality_id] = proxy
        self._remote_devices[proxy.locality_id] = proxy.devices
        return info

    # -- lifetime -------------------------------------------------------------

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        for proxy in self._connections.values():
            proxy.close()
        for _, obj in self._devices:
            obj.close()

    def __enter__(self) -> "Runtime":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


__all__ = [
    "Runtime",
    "LocalDispatch",
    "DeviceHandle",
    "BufferHandle",
    "ProgramHandle",
    "copy",
]
