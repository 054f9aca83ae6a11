"""Logical devices: discovery metadata, per-stream FIFO work queues, and the
two execution backends.

host backend
    One dedicated worker thread per (device, stream) queue; work on a stream
    executes in enqueue order, distinct streams overlap for real. Kernels run
    through the compiled whole-grid function, which releases the GIL.

sim backend
    Executes each operation eagerly at enqueue (data effects are real and
    identical to the host backend) while advancing a virtual clock: a
    transfer occupies a copy engine for copy_latency + bytes/bandwidth, a
    kernel occupies a compute engine for kernel_latency + items*per_item_cost.
    Start time is max(stream ready, earliest engine free); both the event log
    and the makespan are pure functions of the enqueue sequence, so runs are
    deterministic.

Scheduling is static: a device's queues are serviced only by that device's
own workers, never stolen.
"""

from __future__ import annotations

import itertools
import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import BadArgsError, OutOfMemoryError
from .futures import CompletionToken, Promise, make_failed, make_ready, task_pool, when_all

DEFAULT_STREAM = 0


@dataclass(frozen=True)
class DeviceInfo:
    """Discovery snapshot. Capability comparisons are lexicographic on
    (major, minor)."""

    name: str
    capability: tuple[int, int]
    memory_bytes: int
    compute_units: int

    def meets(self, major: int, minor: int) -> bool:
        return self.capability >= (major, minor)


@dataclass(frozen=True)
class SimProfile:
    """Virtual cost model, all times in microseconds."""

    copy_latency: float = 5.0
    bandwidth: float = 1000.0  # bytes per microsecond
    kernel_latency: float = 10.0
    per_item_cost: float = 0.01
    copy_engines_per_direction: int = 1
    compute_engines: int = 1

    def __post_init__(self):
        for name in ("copy_latency", "bandwidth", "kernel_latency", "per_item_cost"):
            if getattr(self, name) <= 0:
                raise BadArgsError(f"SimProfile.{name} must be strictly positive")
        for name in ("copy_engines_per_direction", "compute_engines"):
            if getattr(self, name) < 1:
                raise BadArgsError(f"SimProfile.{name} must be at least 1")


@dataclass
class EventRecord:
    """One executed operation, as seen by its device."""

    seq: int
    device: str
    op: str  # 'write' | 'read' | 'run' | 'fence'
    stream: int
    engine: str  # 'h2d0', 'compute1', ... on sim; worker thread name on host
    start: float  # virtual us on sim; wall seconds on host
    end: float
    amount: int = 0  # bytes for copies, planned work items for kernels
    meta: dict = field(default_factory=dict)


def parse_fixture(text: str) -> list[DeviceInfo]:
    """Device fixture file: one ``name major minor memory_bytes compute_units``
    per line; blank lines and #-comments ignored."""
    devices = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise BadArgsError(f"fixture line {lineno}: expected 5 fields, got {len(parts)}")
        name, major, minor, memory, units = parts
        try:
            devices.append(DeviceInfo(name, (int(major), int(minor)), int(memory), int(units)))
        except ValueError as exc:
            raise BadArgsError(f"fixture line {lineno}: {exc}") from exc
    return devices


def parse_sim_profile(text: str) -> SimProfile:
    """SimProfile file: ``key=value`` lines; blank lines and #-comments ignored."""
    values: dict[str, float] = {}
    valid = {f.name for f in SimProfile.__dataclass_fields__.values()}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise BadArgsError(f"profile line {lineno}: expected key=value")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in valid:
            raise BadArgsError(f"profile line {lineno}: unknown key {key!r}")
        try:
            values[key] = float(value.strip())
        except ValueError as exc:
            raise BadArgsError(f"profile line {lineno}: {exc}") from exc
    for name in ("copy_engines_per_direction", "compute_engines"):
        if name in values:
            values[name] = int(values[name])
    return SimProfile(**values)


class _StreamWorker:
    """Single consumer of one stream's FIFO queue."""

    def __init__(self, device: "DeviceObject", stream: int):
        self.queue: queue.Queue = queue.Queue()
        self.thread = threading.Thread(
            target=self._loop,
            name=f"{device.info.name}-s{stream}",
            daemon=True,
        )
        self.device = device
        self.stream = stream
        self.thread.start()

    def _loop(self):
        while True:
            item = self.queue.get()
            if item is None:
                return
            op, fn, promise, amount, meta = item
            start = time.perf_counter()
            try:
                value = fn()
            except BaseException as exc:  # noqa: BLE001
                self.device._record(op, self.stream, self.thread.name, start, amount, meta)
                promise.try_set_error(exc)
                continue
            self.device._record(op, self.stream, self.thread.name, start, amount, meta)
            promise.try_set_value(value)


class _SimState:
    """Virtual clock per engine plus per-stream ready times."""

    def __init__(self, profile: SimProfile):
        self.profile = profile
        self.h2d = [0.0] * profile.copy_engines_per_direction
        self.d2h = [0.0] * profile.copy_engines_per_direction
        self.compute = [0.0] * profile.compute_engines
        self.stream_end: dict[int, float] = {}
        self.horizon = 0.0

    def duration(self, engine: str, amount: int) -> float:
        p = self.profile
        if engine == "compute":
            return p.kernel_latency + amount * p.per_item_cost
        return p.copy_latency + amount / p.bandwidth

    def account(self, engine: str, stream: int, amount: int) -> tuple[str, float, float]:
        pool = {"h2d": self.h2d, "d2h": self.d2h, "compute": self.compute}[engine]
        idx = min(range(len(pool)), key=pool.__getitem__)
        start = max(self.stream_end.get(stream, 0.0), pool[idx])
        end = start + self.duration(engine, amount)
        pool[idx] = end
        self.stream_end[stream] = end
        self.horizon = max(self.horizon, end)
        return f"{engine}{idx}", start, end


class DeviceObject:
    """Backend-owning device. Client code holds DeviceHandles; this object
    lives on the owning locality and does the work."""

    def __init__(
        self,
        info: DeviceInfo,
        backend: str = "host",
        sim_profile: Optional[SimProfile] = None,
        record_events: bool = False,
        kernel_jit: bool = True,
    ):
        if backend not in ("host", "sim"):
            raise BadArgsError(f"unknown backend {backend!r}")
        self.info = info
        self.backend = backend
        self.kernel_jit = kernel_jit
        self.record_events = record_events or backend == "sim"
        self._lock = threading.Lock()
        self._events: list[EventRecord] = []
        self._event_seq = itertools.count()
        self._stream_counter = itertools.count(1)
        self._workers: dict[int, _StreamWorker] = {}
        self._sim = _SimState(sim_profile or SimProfile()) if backend == "sim" else None
        self._allocated = 0
        self._closed = False

    # -- memory accounting (sim enforces the configured capacity) ----------

    def allocate(self, size: int) -> None:
        with self._lock:
            if self.backend == "sim" and self._allocated + size > self.info.memory_bytes:
                raise OutOfMemoryError(
                    f"{self.info.name}: {size} bytes requested, "
                    f"{self.info.memory_bytes - self._allocated} free"
                )
            self._allocated += size

    def release(self, size: int) -> None:
        with self._lock:
            self._allocated -= size

    # -- streams -------------------------------------------------------------

    def create_stream(self) -> int:
        return next(self._stream_counter)

    def _worker(self, stream: int) -> _StreamWorker:
        with self._lock:
            worker = self._workers.get(stream)
            if worker is None:
                if self._closed:
                    raise BadArgsError(f"{self.info.name} is closed")
                worker = _StreamWorker(self, stream)
                self._workers[stream] = worker
            return worker

    # -- execution -------------------------------------------------------------

    def enqueue(
        self,
        stream: int,
        op: str,
        fn: Callable[[], object],
        engine: Optional[str] = None,
        amount: int = 0,
        meta: Optional[dict] = None,
    ) -> CompletionToken:
        """Stream-ordered operation. On host it is queued for the stream's
        worker; on sim it executes now and the token carries the result with
        virtual times accounted. fn must not call back into this device."""
        meta = meta if meta is not None else {}
        if self._sim is not None:
            promise: Promise = Promise()
            with self._lock:
                if engine is not None:
                    engine_name, start, end = self._sim.account(engine, stream, amount)
                else:
                    start = end = self._sim.stream_end.get(stream, 0.0)
                    self._sim.stream_end[stream] = end
                    engine_name = "none"
                try:
                    value = fn()
                    error = None
                except BaseException as exc:  # noqa: BLE001
                    value, error = None, exc
                if engine is not None or op == "fence":
                    self._events.append(
                        EventRecord(
                            next(self._event_seq),
                            self.info.name,
                            op,
                            stream,
                            engine_name,
                            start,
                            end,
                            amount,
                            meta,
                        )
                    )
            if error is not None:
                promise.set_error(error)
            else:
                promise.set_value(value)
            return promise.token

        promise = Promise()
        self._worker(stream).queue.put((op, fn, promise, amount, meta))
        return promise.token

    def enqueue_unordered(self, fn: Callable[[], object]) -> CompletionToken:
        """Run fn off-stream (build, allocation): concurrent with stream work."""
        if self._sim is not None:
            try:
                return make_ready(fn())
            except BaseException as exc:  # noqa: BLE001
                return make_failed(exc)
        promise: Promise = Promise()

        def run():
            try:
                promise.try_set_value(fn())
            except BaseException as exc:  # noqa: BLE001
                promise.try_set_error(exc)

        task_pool().submit(run)
        return promise.token

    def synchronize(self) -> CompletionToken[None]:
        """Completes when all work enqueued on all streams so far has
        completed. Streams created afterwards are not covered."""
        if self._sim is not None:
            return make_ready(None)
        with self._lock:
            workers = list(self._workers.values())
        fences = []
        for worker in workers:
            promise: Promise = Promise()
            worker.queue.put(("fence", lambda: None, promise, 0, {}))
            fences.append(promise.token)
        return when_all(fences)

    def _record(self, op, stream, engine, start, amount, meta):
        if not self.record_events:
            return
        with self._lock:
            self._events.append(
                EventRecord(
                    next(self._event_seq),
                    self.info.name,
                    op,
                    stream,
                    engine,
                    start,
                    time.perf_counter(),
                    amount,
                    meta,
                )
            )

    def event_log(self) -> list[EventRecord]:
        with self._lock:
            return list(self._events)

    def virtual_now(self) -> float:
        """Sim backend: max virtual end over all engines and streams."""
        if self._sim is None:
            raise BadArgsError(f"{self.info.name} is not a sim device")
        with self._lock:
            return self._sim.horizon

    def close(self) -> None:
        with self._lock:
            workers = list(self._workers.values())
            self._workers.clear()
            self._closed = True
        for worker in workers:
            worker.queue.put(None)
        for worker in workers:
            worker.thread.join(timeout=5)
