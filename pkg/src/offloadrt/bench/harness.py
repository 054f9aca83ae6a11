"""The four reference workloads, their sequential validators, and CSV output.

Every run validates the device output against a sequential oracle before any
time is reported; a report object cannot exist for an unvalidated run. The
three-loop partition benchmark enqueues write/run/read rounds per partition
on its own stream, gated only by per-stream order, which is where the
copy/compute overlap comes from.
"""

from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import BadArgsError, ValidationFailedError
from ..futures import task_pool
from ..handles import BufferHandle, DeviceHandle, ProgramHandle
from .image import write_image
from .timing import (
    TimingProtocol,
    VIRTUAL_UNITS_PER_MS,
    WALL_UNITS_PER_MS,
    measure,
)

DEFAULT_SEED = 20180214


def kernel_source(name: str) -> str:
    return (resources.files("offloadrt.bench") / "kernels" / f"{name}.k").read_text(
        encoding="utf-8"
    )


# -- configs -----------------------------------------------------------------


@dataclass(frozen=True)
class StencilConfig:
    n: int
    block_x: int = 32

    def __post_init__(self):
        if self.n < 3:
            raise BadArgsError("stencil needs n >= 3")


@dataclass(frozen=True)
class PartitionConfig:
    m: int
    partitions: int
    block_size: int = 256

    def __post_init__(self):
        if not 1 <= self.m <= 8:
            raise BadArgsError("partition m must be in 1..8")
        if self.partitions < 1:
            raise BadArgsError("partition count must be positive")

    def vector_length(self, num_devices: int) -> int:
        n = (2**self.m) * 1024 * self.block_size
        return n * self.partitions if num_devices == 1 else n


@dataclass(frozen=True)
class MandelbrotConfig:
    width: int
    height: int
    max_iter: int = 256
    escape_radius: float = 2.0
    viewport: tuple[float, float, float, float] = (-2.0, 1.0, -1.5, 1.5)
    async_write: bool = False

    def __post_init__(self):
        if self.width * self.height < 1:
            raise BadArgsError("image must have at least one pixel")


@dataclass(frozen=True)
class BenchReport:
    benchmark: str
    backend: str
    devices: int
    partitions: int
    n_or_pixels: int
    mean_ms: float
    validated: bool
    config: dict = field(default_factory=dict, compare=False)


CSV_FIELDS = ["benchmark", "backend", "devices", "partitions", "n_or_pixels", "mean_ms", "validated"]


def append_csv(path, report: BenchReport) -> None:
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(CSV_FIELDS)
        writer.writerow(
            [
                report.benchmark,
                report.backend,
                report.devices,
                report.partitions,
                report.n_or_pixels,
                f"{report.mean_ms:.6f}",
                "1" if report.validated else "0",
            ]
        )


# -- oracles (sequential validators) ---------------------------------------


def stencil_oracle(x: np.ndarray) -> np.ndarray:
    y = x.copy()
    y[1:-1] = 0.5 * x[:-2] + x[1:-1] + 0.5 * x[2:]
    return y


def sum_oracle(values: np.ndarray) -> int:
    return int(values.astype(np.uint64).sum()) & 0xFFFFFFFF


def mandelbrot_oracle(cfg: MandelbrotConfig) -> np.ndarray:
    """Vectorized escape-time iteration, element-for-element the same
    operation sequence as the kernel."""
    w, h = cfg.width, cfg.height
    re0, re1, im0, im1 = cfg.viewport
    idx = np.arange(w * h, dtype=np.int64)
    px = (idx % w).astype(np.float64)
    py = (idx // w).astype(np.float64)
    cre = re0 + (px + 0.5) * (re1 - re0) / float(w)
    cim = im0 + (py + 0.5) * (im1 - im0) / float(h)
    zre = np.zeros(w * h)
    zim = np.zeros(w * h)
    count = np.zeros(w * h, dtype=np.uint32)
    active = np.ones(w * h, dtype=bool)
    limit = cfg.escape_radius * cfg.escape_radius
    for _ in range(cfg.max_iter):
        mag = zre * zre + zim * zim
        active &= ~(mag > limit)
        if not active.any():
            break
        zr, zi = zre[active], zim[active]
        t = zr * zr - zi * zi + cre[active]
        zim[active] = 2.0 * zr * zi + cim[active]
        zre[active] = t
        count[active] += 1
    return count


def _first_mismatch(actual: np.ndarray, expected: np.ndarray) -> int:
    bad = actual != expected
    return int(np.argmax(bad))


def _expect_equal(actual: np.ndarray, expected: np.ndarray, what: str) -> None:
    if actual.shape != expected.shape or not np.array_equal(actual, expected):
        idx = _first_mismatch(actual, expected)
        raise ValidationFailedError(
            f"{what}: first mismatch at index {idx}: "
            f"device={actual[idx]!r} oracle={expected[idx]!r}"
        )


# -- clock selection ---------------------------------------------------------


def clock_for(device: DeviceHandle) -> tuple[Callable[[], float], float, str]:
    """(timer, units_per_ms, backend label). Local sim devices are timed on
    their virtual clock; everything else on the wall clock."""
    return clock_for_group([device])


def clock_for_group(devices: Sequence[DeviceHandle]):
    """Like clock_for, across several devices: virtual time only when every
    device is a local sim device, read as the max of their horizons."""
    objs = [d._runtime.local_device_object(d.gid) for d in devices]
    if all(o is not None and o.backend == "sim" for o in objs):
        if len(objs) == 1:
            return objs[0].virtual_now, VIRTUAL_UNITS_PER_MS, "sim"
        return (lambda: max(o.virtual_now() for o in objs)), VIRTUAL_UNITS_PER_MS, "sim"
    label = "remote" if any(o is None for o in objs) else objs[0].backend
    return time.perf_counter, WALL_UNITS_PER_MS, label


# -- stencil ------------------------------------------------------------------


def run_stencil(
    cfg: StencilConfig,
    device: DeviceHandle,
    protocol: TimingProtocol = TimingProtocol(),
    seed: int = DEFAULT_SEED,
) -> BenchReport:
    rng = np.random.default_rng(seed)
    x = rng.random(cfg.n)
    payload = x.tobytes()

    x_buf = device.create_buffer(cfg.n * 8).get()
    y_buf = device.create_buffer(cfg.n * 8).get()
    program = device.create_program_with_source(kernel_source("stencil")).get()
    program.build("stencil").get()
    grid = (math.ceil(cfg.n / cfg.block_x), 1, 1)
    block = (cfg.block_x, 1, 1)

    result: dict = {}

    def iteration():
        x_buf.enqueue_write(0, payload)
        program.run([x_buf, y_buf, cfg.n], "stencil", grid, block)
        result["out"] = y_buf.enqueue_read(0, cfg.n * 8).get()

    timer, units, backend = clock_for(device)
    mean_ms = measure(iteration, protocol, timer, units)

    actual = np.frombuffer(result["out"], dtype=np.float64)
    _expect_equal(actual, stencil_oracle(x), "stencil")
    return BenchReport(
        "stencil", backend, 1, 1, cfg.n, mean_ms, True, {"n": cfg.n, "block_x": cfg.block_x}
    )


# -- partition (the three-loop benchmark) -----------------------------------


@dataclass
class PartitionPart:
    buffer: BufferHandle
    program: ProgramHandle
    stream: int
    offset: int
    count: int
    payload: bytes
    block_size: int


def prepare_partitions(
    cfg: PartitionConfig,
    devices: Sequence[DeviceHandle],
    seed: int = DEFAULT_SEED,
) -> tuple[int, list[PartitionPart]]:
    """Allocate one buffer + stream per partition (partition i on device
    i mod k) and build the kernel once per device."""
    if not devices:
        raise BadArgsError("partition needs at least one device")
    n = cfg.vector_length(len(devices))
    rng = np.random.default_rng(seed)
    x = rng.random(n)

    programs = []
    for device in devices:
        program = device.create_program_with_source(kernel_source("partition")).get()
        program.build("partition").get()
        programs.append(program)

    parts = []
    base, extra = divmod(n, cfg.partitions)
    offset = 0
    for i in range(cfg.partitions):
        count = base + (1 if i < extra else 0)
        device = devices[i % len(devices)]
        parts.append(
            PartitionPart(
                buffer=device.create_buffer(count * 8).get(),
                program=programs[i % len(devices)],
                stream=device.create_stream(),
                offset=offset,
                count=count,
                payload=x[offset : offset + count].tobytes(),
                block_size=cfg.block_size,
            )
        )
        offset += count
    return n, parts


def enqueue_partition_round(parts: Sequence[PartitionPart]) -> list:
    """Alg-1 shape: three rounds of asynchronous enqueues, write_i then run_i
    then read_i, ordered only by each partition's stream."""
    for p in parts:
        p.buffer.enqueue_write(0, p.payload, p.stream)
    for p in parts:
        grid = (math.ceil(p.count / p.block_size), 1, 1)
        p.program.run(
            [p.buffer, p.offset, p.count], "partition", grid, (p.block_size, 1, 1), p.stream
        )
    return [p.buffer.enqueue_read(0, p.count * 8, p.stream) for p in parts]


def run_partition(
    cfg: PartitionConfig,
    devices: Sequence[DeviceHandle],
    protocol: TimingProtocol = TimingProtocol(),
    seed: int = DEFAULT_SEED,
    tolerance: float = 1e-12,
) -> BenchReport:
    n, parts = prepare_partitions(cfg, devices, seed)
    result: dict = {}

    def iteration():
        reads = enqueue_partition_round(parts)
        result["chunks"] = [t.get() for t in reads]

    timer, units, backend = clock_for_group(devices)
    mean_ms = measure(iteration, protocol, timer, units)

    out = np.frombuffer(b"".join(result["chunks"]), dtype=np.float64)
    if out.size != n:
        raise ValidationFailedError(f"partition returned {out.size} of {n} elements")
    deviation = np.abs(out - 1.0)
    if deviation.size and deviation.max() > tolerance:
        idx = int(np.argmax(deviation > tolerance))
        raise ValidationFailedError(
            f"partition: element {idx} is {out[idx]!r}, expected 1.0 within {tolerance}"
        )
    return BenchReport(
        "partition",
        backend,
        len(devices),
        cfg.partitions,
        n,
        mean_ms,
        True,
        {"m": cfg.m, "block_size": cfg.block_size},
    )


# -- mandelbrot ----------------------------------------------------------------


def compute_mandelbrot(cfg: MandelbrotConfig, device: DeviceHandle, protocol, timer, units):
    pixels = cfg.width * cfg.height
    out_buf = device.create_buffer(pixels * 4).get()
    program = device.create_program_with_source(kernel_source("mandelbrot")).get()
    program.build("mandelbrot").get()
    re0, re1, im0, im1 = cfg.viewport
    grid = (math.ceil(pixels / 256), 1, 1)
    esc = cfg.escape_radius * cfg.escape_radius
    args = [out_buf, cfg.width, cfg.height, re0, re1, im0, im1, esc, cfg.max_iter]

    result: dict = {}

    def iteration():
        program.run(args, "mandelbrot", grid, (256, 1, 1))
        result["out"] = out_buf.enqueue_read(0, pixels * 4).get()

    mean_ms = measure(iteration, protocol, timer, units)
    counts = np.frombuffer(result["out"], dtype=np.uint32)
    _expect_equal(counts, mandelbrot_oracle(cfg), "mandelbrot")
    return counts, mean_ms


def run_mandelbrot(
    cfg: MandelbrotConfig,
    device: DeviceHandle,
    protocol: TimingProtocol = TimingProtocol(),
    image_path=None,
) -> BenchReport:
    timer, units, backend = clock_for(device)
    counts, mean_ms = compute_mandelbrot(cfg, device, protocol, timer, units)
    if image_path is not None:
        write_image(counts, cfg.width, cfg.height, image_path, cfg.max_iter)
    return BenchReport(
        "mandelbrot",
        backend,
        1,
        1,
        cfg.width * cfg.height,
        mean_ms,
        True,
        {"width": cfg.width, "height": cfg.height, "max_iter": cfg.max_iter},
    )


@dataclass(frozen=True)
class SeriesEvent:
    kind: str  # 'compute' | 'write'
    index: int
    start: float  # wall seconds
    end: float


def run_mandelbrot_series(
    sizes: Sequence[int],
    device: DeviceHandle,
    protocol: TimingProtocol = TimingProtocol(),
    async_write: bool = False,
    out_dir=None,
    write_fn: Optional[Callable] = None,
) -> tuple[list[BenchReport], list[SeriesEvent]]:
    """Increasing image sizes; each image is written to disk after it
    validates. With async_write the write of image i runs as an independent
    task while image i+1 computes; all writes are joined before returning.
    The returned wall-clock event spans let callers check the overlap."""
    if write_fn is None:
        write_fn = write_image
    timer, units, backend = clock_for(device)
    reports: list[BenchReport] = []
    events: list[SeriesEvent] = []
    writers = []

    def emit(counts, cfg: MandelbrotConfig, index: int) -> None:
        start = time.perf_counter()
        if out_dir is not None:
            path = os.path.join(out_dir, f"mandelbrot_{cfg.width}x{cfg.height}.ppm")
            write_fn(counts, cfg.width, cfg.height, path, cfg.max_iter)
        events.append(SeriesEvent("write", index, start, time.perf_counter()))

    for index, size in enumerate(sizes):
        cfg = MandelbrotConfig(width=size, height=size, async_write=async_write)
        start = time.perf_counter()
        counts, mean_ms = compute_mandelbrot(cfg, device, protocol, timer, units)
        events.append(SeriesEvent("compute", index, start, time.perf_counter()))
        reports.append(
            BenchReport(
                "mandelbrot", backend, 1, 1, size * size, mean_ms, True,
                {"width": size, "height": size, "async_write": async_write},
            )
        )
        if async_write:
            writers.append(task_pool().submit(emit, counts, cfg, index))
        else:
            emit(counts, cfg, index)
    for writer in writers:
        writer.result()
    events.sort(key=lambda e: e.start)
    return reports, events


# -- sum -----------------------------------------------------------------------


def run_sum(
    n: int,
    device: DeviceHandle,
    protocol: TimingProtocol = TimingProtocol(),
    seed: int = DEFAULT_SEED,
    values: Optional[np.ndarray] = None,
) -> BenchReport:
    if n < 1:
        raise BadArgsError("sum needs n >= 1")
    if values is None:
        rng = np.random.default_rng(seed)
        values = rng.integers(0, 2**32, size=n, dtype=np.uint32)
    values = np.asarray(values, dtype=np.uint32)
    payload = values.tobytes()

    in_buf = device.create_buffer(n * 4).get()
    res_buf = device.create_buffer(4).get()
    program = device.create_program_with_source(kernel_source("sum")).get()
    program.build("sum").get()

    result: dict = {}

    def iteration():
        in_buf.enqueue_write(0, payload)
        program.run([in_buf, res_buf, n], "sum", (1, 1, 1), (32, 1, 1))
        result["out"] = res_buf.enqueue_read(0, 4).get()

    timer, units, backend = clock_for(device)
    mean_ms = measure(iteration, protocol, timer, units)

    actual = int(np.frombuffer(result["out"], dtype=np.uint32)[0])
    expected = sum_oracle(values)
    if actual != expected:
        raise ValidationFailedError(f"sum: device={actual} oracle={expected}")
    return BenchReport("sum", backend, 1, 1, n, mean_ms, True, {"n": n})
