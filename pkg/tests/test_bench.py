import csv
import itertools
import time

import numpy as np
import pytest
from PIL import Image

from offloadrt import Runtime
from offloadrt.bench import (
    BenchReport,
    MandelbrotConfig,
    PartitionConfig,
    StencilConfig,
    TimingProtocol,
    append_csv,
    mandelbrot_oracle,
    measure,
    render_ppm,
    run_mandelbrot,
    run_mandelbrot_series,
    run_partition,
    run_stencil,
    run_sum,
    stencil_oracle,
    sum_oracle,
    write_image,
)
from offloadrt.bench.timing import VIRTUAL_UNITS_PER_MS
from offloadrt.device import SimProfile
from offloadrt.errors import BadArgsError, ValidationFailedError

from oracles import mandelbrot_seq, stencil_seq, sum_seq

FAST = TimingProtocol(iterations=3, discard=1)


# -- product validators vs independent oracles -------------------------------


def test_stencil_oracle_hand_example():
    # endpoints pass through; interior per the 3-point formula
    assert stencil_oracle(np.array([1.0, 2.0, 3.0, 4.0])).tolist() == [1.0, 4.0, 6.0, 4.0]
    assert stencil_seq([1.0, 2.0, 3.0, 4.0]) == [1.0, 4.0, 6.0, 4.0]


def test_stencil_oracle_zeroes():
    assert stencil_oracle(np.zeros(16)).tolist() == [0.0] * 16


def test_stencil_validator_matches_independent_oracle():
    rng = np.random.default_rng(3)
    x = rng.random(501)
    assert stencil_oracle(x).tolist() == stencil_seq(list(x))


def test_sum_oracle_wraps():
    values = np.array([2**32 - 1, 5], dtype=np.uint32)
    assert sum_oracle(values) == 4 == sum_seq(values)


def test_mandelbrot_validator_matches_independent_oracle():
    cfg = MandelbrotConfig(width=24, height=16)
    vectorized = mandelbrot_oracle(cfg)
    sequential = mandelbrot_seq(24, 16, cfg.viewport, cfg.max_iter)
    assert vectorized.tolist() == sequential


# -- benchmark runs -----------------------------------------------------------


def test_run_stencil_small(sim_device):
    report = run_stencil(StencilConfig(n=64), sim_device, FAST)
    assert report.validated and report.benchmark == "stencil"
    assert report.backend == "sim"
    assert report.n_or_pixels == 64


def test_run_stencil_large_matches_oracle(host_device):
    report = run_stencil(StencilConfig(n=100_000), host_device, FAST)
    assert report.validated


def test_partition_size_formula():
    cfg = PartitionConfig(m=1, partitions=4)
    assert cfg.vector_length(num_devices=1) == 2 * 1024 * 256 * 4 == 2_097_152
    assert cfg.vector_length(num_devices=2) == 2 * 1024 * 256


def test_partition_config_bounds():
    with pytest.raises(BadArgsError):
        PartitionConfig(m=0, partitions=4)
    with pytest.raises(BadArgsError):
        PartitionConfig(m=9, partitions=4)


def test_run_partition_single_device(sim_device):
    report = run_partition(PartitionConfig(m=1, partitions=4), [sim_device], FAST)
    assert report.validated
    assert report.n_or_pixels == 2_097_152
    assert report.partitions == 4


def test_run_partition_three_partitions_multi_device():
    with Runtime(backend="sim", devices=2) as rt:
        devices = rt.get_all_devices().get()
        report = run_partition(PartitionConfig(m=1, partitions=3), devices, FAST)
        assert report.validated
        assert report.devices == 2
        assert report.n_or_pixels == 2 * 1024 * 256


def test_run_mandelbrot_writes_valid_ppm(tmp_path, sim_device):
    path = tmp_path / "m.ppm"
    report = run_mandelbrot(MandelbrotConfig(width=32, height=32), sim_device, FAST, image_path=path)
    assert report.validated
    with Image.open(path) as img:
        assert img.size == (32, 32)


def test_run_sum_value_forty_two(sim_device):
    report = run_sum(1, sim_device, FAST, values=np.array([42], dtype=np.uint32))
    assert report.validated and report.n_or_pixels == 1


def test_run_sum_random(sim_device):
    report = run_sum(4096, sim_device, FAST)
    assert report.validated


# -- measure ------------------------------------------------------------------


def test_measure_runs_11_and_means_last_10():
    calls = itertools.count()
    clock = itertools.count()  # 1 unit per timer call -> every iteration measures 1

    def workload():
        next(calls)

    mean = measure(workload, TimingProtocol(), timer=lambda: float(next(clock)), units_per_ms=1.0)
    assert next(calls) == 11
    assert mean == 1.0


def test_measure_discards_warmup():
    durations = iter([100.0] + [1.0] * 10)  # warm-up costs 100, the rest cost 1
    clock = [0.0]

    def timer():
        return clock[0]

    def workload():
        clock[0] += next(durations)

    mean = measure(workload, TimingProtocol(), timer=timer, units_per_ms=1.0)
    assert mean == 1.0


def test_measure_sleep_control():
    mean = measure(lambda: time.sleep(0.005), TimingProtocol(iterations=4, discard=1))
    assert 4.0 < mean < 60.0


def test_measure_constant_sim_workload_is_exact():
    profile = SimProfile(copy_latency=5.0, bandwidth=100.0, kernel_latency=1.0, per_item_cost=1.0)
    with Runtime(backend="sim", sim_profile=profile) as rt:
        dev = rt.get_all_devices().get()[0]
        buf = dev.create_buffer(1000).get()
        obj = rt.device_objects()[0]

        def workload():
            buf.enqueue_write(0, bytes(1000)).get()

        mean = measure(workload, TimingProtocol(), timer=obj.virtual_now, units_per_ms=VIRTUAL_UNITS_PER_MS)
        expected_us = 5.0 + 1000 / 100.0
        assert mean == expected_us / 1000.0


def test_protocol_validation():
    with pytest.raises(BadArgsError):
        TimingProtocol(iterations=0)
    with pytest.raises(BadArgsError):
        TimingProtocol(iterations=5, discard=5)


# -- images ---------------------------------------------------------------------


def test_ppm_single_max_pixel():
    data = render_ppm([256], 1, 1, max_iter=256)
    assert data == b"P6\n1 1\n255\n" + bytes([255, 255, 255])


def test_ppm_two_pixels():
    data = render_ppm([0, 256], 2, 1, max_iter=256)
    assert data == b"P6\n2 1\n255\n" + bytes([0, 0, 0, 255, 255, 255])


def test_ppm_wrong_pixel_count():
    with pytest.raises(BadArgsError):
        render_ppm([1, 2, 3], 2, 1)


def test_ppm_opens_with_image_tooling(tmp_path):
    counts = mandelbrot_oracle(MandelbrotConfig(width=64, height=64))
    path = tmp_path / "oracle.ppm"
    write_image(counts, 64, 64, path)
    with Image.open(path) as img:
        assert img.size == (64, 64)
        assert img.mode == "RGB"


# -- CSV -----------------------------------------------------------------------


def test_csv_schema(tmp_path):
    path = tmp_path / "out.csv"
    report = BenchReport("stencil", "sim", 1, 1, 64, 1.25, True)
    append_csv(path, report)
    append_csv(path, report)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["benchmark", "backend", "devices", "partitions", "n_or_pixels", "mean_ms", "validated"]
    assert rows[1][0] == "stencil"
    assert rows[1][5] == "1.250000"
    assert len(rows) == 3  # header written once


# -- async image writing ---------------------------------------------------------


def _slow_write(delay):
    def write_fn(counts, width, height, path, max_iter=256):
        time.sleep(delay)
        write_image(counts, width, height, path, max_iter)

    return write_fn


@pytest.fixture(params=["sim", "host"])
def either_device(request):
    with Runtime(backend=request.param) as rt:
        yield rt.get_all_devices().get()[0]


def test_async_write_overlaps_next_compute(tmp_path, either_device):
    sizes = [32, 48, 64]
    _, events = run_mandelbrot_series(
        sizes,
        either_device,
        TimingProtocol(iterations=2, discard=1),
        async_write=True,
        out_dir=tmp_path,
        write_fn=_slow_write(0.1),
    )
    writes = {e.index: e for e in events if e.kind == "write"}
    computes = {e.index: e for e in events if e.kind == "compute"}
    assert set(writes) == {0, 1, 2}
    overlaps = [
        writes[i].end > computes[i + 1].start and writes[i].start < computes[i + 1].end
        for i in range(len(sizes) - 1)
    ]
    assert all(overlaps), f"write/compute spans failed to overlap: {events}"
    for size in sizes:
        assert (tmp_path / f"mandelbrot_{size}x{size}.ppm").exists()


def test_sync_write_does_not_overlap(tmp_path, host_device):
    sizes = [32, 48]
    _, events = run_mandelbrot_series(
        sizes,
        host_device,
        TimingProtocol(iterations=2, discard=1),
        async_write=False,
        out_dir=tmp_path,
        write_fn=_slow_write(0.05),
    )
    writes = {e.index: e for e in events if e.kind == "write"}
    computes = {e.index: e for e in events if e.kind == "compute"}
    assert writes[0].end <= computes[1].start


# -- validation failure surfaces -------------------------------------------------


def test_validation_error_reports_first_mismatch():
    from offloadrt.bench.harness import _expect_equal

    with pytest.raises(ValidationFailedError, match="index 2"):
        _expect_equal(np.array([1, 2, 9, 4]), np.array([1, 2, 3, 4]), "probe")


# -- backend equivalence across all four workloads -------------------------------


def test_backend_equivalence_all_four_benchmarks():
    from flows import device_mandelbrot, device_partition, device_stencil, device_sum

    rng = np.random.default_rng(11)
    x = rng.random(512)
    values = rng.integers(0, 2**32, size=512, dtype=np.uint32)
    outputs = {}
    for backend in ("host", "sim"):
        with Runtime(backend=backend) as rt:
            dev = rt.get_all_devices().get()[0]
            outputs[backend] = (
                device_stencil(dev, x),
                device_sum(dev, values),
                device_mandelbrot(dev, 32),
                device_partition(dev, 9, 512),
            )
    assert outputs["host"] == outputs["sim"]


def test_mandelbrot_origin_pixel_is_bounded(sim_device):
    from flows import device_mandelbrot

    # a viewport where the center pixel lands exactly on c = 0, which never
    # escapes, so its count is max_iter
    raw = device_mandelbrot(sim_device, 3, max_iter=50, viewport=(-1.5, 1.5, -1.5, 1.5))
    out = np.frombuffer(raw, np.uint32)
    assert out[4] == 50
