from .harness import (
    BenchReport,
    MandelbrotConfig,
    PartitionConfig,
    StencilConfig,
    append_csv,
    enqueue_partition_round,
    kernel_source,
    mandelbrot_oracle,
    prepare_partitions,
    run_mandelbrot,
    run_mandelbrot_series,
    run_partition,
    run_stencil,
    run_sum,
    stencil_oracle,
    sum_oracle,
)
from .image import render_ppm, write_image
from .timing import TimingProtocol, measure

__all__ = [
    "BenchReport",
    "MandelbrotConfig",
    "PartitionConfig",
    "StencilConfig",
    "TimingProtocol",
    "append_csv",
    "enqueue_partition_round",
    "kernel_source",
    "mandelbrot_oracle",
    "measure",
    "prepare_partitions",
    "render_ppm",
    "run_mandelbrot",
    "run_mandelbrot_series",
    "run_partition",
    "run_stencil",
    "run_sum",
    "stencil_oracle",
    "sum_oracle",
    "write_image",
]
