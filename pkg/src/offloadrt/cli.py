"""Console entry points: the parcel daemon and the benchmark harness."""

from __future__ import annotations

import argparse
import signal
import sys
import threading
from pathlib import Path

from .bench import (
    MandelbrotConfig,
    PartitionConfig,
    StencilConfig,
    TimingProtocol,
    append_csv,
    run_mandelbrot,
    run_mandelbrot_series,
    run_partition,
    run_stencil,
    run_sum,
)
from .device import parse_sim_profile
from .runtime import Runtime
from .transport.daemon import serve


def _sim_profile(path):
    if path is None:
        return None
    return parse_sim_profile(Path(path).read_text(encoding="utf-8"))


def offloadd_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="offloadd", description="Device daemon speaking the parcel protocol."
    )
    parser.add_argument("--listen", required=True, metavar="HOST:PORT")
    parser.add_argument("--backend", choices=["host", "sim"], default="host")
    parser.add_argument("--sim-profile", metavar="FILE", help="sim cost model (key=value lines)")
    parser.add_argument("--fixture", metavar="FILE", help="device fixture file (one device per line)")
    parser.add_argument("--devices", type=int, default=1, help="device count when no fixture is given")
    parser.add_argument(
        "--locality-id",
        type=int,
        default=None,
        help="nonzero locality id for this daemon (default: random)",
    )
    args = parser.parse_args(argv)

    locality_id = args.locality_id
    if locality_id is None:
        import random

        locality_id = random.getrandbits(32) or 1
    if locality_id == 0:
        parser.error("--locality-id must be nonzero (0 is the application process)")

    runtime = Runtime(
        backend=args.backend,
        devices=args.fixture if args.fixture else args.devices,
        sim_profile=_sim_profile(args.sim_profile),
        locality_id=locality_id,
    )
    daemon = serve(args.listen, runtime)
    print(f"offloadd: locality {locality_id} serving {args.backend} devices on {daemon.address}", flush=True)

    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    try:
        stop.wait()
    finally:
        daemon.stop()
        runtime.close()
    return 0


def _report_line(report) -> str:
    return (
        f"{report.benchmark}: backend={report.backend} devices={report.devices} "
        f"partitions={report.partitions} size={report.n_or_pixels} "
        f"mean={report.mean_ms:.3f} ms validated={report.validated}"
    )


def _parse_m_range(text: str) -> range:
    lo, _, hi = text.partition("..")
    lo = int(lo)
    hi = int(hi) if hi else lo
    return range(lo, hi + 1)


def bench_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="offload-bench", description="Reference benchmarks with oracle validation."
    )
    parser.add_argument("benchmark", choices=["stencil", "partition", "mandelbrot", "sum"])
    parser.add_argument("--backend", choices=["host", "sim"], default="host")
    parser.add_argument("--devices", type=int, default=1, help="local devices to create / devices to use")
    parser.add_argument("--partitions", type=int, default=4)
    parser.add_argument("--m-range", default="1..1", metavar="A..B", help="partition sizes via n = 2^m * 1024 * blockSize [* p]")
    parser.add_argument("--size", type=int, default=None, help="vector length (stencil/sum) or square image edge (mandelbrot)")
    parser.add_argument("--remote", action="append", default=[], metavar="HOST:PORT", help="connect to a daemon (repeatable)")
    parser.add_argument("--csv", metavar="FILE", help="append reports to this CSV file")
    parser.add_argument("--async-write", action="store_true", help="mandelbrot: write image i while image i+1 computes")
    parser.add_argument("--sim-profile", metavar="FILE")
    parser.add_argument("--iterations", type=int, default=11)
    parser.add_argument("--out-dir", default=".", help="where mandelbrot images go")
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args(argv)

    protocol = TimingProtocol(iterations=args.iterations, discard=1 if args.iterations > 1 else 0)
    seed_kw = {} if args.seed is None else {"seed": args.seed}

    with Runtime(
        backend=args.backend,
        devices=args.devices,
        sim_profile=_sim_profile(args.sim_profile),
    ) as runtime:
        for address in args.remote:
            info = runtime.connect(address)
            print(f"connected to locality {info.locality_id} at {address}", flush=True)
        pool = runtime.get_all_devices().get()
        if not pool:
            print("no devices available", file=sys.stderr)
            return 1

        reports = []
        if args.benchmark == "stencil":
            n = args.size or 2**20
            reports.append(run_stencil(StencilConfig(n=n), pool[0], protocol, **seed_kw))
        elif args.benchmark == "sum":
            n = args.size or 2**20
            reports.append(run_sum(n, pool[0], protocol, **seed_kw))
        elif args.benchmark == "partition":
            devices = pool[: max(1, args.devices)]
            for m in _parse_m_range(args.m_range):
                cfg = PartitionConfig(m=m, partitions=args.partitions)
                reports.append(run_partition(cfg, devices, protocol, **seed_kw))
        else:  # mandelbrot
            edge = args.size or 256
            if args.async_write:
                sizes = sorted({max(16, edge // 4), max(16, edge // 2), edge})
                series, _events = run_mandelbrot_series(
                    sizes, pool[0], protocol, async_write=True, out_dir=args.out_dir
                )
                reports.extend(series)
            else:
                cfg = MandelbrotConfig(width=edge, height=edge)
                path = Path(args.out_dir) / f"mandelbrot_{edge}x{edge}.ppm"
                reports.append(run_mandelbrot(cfg, pool[0], protocol, image_path=path))

        for report in reports:
            print(_report_line(report), flush=True)
            if args.csv:
                append_csv(args.csv, report)
    return 0


if __name__ == "__main__":
    sys.exit(bench_main())
