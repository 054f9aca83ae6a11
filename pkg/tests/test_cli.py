import csv
import signal
import socket
import subprocess
import sys
import time

import pytest

from offloadrt.cli import bench_main
from offloadrt.transport.client import connect


def free_port() -> int:
    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()
    return port


def test_bench_stencil_to_csv(tmp_path, capsys):
    path = tmp_path / "report.csv"
    code = bench_main(
        ["stencil", "--backend", "sim", "--size", "4096", "--iterations", "3", "--csv", str(path)]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "stencil" in out and "validated=True" in out
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "benchmark"
    assert rows[1][0] == "stencil"
    assert rows[1][6] == "1"


def test_bench_partition_m_range(tmp_path, capsys):
    path = tmp_path / "p.csv"
    code = bench_main(
        [
            "partition", "--backend", "sim", "--devices", "2", "--partitions", "3",
            "--m-range", "1..2", "--iterations", "2", "--csv", str(path),
        ]
    )
    assert code == 0
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 3  # header + m=1 + m=2
    assert rows[1][3] == "3"  # partitions column


def test_bench_sum(capsys):
    assert bench_main(["sum", "--backend", "sim", "--size", "512", "--iterations", "2"]) == 0
    assert "sum" in capsys.readouterr().out


def test_bench_mandelbrot_writes_image(tmp_path, capsys):
    code = bench_main(
        [
            "mandelbrot", "--backend", "sim", "--size", "32",
            "--iterations", "2", "--out-dir", str(tmp_path),
        ]
    )
    assert code == 0
    assert (tmp_path / "mandelbrot_32x32.ppm").exists()


def test_bench_honours_sim_profile_file(tmp_path, capsys):
    profile = tmp_path / "slow.profile"
    profile.write_text("copy_latency=50\nbandwidth=10\nkernel_latency=100\nper_item_cost=1\n")
    code = bench_main(
        [
            "sum", "--backend", "sim", "--size", "64",
            "--iterations", "2", "--sim-profile", str(profile),
        ]
    )
    assert code == 0
    line = [l for l in capsys.readouterr().out.splitlines() if l.startswith("sum")][0]
    # 64 u32 writes at 10 B/us under 50 us latency make the mean visibly large
    mean_ms = float(line.split("mean=")[1].split()[0])
    assert mean_ms > 0.1


def test_bench_mandelbrot_async_write_series(tmp_path):
    code = bench_main(
        [
            "mandelbrot", "--backend", "sim", "--size", "64", "--async-write",
            "--iterations", "2", "--out-dir", str(tmp_path),
        ]
    )
    assert code == 0
    assert (tmp_path / "mandelbrot_64x64.ppm").exists()


@pytest.fixture
def daemon_process():
    port = free_port()
    proc = subprocess.Popen(
        [
            sys.executable, "-c",
            "from offloadrt.cli import offloadd_main; import sys; "
            f"sys.exit(offloadd_main(['--listen', '127.0.0.1:{port}', "
            "'--backend', 'sim', '--locality-id', '77']))",
        ],
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
        text=True,
    )
    deadline = time.time() + 20
    while time.time() < deadline:
        try:
            probe = connect(f"127.0.0.1:{port}")
            probe.close()
            break
        except OSError:
            if proc.poll() is not None:
                raise RuntimeError(f"daemon exited early: {proc.stdout.read()}")
            time.sleep(0.1)
    else:
        proc.kill()
        raise RuntimeError("daemon never came up")
    yield port
    proc.send_signal(signal.SIGTERM)
    try:
        proc.wait(timeout=10)
    except subprocess.TimeoutExpired:
        proc.kill()


def test_offloadd_serves_bench_client(daemon_process, tmp_path, capsys):
    port = daemon_process
    path = tmp_path / "remote.csv"
    code = bench_main(
        [
            "sum", "--backend", "sim", "--devices", "0",
            "--remote", f"127.0.0.1:{port}",
            "--size", "256", "--iterations", "2", "--csv", str(path),
        ]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "connected to locality 77" in out
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[1][1] == "remote"  # backend column reflects the remote device
