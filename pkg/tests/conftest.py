import pytest

from offloadrt import Runtime
from offloadrt.transport.daemon import serve


@pytest.fixture
def sim_runtime():
    with Runtime(backend="sim") as rt:
        yield rt


@pytest.fixture
def host_runtime():
    with Runtime(backend="host") as rt:
        yield rt


@pytest.fixture
def sim_device(sim_runtime):
    return sim_runtime.get_all_devices().get()[0]


@pytest.fixture
def host_device(host_runtime):
    return host_runtime.get_all_devices().get()[0]


@pytest.fixture
def loopback():
    """(client runtime, daemon) with a sim daemon at locality 9."""
    daemon_rt = Runtime(backend="sim", devices=2, locality_id=9)
    daemon = serve("127.0.0.1:0", daemon_rt)
    client = Runtime(backend="sim", devices=1)
    client.connect(daemon.address)
    yield client, daemon
    client.close()
    daemon.stop()
    daemon_rt.close()


@pytest.fixture
def host_loopback():
    """(client runtime, daemon) with a host-backend daemon at locality 11."""
    daemon_rt = Runtime(backend="host", devices=1, locality_id=11)
    daemon = serve("127.0.0.1:0", daemon_rt)
    client = Runtime(backend="host", devices=1)
    client.connect(daemon.address)
    yield client, daemon
    client.close()
    daemon.stop()
    daemon_rt.close()
