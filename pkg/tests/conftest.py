import pytest

from chimera.ghost.mock import MockConfig, serve_mock
from chimera.ghost.schema import DeviceEndpoint

ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def mock_factory():
    servers = []

    def start(poll_interval_s=3.0, **cfg):
        srv = serve_mock(MockConfig(**cfg))
        servers.append(srv)
        ep = DeviceEndpoint(srv.url, poll_interval_s=poll_interval_s, timeout_s=5.0)
        return srv, ep

    yield start
    for srv in servers:
        srv.stop()


@pytest.fixture
def acceptance():
    """Record a criterion outcome for the end-of-run summary."""

    def record(key: str, ok: bool, detail: str):
        ACCEPTANCE_RESULTS[key] = (ok, detail)
        assert ok, f"{key}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k.split()[0][2:])):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")
