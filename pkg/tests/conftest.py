import json
from pathlib import Path

import pytest

from dronechain.crypto import derive_seed, get_provider

GOLDEN = Path(__file__).parent / "golden"
SCENARIOS = Path(__file__).parent.parent / "src" / "dronechain" / "scenarios"


def golden(name: str):
    return json.loads((GOLDEN / name).read_text())


def keypair(provider, *label):
    return provider.generate_keypair(derive_seed("test", *label))


@pytest.fixture(params=["ed-curve", "mock"])
def provider(request):
    return get_provider(request.param)


@pytest.fixture
def mock():
    return get_provider("mock")


@pytest.fixture
def ed():
    return get_provider("ed-curve")


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
