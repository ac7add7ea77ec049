import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dynadp.core import Domain, UpdateEvent

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_dynamic_stream(rng: np.random.Generator, length: int, domain: int,
                          p_noop: float = 0.1, p_insert: float = 0.55) -> list[UpdateEvent]:
    """Valid fully-dynamic stream: deletions always pick a live copy."""
    live: list[int] = []
    out = []
    for t in range(1, length + 1):
        u = rng.random()
        if u < p_noop:
            out.append(UpdateEvent.noop(t))
        elif u < p_noop + p_insert or not live:
            x = int(rng.integers(domain))
            live.append(x)
            out.append(UpdateEvent.ins(t, x))
        else:
            pos = int(rng.integers(len(live)))
            live[pos], live[-1] = live[-1], live[pos]
            out.append(UpdateEvent.delete(t, live.pop()))
    return out


@pytest.fixture
def dom32():
    return Domain(32)


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
