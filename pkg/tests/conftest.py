from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hawkes_cpd.events import EventStream

settings.register_profile("default", max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("stress", max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DATA = Path(__file__).parent / "data"


def random_spd(rng, m, scale=1.0):
    A = rng.normal(size=(m, m))
    return scale * (A @ A.T) / m + 0.1 * np.eye(m)


def random_stream(rng, m, T, rate):
    """Independent uniform event times; distinct within a subject with probability one."""
    events = []
    for _ in range(m):
        n = rng.poisson(rate * T)
        events.append(np.sort(rng.uniform(0, T, n)))
    return EventStream(T, tuple(events))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def price_fixture():
    return DATA / "prices_3inst.csv"


def regime_scenario(seed=0):
    """Three subjects whose strong excitatory pair moves from (0, 1) to (1, 2)
    halfway through. Self-inhibition keeps every signed Laplacian full rank."""
    from hawkes_cpd.simulation import HawkesParams, Scenario

    segments = []
    for pair in ((0, 1), (1, 2)):
        H = np.full((3, 3), 0.05)
        H[pair] = H[pair[::-1]] = 0.4
        np.fill_diagonal(H, -0.2)
        segments.append((30000.0, HawkesParams([0.5] * 3, H, 1.0)))
    return Scenario(tuple(segments), seed)


@pytest.fixture(scope="session")
def regime_stream():
    from hawkes_cpd.simulation import simulate_scenario

    stream, _ = simulate_scenario(regime_scenario())
    return stream


@pytest.fixture(scope="session")
def regime_csv(regime_stream, tmp_path_factory):
    from hawkes_cpd.events import save_events

    path = tmp_path_factory.mktemp("regime") / "events.csv"
    save_events(regime_stream, path)
    return path


_ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion():
    """Record one pass/fail line for the terminal summary and return the verdict."""

    def record(number, name, passed, detail):
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {name} ({detail})"
        _ACCEPTANCE.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
