import numpy as np
import pytest

from darkprobe.ingest import ProbeBatch


def random_corpus(seed: int, n: int = 10_000, n_src: int = 300, n_ports: int = 40, days: float = 10.0) -> ProbeBatch:
    """Unordered random events: skewed sources and ports over ``days``."""
    rng = np.random.default_rng(seed)
    src = (0x0A000000 + rng.zipf(1.5, n) % n_src).astype(np.uint32)
    ports = np.array([23, 22, 80, 443, 2323, 3306, 1433, 445, 8080, 2222] + list(range(5000, 5000 + n_ports - 10)))
    port = ports[rng.zipf(1.3, n) % n_ports]
    ts = 1.4e9 + rng.random(n) * days * 86400
    return ProbeBatch(ts, src, port)


@pytest.fixture
def corpus():
    return random_corpus(0)


# lines appended by the acceptance suite, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
