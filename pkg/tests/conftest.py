import numpy as np
import pytest

from skewdp.graph import build_graph, make_dataset


def random_graph(rng, m_max=6, n_max=12, p=None):
    """Small random graph with m <= n."""
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(1, min(m_max, n) + 1))
    p = rng.uniform(0.2, 0.9) if p is None else p
    mask = rng.random((m, n)) < p
    return build_graph(np.argwhere(mask), m, n)


def random_dataset(rng, m_max=5, n_max=10, d_max=4, nonempty=False):
    while True:
        g = random_graph(rng, m_max, n_max)
        if not nonempty or np.all(g.task_counts > 0):
            break
    d = int(rng.integers(1, d_max + 1))
    x = rng.standard_normal((g.num_edges, d))
    y = rng.standard_normal(g.num_edges)
    edges = np.stack([g.tasks, g.users], axis=1)
    return make_dataset(edges, x, y, g.m, g.n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record a PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number: int, name: str, ok: bool, detail: str = ""):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {name}" + (
            f"  ({detail})" if detail else "")
        _VERDICTS.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
