import contextlib

import numpy as np
import pytest

from mindstores.embedding import Embedder, EmbedderConfig, EmbeddingVector
from mindstores.store import ExperienceStore
from mindstores.world import World, load_recipes, load_tasks


@pytest.fixture(scope="session")
def table():
    return load_recipes()


@pytest.fixture(scope="session")
def tasks(table):
    return load_tasks(None, table)


@pytest.fixture
def world(table):
    return World(table)


@pytest.fixture
def small_store():
    return ExperienceStore(64, Embedder(EmbedderConfig(dim=64)))


def unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    return EmbeddingVector(v / n if n else v)


def random_store(rng, n, dim=32, outcome="ok|true|done"):
    """Store of ``n`` tuples with random unit vectors; texts are placeholders."""
    store = ExperienceStore(dim, Embedder(EmbedderConfig(dim=dim)))
    zero = EmbeddingVector.zeros(dim)
    from mindstores.store import ExperienceTuple
    for i in range(n):
        vecs = [unit(rng.standard_normal(dim)) for _ in range(3)]
        store.add(ExperienceTuple(f"s{i}", f"t{i}", f"p{i}", outcome, True, *vecs, zero, created_at=i))
    return store


@pytest.fixture
def criterion(request):
    """Context manager that logs one PASS/FAIL line per acceptance criterion."""
    lines = request.config.stash.setdefault(_LINES, [])

    @contextlib.contextmanager
    def check(number, label):
        try:
            yield
        except BaseException:
            lines.append(f"[FAIL] criterion {number}: {label}")
            raise
        lines.append(f"[PASS] criterion {number}: {label}")

    return check


_LINES = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
