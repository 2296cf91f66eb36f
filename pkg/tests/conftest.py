import numpy as np
import pytest

from hyperrec.data import Dataset, InteractionGraph, Statement, StatementStore


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def toy_dataset() -> Dataset:
    """4 users, 5 items, 6 statements (two with qualifiers, one item without statements)."""
    edges = [(0, 0), (0, 1), (1, 1), (1, 2), (2, 2), (2, 3), (3, 3), (3, 4), (0, 4)]
    graph = InteractionGraph.from_edges(edges, 4, 5)
    statements = [
        Statement(0, 0, 5, ((2, 7),)),
        Statement(0, 1, 6),
        Statement(1, 0, 5),
        Statement(2, 1, 6, ((2, 8), (3, 7))),
        Statement(3, 0, 8),
        Statement(1, 3, 7),
    ]
    store = StatementStore.from_statements(statements)
    alignment = {0: 0, 1: 1, 2: 2, 3: 3, 4: 4}
    return Dataset.build(graph, store, alignment)


@pytest.fixture
def toy():
    return toy_dataset()


# acceptance criterion -> (passed, detail); filled by test_acceptance, printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
